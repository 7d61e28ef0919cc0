"""Inclusion and exclusion proofs against an MST root."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass

from atnet import codec
from atnet.codec import Cid
from atnet.repo import mst

INCLUSION = "inclusion"
EXCLUSION = "exclusion"


@dataclass(frozen=True)
class Proof:
    kind: str
    target: str
    blocks: tuple[bytes, ...]
    record: bytes | None = None

    def to_bytes(self) -> bytes:
        return codec.encode(
            {
                "kind": self.kind,
                "target": self.target,
                "blocks": list(self.blocks),
                "record": self.record,
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Proof:
        raw = codec.decode(data)
        return cls(raw["kind"], raw["target"], tuple(raw["blocks"]), raw["record"])


def build_proof(root: mst.Node, key: str, record: bytes | None = None) -> Proof:
    path = mst.search_path(root, key)
    present = mst.get(root, key) is not None
    return Proof(
        INCLUSION if present else EXCLUSION,
        key,
        tuple(node.block for node in path),
        record if present else None,
    )


def verify_proof(root: Cid, proof: Proof) -> bool:
    """Check a proof using nothing but its own blocks."""
    try:
        return _verify(root, proof)
    except Exception:
        return False


def _verify(root: Cid, proof: Proof) -> bool:
    if proof.kind not in (INCLUSION, EXCLUSION) or not proof.blocks:
        return False
    if proof.kind == EXCLUSION and proof.record is not None:
        return False
    expected_cid = root
    expected_layer: int | None = None
    last = len(proof.blocks) - 1
    for index, block in enumerate(proof.blocks):
        if codec.cid_of(block) != expected_cid:
            return False
        keys, values, links = mst.parse_node(block)
        layer = mst.node_layer(keys, expected_layer)
        if layer < 0:
            return False
        i = bisect_left(keys, proof.target)
        if i < len(keys) and keys[i] == proof.target:
            if index != last or proof.kind != INCLUSION:
                return False
            return proof.record is not None and codec.cid_of(proof.record) == values[i]
        child = links[i]
        if child is None:
            return index == last and proof.kind == EXCLUSION
        expected_cid = child
        expected_layer = layer - 1
    return False


def check_key(root: Cid, key: str, blocks, expect: Cid | None) -> bool:
    """Walk ``blocks`` (a CID-keyed mapping) and confirm ``key`` maps to ``expect``.

    ``expect=None`` asserts absence. Used to verify event operations against
    the blocks carried alongside a commit.
    """
    try:
        return _check_key(root, key, blocks, expect)
    except Exception:
        return False


def _check_key(root: Cid, key: str, blocks, expect: Cid | None) -> bool:
    cid: Cid | None = root
    layer: int | None = None
    while cid is not None:
        block = blocks.get(cid)
        if block is None or codec.cid_of(block) != cid:
            return False
        keys, values, links = mst.parse_node(block)
        layer = mst.node_layer(keys, layer) - 1
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            return expect is not None and values[i] == expect
        cid = links[i]
    return expect is None
