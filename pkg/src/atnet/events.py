"""Repository change events and their stateless verification."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from atnet import codec
from atnet.codec import Cid
from atnet.repo.archive import CorruptArchive, read_car
from atnet.repo.proof import check_key
from atnet.repo.repository import Commit, verify_commit

CREATE = "create"
UPDATE = "update"
DELETE = "delete"

BAD_SIGNATURE = "bad-signature"
BAD_BLOCKS = "bad-blocks"
STALE_PREV = "stale-prev"
POLICY = "policy"
DUPLICATE = "duplicate"


@dataclass(frozen=True)
class EventOp:
    action: str
    path: str
    cid: Cid | None

    def to_value(self) -> dict[str, Any]:
        return {"action": self.action, "path": self.path, "cid": self.cid}


@dataclass(frozen=True)
class RepoEvent:
    """One commit as announced on a PDS stream or the relay firehose.

    ``blocks`` is a CAR holding the commit, the MST nodes on the path to every
    touched key, and the new record blocks. ``verified`` is set by the relay.
    """

    seq: int
    did: str
    commit: Cid
    prev: Cid | None
    ops: tuple[EventOp, ...]
    blocks: bytes
    time: int
    verified: bool = False
    _parsed: dict = field(default_factory=dict, compare=False, repr=False)

    def to_value(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "did": self.did,
            "commit": self.commit,
            "prev": self.prev,
            "ops": [op.to_value() for op in self.ops],
            "blocks": self.blocks,
            "time": self.time,
            "verified": self.verified,
        }

    def to_bytes(self) -> bytes:
        return codec.encode(self.to_value())

    @classmethod
    def from_value(cls, raw: dict[str, Any]) -> RepoEvent:
        ops = tuple(EventOp(o["action"], o["path"], o["cid"]) for o in raw["ops"])
        return cls(raw["seq"], raw["did"], raw["commit"], raw["prev"], ops, raw["blocks"],
                   raw["time"], raw.get("verified", False))

    @classmethod
    def from_bytes(cls, data: bytes) -> RepoEvent:
        return cls.from_value(codec.decode(data))

    def block_map(self) -> dict[Cid, bytes]:
        """Carried blocks, hash-checked. Raises CorruptArchive on a bad block."""
        if "blocks" not in self._parsed:
            root, blocks = read_car(self.blocks)
            if root != self.commit:
                raise CorruptArchive("event blocks are rooted at a different commit")
            self._parsed["blocks"] = blocks
        return self._parsed["blocks"]

    def record(self, op: EventOp) -> Any:
        """Decoded record for a create/update op, from the carried blocks."""
        return codec.decode(self.block_map()[op.cid])


FirehoseEvent = RepoEvent


def event_commit(event: RepoEvent) -> Commit:
    return Commit.from_bytes(event.block_map()[event.commit])


def verify_event(event: RepoEvent, signing_key: str) -> str | None:
    """Return ``None`` if the event checks out, else a drop reason.

    Needs only the event itself and the account's current signing key.
    """
    try:
        blocks = event.block_map()
        commit = event_commit(event)
    except (CorruptArchive, codec.CodecError, ValueError, KeyError):
        return BAD_BLOCKS
    # event.prev is the state the ops are relative to; a re-crawl event may
    # span several commits, so it need not equal commit.prev
    if commit.did != event.did:
        return BAD_BLOCKS
    if not verify_commit(commit, signing_key):
        return BAD_SIGNATURE
    if not ops_match_blocks(commit.data, event.ops, blocks):
        return BAD_BLOCKS
    return None


def ops_match_blocks(root: Cid, ops, blocks: Mapping[Cid, bytes]) -> bool:
    for op in ops:
        if op.action == DELETE:
            if op.cid is not None or not check_key(root, op.path, blocks, None):
                return False
        elif op.action in (CREATE, UPDATE):
            if op.cid is None or op.cid not in blocks:
                return False
            if not check_key(root, op.path, blocks, op.cid):
                return False
        else:
            return False
    return True
