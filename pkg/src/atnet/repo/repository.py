"""Signed repositories: a block store, an MST of records, and a commit chain."""

from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import Any, Protocol

from atnet import codec
from atnet.codec import Cid
from atnet.crypto import verify_signature
from atnet.repo import mst
from atnet.repo.proof import Proof, build_proof

COMMIT_VERSION = 3


class RepoError(Exception):
    pass


class NotFound(RepoError, KeyError):
    pass


class PathNotFound(RepoError, KeyError):
    pass


class StorageFailure(RepoError):
    pass


class Signer(Protocol):
    public_key: str

    def sign(self, data: bytes) -> bytes: ...


class BlockStore:
    """Append-only content-addressed block storage.

    ``fail_writes`` is a fault-injection switch for exercising atomicity.
    """

    def __init__(self, blocks: dict[Cid, bytes] | None = None):
        self._blocks: dict[Cid, bytes] = dict(blocks or {})
        self.fail_writes = False

    def __contains__(self, cid) -> bool:
        return cid in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def get(self, cid: Cid, default=None):
        return self._blocks.get(cid, default)

    def __getitem__(self, cid: Cid) -> bytes:
        try:
            return self._blocks[cid]
        except KeyError:
            raise mst.MissingBlock(cid) from None

    def put(self, data: bytes, codec_id: int = codec.DAG_CBOR) -> Cid:
        cid = codec.cid_of(data, codec_id)
        self.put_many({cid: data})
        return cid

    def put_many(self, blocks: dict[Cid, bytes]) -> None:
        if self.fail_writes:
            raise StorageFailure("block store rejected write")
        for cid, data in blocks.items():
            self._blocks.setdefault(cid, data)

    def items(self):
        return self._blocks.items()


@dataclass(frozen=True)
class Commit:
    did: str
    data: Cid
    prev: Cid | None
    sig: bytes
    version: int = COMMIT_VERSION

    def unsigned(self) -> dict[str, Any]:
        return {"did": self.did, "version": self.version, "prev": self.prev, "data": self.data}

    def to_bytes(self) -> bytes:
        return codec.encode({**self.unsigned(), "sig": self.sig})

    @property
    def cid(self) -> Cid:
        return codec.cid_of(self.to_bytes())

    @classmethod
    def sign(cls, did: str, data: Cid, prev: Cid | None, signer: Signer) -> Commit:
        unsigned = cls(did, data, prev, b"")
        sig = signer.sign(codec.encode(unsigned.unsigned()))
        return cls(did, data, prev, sig)

    @classmethod
    def from_bytes(cls, block: bytes) -> Commit:
        raw = codec.decode(block)
        if not isinstance(raw, dict) or set(raw) != {"did", "version", "prev", "data", "sig"}:
            raise ValueError("not a commit block")
        did, version, prev, data, sig = raw["did"], raw["version"], raw["prev"], raw["data"], raw["sig"]
        if not isinstance(did, str) or not isinstance(data, Cid) or not isinstance(sig, bytes):
            raise ValueError("malformed commit fields")
        if prev is not None and not isinstance(prev, Cid):
            raise ValueError("malformed commit prev")
        if version != COMMIT_VERSION:
            raise ValueError(f"unsupported commit version {version}")
        return cls(did, data, prev, sig, version)


def verify_commit(commit: Commit, public_key: str) -> bool:
    return verify_signature(public_key, codec.encode(commit.unsigned()), commit.sig)


@dataclass(frozen=True)
class Put:
    path: str
    record: Any


@dataclass(frozen=True)
class Delete:
    path: str


@dataclass(frozen=True)
class AppliedOp:
    action: str  # create | update | delete
    path: str
    cid: Cid | None
    prev: Cid | None


class Repository:
    """One account's repository. Not thread-safe: callers serialize writes."""

    def __init__(self, did: str, store: BlockStore | None = None):
        self.did = did
        self.store = store if store is not None else BlockStore()
        self.root: mst.Node = mst.EMPTY
        self.commit: Commit | None = None
        self.head: Cid | None = None
        self.last_ops: list[AppliedOp] = []
        # MST nodes of the current tree that the previous tree lacked
        self.last_blocks: dict[Cid, bytes] = {}

    @classmethod
    def create(cls, did: str, signer: Signer, store: BlockStore | None = None) -> Repository:
        repo = cls(did, store)
        repo.apply_writes([], signer)
        return repo

    @classmethod
    def load(cls, did: str, store: BlockStore, head: Cid) -> Repository:
        commit = Commit.from_bytes(store[head])
        if commit.did != did:
            raise RepoError(f"commit belongs to {commit.did}, not {did}")
        repo = cls(did, store)
        repo.root = mst.load(commit.data, store)
        repo.commit = commit
        repo.head = head
        return repo

    @property
    def data_root(self) -> Cid:
        return self.root.cid

    def apply_writes(self, writes: Iterable[Put | Delete], signer: Signer) -> Commit:
        """Apply all writes and sign a new commit, or change nothing."""
        root = self.root
        staged: dict[Cid, bytes] = {}
        ops: list[AppliedOp] = []
        for write in writes:
            mst.validate_key(write.path)
            old = mst.get(root, write.path)
            if isinstance(write, Put):
                block = codec.encode(write.record)
                cid = codec.cid_of(block)
                staged[cid] = block
                root = mst.insert(root, write.path, cid)
                ops.append(AppliedOp("create" if old is None else "update", write.path, cid, old))
            elif isinstance(write, Delete):
                if old is None:
                    raise PathNotFound(write.path)
                root = mst.delete(root, write.path)
                ops.append(AppliedOp("delete", write.path, None, old))
            else:
                raise TypeError(f"unknown write {write!r}")
        # before the first commit nothing is persisted, not even the empty root
        previous = {node.cid for node in mst.nodes(self.root)} if self.head is not None else set()
        fresh = {node.cid: node.block for node in mst.nodes(root, skip=previous)}
        staged.update(fresh)
        commit = Commit.sign(self.did, root.cid, self.head, signer)
        block = commit.to_bytes()
        staged[codec.cid_of(block)] = block
        self.store.put_many(staged)
        self.root = root
        self.commit = commit
        self.head = codec.cid_of(block)
        self.last_ops = ops
        self.last_blocks = {cid: staged[cid] for cid in fresh}
        return commit

    def get_record(self, path: str) -> tuple[Any, Cid]:
        cid = mst.get(self.root, path)
        if cid is None:
            raise NotFound(path)
        return codec.decode(self.store[cid]), cid

    def record_cids(self) -> Iterator[tuple[str, Cid]]:
        return mst.walk(self.root)

    def records(self) -> dict[str, Any]:
        return {path: codec.decode(self.store[cid]) for path, cid in self.record_cids()}

    def prove(self, path: str) -> Proof:
        cid = mst.get(self.root, path)
        record = self.store[cid] if cid is not None else None
        return build_proof(self.root, path, record)

    def reachable_blocks(self) -> Iterator[tuple[Cid, bytes]]:
        """Commit block, then MST nodes pre-order, then record blocks."""
        if self.head is None:
            return
        yield self.head, self.store[self.head]
        for node in mst.nodes(self.root):
            yield node.cid, node.block
        seen = set()
        for _, cid in self.record_cids():
            if cid not in seen:
                seen.add(cid)
                yield cid, self.store[cid]

    def commit_blocks(self) -> dict[Cid, bytes]:
        """What a subscriber holding the previous tree needs for the last commit:
        the commit, every new MST node, and the touched keys' search paths and records."""
        blocks = self.proof_blocks(op.path for op in self.last_ops)
        blocks.update(self.last_blocks)
        return blocks

    def proof_blocks(self, paths: Iterable[str]) -> dict[Cid, bytes]:
        """Blocks letting a verifier check each path against the current commit."""
        blocks: dict[Cid, bytes] = {}
        if self.head is not None:
            blocks[self.head] = self.store[self.head]
        blocks[self.root.cid] = self.root.block
        for path in paths:
            for node in mst.search_path(self.root, path):
                blocks[node.cid] = node.block
            cid = mst.get(self.root, path)
            if cid is not None:
                blocks[cid] = self.store[cid]
        return blocks
