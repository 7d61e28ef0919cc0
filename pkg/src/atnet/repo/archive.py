"""Repository archives: CAR v1 framing of every block reachable from the head."""

from __future__ import annotations

from atnet import codec
from atnet.codec import Cid
from atnet.repo import mst
from atnet.repo.repository import BlockStore, Commit, RepoError, Repository, verify_commit


class CorruptArchive(RepoError):
    pass


class HashMismatch(CorruptArchive):
    def __init__(self, cid: Cid):
        super().__init__(f"block does not hash to {cid}")
        self.cid = cid


def write_car(root: Cid, blocks) -> bytes:
    header = codec.encode({"version": 1, "roots": [root]})
    out = bytearray(codec.encode_varint(len(header)))
    out += header
    for cid, data in blocks:
        raw = cid.to_bytes()
        out += codec.encode_varint(len(raw) + len(data))
        out += raw
        out += data
    return bytes(out)


def read_car(data: bytes) -> tuple[Cid, dict[Cid, bytes]]:
    """Parse frames and check that each block hashes to its CID."""
    try:
        length, pos = codec.decode_varint(data, 0)
        header = codec.decode(data[pos : pos + length])
        pos += length
    except codec.CodecError as exc:
        raise CorruptArchive(f"bad archive header: {exc}") from exc
    if (
        not isinstance(header, dict)
        or header.get("version") != 1
        or not isinstance(header.get("roots"), list)
        or len(header["roots"]) != 1
        or not isinstance(header["roots"][0], Cid)
    ):
        raise CorruptArchive("archive header must name exactly one root")
    blocks: dict[Cid, bytes] = {}
    while pos < len(data):
        try:
            size, pos = codec.decode_varint(data, pos)
            end = pos + size
            if end > len(data):
                raise CorruptArchive("truncated frame")
            cid, body_start = Cid.read(data, pos)
        except codec.CodecError as exc:
            raise CorruptArchive(f"bad frame: {exc}") from exc
        if body_start > end:
            raise CorruptArchive("frame shorter than its CID")
        block = bytes(data[body_start:end])
        if codec.cid_of(block, cid.codec) != cid:
            raise HashMismatch(cid)
        blocks[cid] = block
        pos = end
    return header["roots"][0], blocks


def export_archive(repo: Repository) -> bytes:
    if repo.head is None:
        raise RepoError("repository has no commits")
    return write_car(repo.head, repo.reachable_blocks())


def import_archive(data: bytes, did: str | None = None, public_key: str | None = None) -> Repository:
    """Rebuild a repository from an archive.

    Every block is hash-checked, every MST node and record must be present,
    and the commit must be well formed. When ``public_key`` is given the
    commit signature is checked too.
    """
    root, blocks = read_car(data)
    if root not in blocks:
        raise CorruptArchive(f"missing commit block {root}")
    try:
        commit = Commit.from_bytes(blocks[root])
    except (ValueError, codec.CodecError) as exc:
        raise CorruptArchive(f"bad commit: {exc}") from exc
    if did is not None and commit.did != did:
        raise CorruptArchive(f"archive is for {commit.did}, expected {did}")
    if public_key is not None and not verify_commit(commit, public_key):
        raise CorruptArchive("commit signature does not verify")
    store = BlockStore(blocks)
    try:
        repo = Repository.load(commit.did, store, root)
    except mst.MissingBlock as exc:
        raise CorruptArchive(f"missing block {exc.cid}") from exc
    except (mst.MalformedNode, codec.CodecError) as exc:
        raise CorruptArchive(f"bad tree: {exc}") from exc
    for path, cid in repo.record_cids():
        if cid not in store:
            raise CorruptArchive(f"missing record block {cid} for {path}")
    return repo
