from atnet.repo.archive import CorruptArchive, HashMismatch, export_archive, import_archive
from atnet.repo.diff import Change, RepoDiff, diff
from atnet.repo.mst import InvalidKey, MissingBlock, key_layer
from atnet.repo.proof import EXCLUSION, INCLUSION, Proof, verify_proof
from atnet.repo.repository import (
    AppliedOp,
    BlockStore,
    Commit,
    Delete,
    NotFound,
    PathNotFound,
    Put,
    Repository,
    StorageFailure,
    verify_commit,
)


def apply_writes(repo: Repository, writes, signing_key) -> Commit:
    return repo.apply_writes(writes, signing_key)


def get_record(repo: Repository, path: str):
    return repo.get_record(path)


def prove(repo: Repository, path: str) -> Proof:
    return repo.prove(path)


__all__ = [
    "AppliedOp",
    "BlockStore",
    "Change",
    "Commit",
    "CorruptArchive",
    "Delete",
    "EXCLUSION",
    "HashMismatch",
    "INCLUSION",
    "InvalidKey",
    "MissingBlock",
    "NotFound",
    "PathNotFound",
    "Proof",
    "Put",
    "RepoDiff",
    "Repository",
    "StorageFailure",
    "apply_writes",
    "diff",
    "export_archive",
    "get_record",
    "import_archive",
    "key_layer",
    "prove",
    "verify_commit",
    "verify_proof",
]
