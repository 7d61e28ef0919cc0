"""The did:plc directory: an append-only, mostly untrusted operation log server."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from atnet.codec import Cid
from atnet.identity import (
    DidDocument,
    PlcLogError,
    PlcOperation,
    plc_derive_did,
    plc_validate_log,
)

logger = logging.getLogger(__name__)

BAD_SIGNATURE = "bad-signature"
WRONG_DID = "wrong-did"
STALE_PREV = "stale-prev"
UNKNOWN_DID = "unknown-did"

HONEST = "honest"
OMIT_TAIL = "omit-tail"
SERVE_FORK = "serve-fork"


class UnknownDid(KeyError):
    pass


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


class PlcDirectory:
    """Accepts signed operations and serves per-DID audit logs.

    ``mode`` switches on adversarial behaviour for testing the client-side
    guarantees: ``omit-tail`` drops the last ``omit`` operations from every
    response, ``serve-fork`` answers with a recorded fork branch instead of
    the accepted chain.
    """

    def __init__(self, log_path: str | Path | None = None):
        self._logs: dict[str, list[PlcOperation]] = {}
        self.forks: dict[str, list[PlcOperation]] = {}
        self.mode = HONEST
        self.omit = 1
        self.running_hash = hashlib.sha256(b"plc").hexdigest()
        self._lock = threading.Lock()
        self._log_path = Path(log_path) if log_path is not None else None
        if self._log_path is not None and self._log_path.exists():
            self._replay()

    def _replay(self) -> None:
        for line in self._log_path.read_text().splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            op = PlcOperation.from_bytes(base64.b64decode(entry["op"]))
            result = self._apply(entry["did"], op)
            if not result.accepted:
                raise RuntimeError(f"directory log replay rejected an op for {entry['did']}: {result.reason}")

    def _persist(self, did: str, op: PlcOperation) -> None:
        if self._log_path is None:
            return
        line = json.dumps({"did": did, "op": base64.b64encode(op.to_bytes()).decode()})
        with self._log_path.open("a") as fh:
            fh.write(line + "\n")

    def submit_operation(self, did: str, op: PlcOperation) -> SubmitResult:
        with self._lock:
            result = self._apply(did, op)
            if result.accepted:
                self._persist(did, op)
            else:
                logger.info("rejected operation for %s: %s", did, result.reason)
            return result

    def _apply(self, did: str, op: PlcOperation) -> SubmitResult:
        chain = self._logs.get(did)
        if op.prev is None:
            if chain is not None:
                return SubmitResult(False, STALE_PREV)
            if plc_derive_did(op) != did:
                return SubmitResult(False, WRONG_DID)
            try:
                plc_validate_log([op], did)
            except PlcLogError:
                return SubmitResult(False, BAD_SIGNATURE)
            self._logs[did] = [op]
        else:
            if chain is None:
                return SubmitResult(False, UNKNOWN_DID)
            head = chain[-1]
            if op.prev != head.cid:
                parent = self._find(chain, op.prev)
                if parent is not None and op.signed_by(parent.rotation_keys):
                    self.forks.setdefault(did, []).append(op)
                return SubmitResult(False, STALE_PREV)
            if not op.signed_by(head.rotation_keys):
                return SubmitResult(False, BAD_SIGNATURE)
            chain.append(op)
        self.running_hash = hashlib.sha256(
            bytes.fromhex(self.running_hash) + op.to_bytes()
        ).hexdigest()
        return SubmitResult(True)

    @staticmethod
    def _find(chain: list[PlcOperation], cid: Cid) -> PlcOperation | None:
        for op in chain:
            if op.cid == cid:
                return op
        return None

    def accepted_log(self, did: str) -> list[PlcOperation]:
        """The true accepted chain, regardless of adversarial mode."""
        if did not in self._logs:
            raise UnknownDid(did)
        return list(self._logs[did])

    def get_audit_log(self, did: str) -> list[PlcOperation]:
        chain = self.accepted_log(did)
        if self.mode == OMIT_TAIL:
            return chain[: max(1, len(chain) - self.omit)]
        if self.mode == SERVE_FORK and self.forks.get(did):
            fork = self.forks[did][-1]
            cut = next(i for i, op in enumerate(chain) if op.cid == fork.prev)
            return chain[: cut + 1] + [fork]
        return chain

    def get_document(self, did: str) -> DidDocument:
        return plc_validate_log(self.get_audit_log(did), did)

    def dids(self) -> list[str]:
        return list(self._logs)
