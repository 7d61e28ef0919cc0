"""Personal Data Server: hosts accounts, repositories and blobs."""

from __future__ import annotations

import hashlib
import hmac
import logging
import random
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Any

from atnet import codec, lexicon
from atnet.clock import VirtualClock
from atnet.codec import Cid
from atnet.crypto import Keypair
from atnet.events import RepoEvent, EventOp
from atnet.identity import (
    DidDocument,
    IdentityError,
    PlcOperation,
    normalize_handle,
    plc_derive_did,
    resolve_did,
)
from atnet.net import PLC_URL, Network, Unreachable, host_of
from atnet.repo import (
    CorruptArchive,
    Delete,
    NotFound,
    PathNotFound,
    Put,
    Repository,
    export_archive,
    import_archive,
    verify_commit,
)
from atnet.repo.archive import write_car
from atnet.stream import EventLog, Subscription

logger = logging.getLogger(__name__)

ACTIVE = "active"
DEACTIVATED = "deactivated"
MIGRATED_AWAY = "migrated-away"

_TID_ALPHABET = "234567abcdefghijklmnopqrstuvwxyz"
# the virtual clock counts from 2024-01-01; TIDs count from the Unix epoch
UNIX_OFFSET_US = 1_704_067_200 * 1_000_000


class PdsError(Exception):
    pass


class HandleTaken(PdsError):
    pass


class DirectoryRejected(PdsError):
    pass


class BadCredentials(PdsError):
    pass


class Unauthorized(PdsError):
    pass


class LexiconViolation(PdsError):
    def __init__(self, collection: str, violations):
        super().__init__(f"{collection}: " + ", ".join(str(v) for v in violations))
        self.collection = collection
        self.violations = list(violations)


class InvalidWrite(PdsError):
    pass


class UnknownDid(PdsError, KeyError):
    pass


class TooLarge(PdsError):
    pass


class BlobNotFound(PdsError, KeyError):
    pass


class ImportFailed(PdsError):
    pass


class PasswordHasher:
    """scrypt behind a tiny interface; ``fast`` is for tests and simulation."""

    PROFILES = {"fast": (2**4, 1, 1), "standard": (2**14, 8, 1)}

    def __init__(self, profile: str = "standard"):
        self.n, self.r, self.p = self.PROFILES[profile]

    def hash(self, password: str, salt: bytes) -> bytes:
        return hashlib.scrypt(password.encode(), salt=salt, n=self.n, r=self.r, p=self.p, dklen=32)

    def verify(self, password: str, salt: bytes, expected: bytes) -> bool:
        return hmac.compare_digest(self.hash(password, salt), expected)


def encode_tid(value: int) -> str:
    return "".join(_TID_ALPHABET[(value >> (5 * (12 - i))) & 31] for i in range(13))


class TidClock:
    """Timestamp-sortable record keys: 53 bits of microseconds, 10 of clock id."""

    def __init__(self, clock: VirtualClock, clock_id: int = 0):
        self.clock = clock
        self.clock_id = clock_id & 0x3FF
        self._last = -1

    def next(self) -> str:
        ts = max(UNIX_OFFSET_US + self.clock.now(), self._last + 1)
        self._last = ts
        return encode_tid((ts << 10) | self.clock_id)


@dataclass
class Write:
    """One requested change. ``rkey`` is generated for creates when omitted."""

    action: str
    collection: str
    rkey: str | None = None
    record: Any = None

    @classmethod
    def coerce(cls, raw: Write | dict) -> Write:
        if isinstance(raw, Write):
            return raw
        return cls(raw["action"], raw["collection"], raw.get("rkey"), raw.get("record"))


@dataclass(frozen=True)
class WriteResult:
    commit: Cid
    results: list[tuple[str, Cid | None]]

    @property
    def uri(self) -> str:
        return self.results[0][0]

    @property
    def cid(self) -> Cid | None:
        return self.results[0][1]


@dataclass
class Account:
    did: str
    handle: str
    password_hash: bytes
    salt: bytes
    signing_key: Keypair
    rotation_key: Keypair
    repo: Repository
    status: str = ACTIVE
    blobs: dict[Cid, bytes] = field(default_factory=dict)
    preferences: dict[str, Any] = field(default_factory=dict)


@dataclass
class Session:
    did: str
    expires_at: int


class PDS:
    def __init__(
        self,
        url: str,
        network: Network,
        *,
        rng: random.Random | None = None,
        plc_url: str = PLC_URL,
        retention: int = 10_000,
        blob_cap: int = 1_000_000,
        hasher: PasswordHasher | None = None,
        session_ttl: float = 2 * 3600,
    ):
        self.url = url.rstrip("/")
        self.host = host_of(url)
        self.network = network
        self.clock = network.clock
        self.rng = rng or random.Random()
        self.plc_url = plc_url
        self.blob_cap = blob_cap
        self.hasher = hasher or PasswordHasher()
        self.session_ttl_us = int(session_ttl * 1_000_000)
        self.accounts: dict[str, Account] = {}
        self.handles: dict[str, str] = {}
        self.sessions: dict[str, Session] = {}
        self.events: EventLog[RepoEvent] = EventLog(retention)
        self.tids = TidClock(self.clock, self.rng.randrange(1024))
        self._reserved: dict[str, tuple[Keypair, Keypair]] = {}
        network.serve(self.url, self)

    # identity plumbing

    def _directory(self):
        try:
            return self.network.connect(self.plc_url, self.url)
        except Unreachable as exc:
            raise DirectoryRejected(f"directory unreachable: {exc}") from exc

    def resolver(self):
        return self.network.resolver(self.url, self.plc_url)

    def _publish_handle(self, handle: str, did: str) -> None:
        # hosting domains control DNS for their own subdomains
        if handle.endswith("." + self.host):
            self.network.set_txt(f"_atproto.{handle}", [f"did={did}"])

    def well_known(self, host: str, path: str) -> str | None:
        if path == "/.well-known/atproto-did" and host in self.handles:
            account = self.accounts.get(self.handles[host])
            if account is not None and account.status == ACTIVE:
                return account.did
        return None

    # accounts

    def create_account(self, handle: str, password: str, *, rotation_keys: Iterable[str] = ()) -> str:
        """Create a did:plc identity and an empty repo.

        ``rotation_keys`` are user-held keys listed ahead of this server's own
        custodial rotation key.
        """
        handle = normalize_handle(handle)
        if handle in self.handles:
            raise HandleTaken(handle)
        signing = Keypair.generate(self.rng)
        rotation = Keypair.generate(self.rng)
        genesis = PlcOperation.create(
            rotation,
            prev=None,
            handle=handle,
            pds_url=self.url,
            signing_key=signing.public_key,
            rotation_keys=[*rotation_keys, rotation.public_key],
        )
        did = plc_derive_did(genesis)
        result = self._directory().submit_operation(did, genesis)
        if not result.accepted:
            raise DirectoryRejected(result.reason)
        salt = self.rng.randbytes(16)
        repo = Repository(did)
        account = Account(did, handle, self.hasher.hash(password, salt), salt, signing, rotation, repo)
        self.accounts[did] = account
        self.handles[handle] = did
        self._publish_handle(handle, did)
        repo.apply_writes([], signing)
        self._emit(account, [])
        logger.info("created %s as %s on %s", handle, did, self.host)
        return did

    def _account(self, did: str) -> Account:
        account = self.accounts.get(did)
        if account is None or account.status != ACTIVE:
            raise UnknownDid(did)
        return account

    def create_session(self, identifier: str, password: str) -> str:
        did = identifier if identifier.startswith("did:") else self.handles.get(identifier.lower())
        account = self.accounts.get(did) if did else None
        if account is None or account.status != ACTIVE:
            # same work either way
            self.hasher.verify(password, b"\x00" * 16, b"\x00" * 32)
            raise BadCredentials(identifier)
        if not self.hasher.verify(password, account.salt, account.password_hash):
            raise BadCredentials(identifier)
        token = self.rng.randbytes(16).hex()
        self.sessions[token] = Session(account.did, self.clock.now() + self.session_ttl_us)
        return token

    def authenticate(self, token: str) -> Account:
        session = self.sessions.get(token)
        if session is None:
            raise Unauthorized("unknown session")
        if self.clock.now() >= session.expires_at:
            del self.sessions[token]
            raise Unauthorized("session expired")
        account = self.accounts.get(session.did)
        if account is None or account.status != ACTIVE:
            raise Unauthorized("account is not active here")
        return account

    def deactivate(self, token: str, status: str = DEACTIVATED) -> None:
        account = self.authenticate(token)
        account.status = status
        for key in [k for k, s in self.sessions.items() if s.did == account.did]:
            del self.sessions[key]

    # writes

    def write_records(self, token: str, writes: Iterable[Write | dict]) -> WriteResult:
        """Apply writes as one signed commit; returns (uri, cid) per applied op."""
        account = self.authenticate(token)
        repo_writes = []
        for raw in writes:
            write = Write.coerce(raw)
            if write.action in ("create", "update"):
                record = write.record
                if isinstance(record, dict) and "$type" not in record:
                    record = {"$type": write.collection, **record}
                result = lexicon.validate_record(write.collection, record)
                if not result.ok:
                    raise LexiconViolation(write.collection, result.violations)
                rkey = write.rkey or (self.tids.next() if write.action == "create" else None)
                if rkey is None:
                    raise InvalidWrite("update needs an rkey")
                path = f"{write.collection}/{rkey}"
                exists = self._exists(account.repo, path)
                if write.action == "create" and exists:
                    raise InvalidWrite(f"record already exists at {path}")
                if write.action == "update" and not exists:
                    raise PathNotFound(path)
                repo_writes.append(Put(path, record))
            elif write.action == "delete":
                repo_writes.append(Delete(f"{write.collection}/{write.rkey}"))
            else:
                raise InvalidWrite(f"unknown action {write.action!r}")
        paths = [w.path for w in repo_writes]
        if len(set(paths)) != len(paths):
            raise InvalidWrite("a path may be written once per commit")
        commit = account.repo.apply_writes(repo_writes, account.signing_key)
        self._emit(account, account.repo.last_ops)
        results = [(f"at://{account.did}/{op.path}", op.cid) for op in account.repo.last_ops]
        return WriteResult(commit.cid, results)

    @staticmethod
    def _exists(repo: Repository, path: str) -> bool:
        try:
            repo.get_record(path)
        except NotFound:
            return False
        return True

    def _emit(self, account: Account, applied) -> RepoEvent:
        repo = account.repo
        ops = tuple(EventOp(op.action, op.path, op.cid) for op in applied)
        blocks = write_car(repo.head, repo.commit_blocks().items())
        return self.events.append(
            lambda seq: RepoEvent(seq, account.did, repo.head, repo.commit.prev, ops, blocks, self.clock.now())
        )

    def get_record(self, did: str, collection: str, rkey: str) -> tuple[Any, Cid]:
        return self._account(did).repo.get_record(f"{collection}/{rkey}")

    # blobs

    def put_blob(self, token: str, data: bytes) -> Cid:
        account = self.authenticate(token)
        if len(data) > self.blob_cap:
            raise TooLarge(f"{len(data)} bytes exceeds cap of {self.blob_cap}")
        cid = codec.cid_of(data, codec.RAW)
        account.blobs[cid] = bytes(data)
        return cid

    def get_blob(self, did: str, cid: Cid) -> bytes:
        account = self.accounts.get(did)
        if account is None or cid not in account.blobs:
            raise BlobNotFound(str(cid))
        return account.blobs[cid]

    # preferences are private: never in the repo, never on the stream

    def put_preferences(self, token: str, prefs: dict[str, Any]) -> None:
        self.authenticate(token).preferences = dict(prefs)

    def get_preferences(self, token: str) -> dict[str, Any]:
        return dict(self.authenticate(token).preferences)

    # sync

    def subscribe_repos(self, cursor: int | None = None) -> Subscription[RepoEvent]:
        return self.events.subscribe(cursor)

    @property
    def seq(self) -> int:
        return self.events.seq

    def sync_get_repo(self, did: str) -> bytes:
        return export_archive(self._account(did).repo)

    def sync_list_repos(self) -> list[tuple[str, Cid]]:
        return [(did, a.repo.head) for did, a in self.accounts.items() if a.status == ACTIVE]

    # migration

    def reserve_keys(self, did: str) -> dict[str, str]:
        """New custodial keys for an incoming account; goes into the PLC update."""
        signing, rotation = Keypair.generate(self.rng), Keypair.generate(self.rng)
        self._reserved[did] = (signing, rotation)
        return {"signing_key": signing.public_key, "rotation_key": rotation.public_key}

    def migrate_in(self, archive: bytes, blobs: Iterable[bytes], plc_update: PlcOperation, password: str) -> str:
        try:
            repo = import_archive(archive)
        except CorruptArchive as exc:
            raise ImportFailed(str(exc)) from exc
        did = repo.did
        if did not in self._reserved:
            raise ImportFailed(f"no keys reserved for {did}")
        signing, rotation = self._reserved[did]
        try:
            current: DidDocument = resolve_did(did, self.resolver())
        except IdentityError as exc:
            raise ImportFailed(f"cannot resolve {did}: {exc}") from exc
        if not verify_commit(repo.commit, current.signing_key):
            raise ImportFailed("archive head is not signed by the account's current key")
        if plc_update.pds_url != self.url or plc_update.signing_key != signing.public_key:
            raise DirectoryRejected("update must point at this server and its reserved key")
        result = self._directory().submit_operation(did, plc_update)
        if not result.accepted:
            raise DirectoryRejected(result.reason)
        del self._reserved[did]
        salt = self.rng.randbytes(16)
        account = Account(did, plc_update.handle, self.hasher.hash(password, salt), salt, signing, rotation, repo)
        for blob in blobs:
            account.blobs[codec.cid_of(blob, codec.RAW)] = bytes(blob)
        self.accounts[did] = account
        self.handles[plc_update.handle] = did
        # re-anchor: an empty commit signed with the new key, announced on the stream
        repo.apply_writes([], signing)
        self._emit(account, [])
        logger.info("migrated %s into %s", did, self.host)
        return did

    def export_blobs(self, did: str) -> list[bytes]:
        account = self.accounts.get(did)
        if account is None:
            raise UnknownDid(did)
        return [account.blobs[c] for c in sorted(account.blobs)]
