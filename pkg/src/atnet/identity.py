"""DIDs, DID documents, did:plc operation logs and handle verification."""

from __future__ import annotations

import base64
import hashlib
import json
import re
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from typing import Any

from atnet import codec
from atnet.codec import Cid
from atnet.crypto import verify_signature

_PLC_ID = re.compile(r"^[a-z2-7]{24}$")
_DOMAIN = re.compile(r"^([a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?\.)+[a-z]([a-z0-9-]{0,61}[a-z0-9])?$")

VERIFIED = "verified"
INVALID = "invalid"
UNCHECKED = "unchecked"

FORWARD_MISSING = "forward-missing"
BACKWARD_MISMATCH = "backward-mismatch"
RESOLUTION_ERROR = "resolution-error"


class IdentityError(Exception):
    pass


class InvalidDid(IdentityError, ValueError):
    pass


class InvalidHandle(IdentityError, ValueError):
    pass


class PlcLogError(IdentityError):
    """Base class for operation-log validation failures."""


class NotGenesis(PlcLogError):
    pass


class BrokenChain(PlcLogError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class BadSignature(PlcLogError):
    def __init__(self, index: int):
        super().__init__(f"operation {index} is not signed by an authorized rotation key")
        self.index = index


class ForkDetected(PlcLogError):
    def __init__(self, index: int, parent: int):
        super().__init__(f"operation {index} is a second valid successor of operation {parent}")
        self.index = index
        self.parent = parent


class WrongDid(PlcLogError):
    pass


class Unresolvable(IdentityError):
    pass


class ValidationFailed(IdentityError):
    pass


def normalize_handle(handle: str) -> str:
    handle = handle.strip().lower().removeprefix("@")
    if len(handle) > 253 or not _DOMAIN.match(handle):
        raise InvalidHandle(f"not a valid domain handle: {handle!r}")
    return handle


def is_valid_handle(handle: str) -> bool:
    try:
        normalize_handle(handle)
    except InvalidHandle:
        return False
    return True


@dataclass(frozen=True)
class Did:
    method: str
    identifier: str

    @classmethod
    def parse(cls, text: str) -> Did:
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "did":
            raise InvalidDid(f"not a supported DID: {text!r}")
        method, ident = parts[1], parts[2]
        if method == "plc":
            if not _PLC_ID.match(ident):
                raise InvalidDid(f"did:plc identifier must be 24 base32 chars: {text!r}")
        elif method == "web":
            if not _DOMAIN.match(ident):
                raise InvalidDid(f"did:web identifier must be a domain: {text!r}")
        else:
            raise InvalidDid(f"unsupported DID method {method!r}")
        return cls(method, ident)

    def __str__(self) -> str:
        return f"did:{self.method}:{self.identifier}"


def is_valid_did(text: str) -> bool:
    try:
        Did.parse(text)
    except InvalidDid:
        return False
    return True


@dataclass(frozen=True)
class DidDocument:
    did: str
    handle: str
    pds_url: str
    signing_key: str
    rotation_keys: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "did": self.did,
            "handle": self.handle,
            "pds_url": self.pds_url,
            "signing_key": self.signing_key,
            "rotation_keys": list(self.rotation_keys),
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> DidDocument:
        try:
            return cls(
                raw["did"],
                raw["handle"],
                raw["pds_url"],
                raw["signing_key"],
                tuple(raw.get("rotation_keys", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationFailed(f"malformed DID document: {exc}") from exc


@dataclass(frozen=True)
class PlcOperation:
    prev: Cid | None
    handle: str
    pds_url: str
    signing_key: str
    rotation_keys: tuple[str, ...]
    sig: bytes = b""

    _FIELDS = frozenset({"type", "prev", "handle", "pds_url", "signing_key", "rotation_keys", "sig"})

    def unsigned(self) -> dict[str, Any]:
        return {
            "type": "plc_operation",
            "prev": self.prev,
            "handle": self.handle,
            "pds_url": self.pds_url,
            "signing_key": self.signing_key,
            "rotation_keys": list(self.rotation_keys),
        }

    def to_value(self) -> dict[str, Any]:
        return {**self.unsigned(), "sig": self.sig}

    def to_bytes(self) -> bytes:
        return codec.encode(self.to_value())

    @property
    def cid(self) -> Cid:
        return codec.cid_of(self.to_bytes())

    @classmethod
    def create(cls, signer, *, prev: Cid | None, handle: str, pds_url: str,
               signing_key: str, rotation_keys: Sequence[str]) -> PlcOperation:
        op = cls(prev, handle, pds_url, signing_key, tuple(rotation_keys))
        return replace(op, sig=signer.sign(codec.encode(op.unsigned())))

    def signed_by(self, keys: Sequence[str]) -> bool:
        payload = codec.encode(self.unsigned())
        return any(verify_signature(key, payload, self.sig) for key in keys)

    @classmethod
    def from_value(cls, raw: Any) -> PlcOperation:
        if not isinstance(raw, dict) or set(raw) != cls._FIELDS or raw["type"] != "plc_operation":
            raise ValueError("not a plc operation")
        prev, keys = raw["prev"], raw["rotation_keys"]
        if prev is not None and not isinstance(prev, Cid):
            raise ValueError("prev must be a CID or null")
        if not isinstance(keys, list) or not all(isinstance(k, str) for k in keys):
            raise ValueError("rotation_keys must be a list of strings")
        for name in ("handle", "pds_url", "signing_key"):
            if not isinstance(raw[name], str):
                raise ValueError(f"{name} must be a string")
        if not isinstance(raw["sig"], bytes):
            raise ValueError("sig must be bytes")
        return cls(prev, raw["handle"], raw["pds_url"], raw["signing_key"], tuple(keys), raw["sig"])

    @classmethod
    def from_bytes(cls, data: bytes) -> PlcOperation:
        return cls.from_value(codec.decode(data))

    def to_json(self) -> dict[str, Any]:
        return codec.to_json(self.to_value())

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> PlcOperation:
        return cls.from_value(codec.from_json(raw))

    def to_document(self, did: str) -> DidDocument:
        return DidDocument(did, self.handle, self.pds_url, self.signing_key, self.rotation_keys)


def plc_derive_did(genesis: PlcOperation) -> str:
    """did:plc identifier: first 120 bits of SHA-256 over the signed genesis, base32."""
    if genesis.prev is not None:
        raise NotGenesis("operation has a prev link")
    digest = hashlib.sha256(genesis.to_bytes()).digest()
    return "did:plc:" + base64.b32encode(digest[:15]).decode().lower()


def plc_validate_log(ops: Sequence[PlcOperation], did: str | None = None) -> DidDocument:
    """Check the full signature chain and return the document of the last operation."""
    if not ops:
        raise BrokenChain("empty operation log")
    genesis = ops[0]
    if genesis.prev is not None:
        raise NotGenesis("log does not start with a genesis operation")
    if not genesis.signed_by(genesis.rotation_keys):
        raise BadSignature(0)
    derived = plc_derive_did(genesis)
    if did is not None and derived != did:
        raise WrongDid(f"genesis derives {derived}, not {did}")
    cids = [genesis.cid]
    for i in range(1, len(ops)):
        op = ops[i]
        if op.prev is None:
            raise BrokenChain("second genesis operation in log", i)
        if op.prev == cids[-1]:
            if not op.signed_by(ops[i - 1].rotation_keys):
                raise BadSignature(i)
        elif op.prev in cids:
            parent = cids.index(op.prev)
            if op.signed_by(ops[parent].rotation_keys):
                raise ForkDetected(i, parent)
            raise BrokenChain("prev does not point at the preceding operation", i)
        else:
            raise BrokenChain("prev does not point at the preceding operation", i)
        cids.append(op.cid)
    return ops[-1].to_document(derived)


class FetchError(Exception):
    """Raised by resolver callables when a lookup cannot be completed."""


def _no_dns(name: str) -> list[str]:
    return []


def _no_https(url: str) -> str | None:
    raise FetchError(f"no HTTPS transport configured for {url}")


def _no_plc(did: str) -> list[PlcOperation]:
    raise FetchError("no PLC directory configured")


@dataclass
class ResolverEnv:
    """Pluggable DNS, HTTPS and directory access.

    ``https_get`` returns the body, ``None`` for a missing resource, and
    raises FetchError when the host cannot be reached.
    """

    dns_txt: Callable[[str], list[str]] = _no_dns
    https_get: Callable[[str], str | None] = _no_https
    plc_audit_log: Callable[[str], list[PlcOperation]] = _no_plc
    now: Callable[[], int] = lambda: 0


def resolve_did(did: str, env: ResolverEnv) -> DidDocument:
    try:
        parsed = Did.parse(did)
    except InvalidDid as exc:
        raise Unresolvable(str(exc)) from exc
    if parsed.method == "plc":
        try:
            ops = env.plc_audit_log(did)
        except FetchError as exc:
            raise Unresolvable(f"directory unavailable for {did}: {exc}") from exc
        if not ops:
            raise Unresolvable(f"directory has no log for {did}")
        try:
            return plc_validate_log(ops, did)
        except PlcLogError as exc:
            raise ValidationFailed(f"{did}: {exc}") from exc
    try:
        body = env.https_get(f"https://{parsed.identifier}/.well-known/did.json")
    except FetchError as exc:
        raise Unresolvable(f"cannot fetch document for {did}: {exc}") from exc
    if body is None:
        raise Unresolvable(f"no document published for {did}")
    try:
        doc = DidDocument.from_json(json.loads(body))
    except (ValueError, AttributeError) as exc:
        raise ValidationFailed(f"malformed document for {did}") from exc
    if doc.did != did:
        raise ValidationFailed(f"document at {parsed.identifier} names {doc.did}")
    return doc


@dataclass(frozen=True)
class HandleStatus:
    handle: str
    did: str
    state: str
    checked_at: int | None = None
    reason: str | None = None

    @property
    def verified(self) -> bool:
        return self.state == VERIFIED


def resolve_handle(handle: str, env: ResolverEnv) -> str | None:
    """Forward link only: DNS TXT takes precedence over the well-known file."""
    handle = normalize_handle(handle)
    try:
        records = env.dns_txt(f"_atproto.{handle}")
    except FetchError:
        records = []
    for record in records:
        if record.startswith("did="):
            return record[4:].strip()
    try:
        body = env.https_get(f"https://{handle}/.well-known/atproto-did")
    except FetchError:
        return None
    if body is None:
        return None
    body = body.strip()
    return body if is_valid_did(body) else None


def verify_handle(handle: str, claimed_did: str, env: ResolverEnv) -> HandleStatus:
    now = env.now()
    try:
        handle = normalize_handle(handle)
    except InvalidHandle:
        return HandleStatus(handle, claimed_did, INVALID, now, FORWARD_MISSING)
    if resolve_handle(handle, env) != claimed_did:
        return HandleStatus(handle, claimed_did, INVALID, now, FORWARD_MISSING)
    try:
        doc = resolve_did(claimed_did, env)
    except IdentityError:
        return HandleStatus(handle, claimed_did, INVALID, now, RESOLUTION_ERROR)
    if doc.handle.lower() != handle:
        return HandleStatus(handle, claimed_did, INVALID, now, BACKWARD_MISMATCH)
    return HandleStatus(handle, claimed_did, VERIFIED, now)
