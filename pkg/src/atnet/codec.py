"""Canonical DAG-CBOR encoding and CIDv1 content addressing.

Only the restricted profile is supported: null, booleans, signed 64-bit
integers, UTF-8 strings, byte strings, arrays, string-keyed maps and CID
links (tag 42). Floats, indefinite lengths and foreign tags are rejected.
"""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass
from typing import Any

DAG_CBOR = 0x71
RAW = 0x55
SHA2_256 = 0x12

_INT_MIN = -(2**63)
_INT_MAX = 2**63 - 1
_MAX_DEPTH = 256


class CodecError(ValueError):
    """Base class for encoding and decoding failures."""


class UnencodableValue(CodecError):
    pass


class Malformed(CodecError):
    pass


class NonCanonical(CodecError):
    pass


class UnsupportedConstruct(CodecError):
    pass


def encode_varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, pos: int = 0) -> tuple[int, int]:
    """Return ``(value, new_pos)``; rejects overlong encodings."""
    value = 0
    shift = 0
    start = pos
    while True:
        if pos >= len(data):
            raise Malformed("truncated varint")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            if byte == 0 and pos - start > 1:
                raise NonCanonical("overlong varint")
            return value, pos
        shift += 7
        if shift > 63:
            raise Malformed("varint too long")


@dataclass(frozen=True)
class Cid:
    """A CIDv1 with a SHA-256 multihash."""

    codec: int
    digest: bytes
    version: int = 1

    def __post_init__(self):
        if self.version != 1:
            raise ValueError("only CIDv1 is supported")
        if len(self.digest) != 32:
            raise ValueError("digest must be 32 bytes")

    def to_bytes(self) -> bytes:
        return (
            encode_varint(self.version)
            + encode_varint(self.codec)
            + bytes([SHA2_256, 32])
            + self.digest
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Cid:
        cid, pos = cls.read(data, 0)
        if pos != len(data):
            raise Malformed("trailing bytes after CID")
        return cid

    @classmethod
    def read(cls, data: bytes, pos: int) -> tuple[Cid, int]:
        version, pos = decode_varint(data, pos)
        if version != 1:
            raise UnsupportedConstruct(f"CID version {version}")
        codec, pos = decode_varint(data, pos)
        hash_code, pos = decode_varint(data, pos)
        length, pos = decode_varint(data, pos)
        if hash_code != SHA2_256 or length != 32:
            raise UnsupportedConstruct("only sha2-256 multihashes are supported")
        digest = bytes(data[pos : pos + 32])
        if len(digest) != 32:
            raise Malformed("truncated CID digest")
        return cls(codec, digest), pos + 32

    def __str__(self) -> str:
        return "b" + base64.b32encode(self.to_bytes()).decode().lower().rstrip("=")

    def __repr__(self) -> str:
        return f"Cid({self})"

    def __lt__(self, other: Cid) -> bool:
        return self.to_bytes() < other.to_bytes()

    @classmethod
    def parse(cls, text: str) -> Cid:
        if not text.startswith("b") or text != text.lower():
            raise Malformed(f"not a lowercase base32 CID: {text!r}")
        body = text[1:].upper()
        body += "=" * (-len(body) % 8)
        try:
            raw = base64.b32decode(body)
        except Exception as exc:
            raise Malformed(f"bad base32 in CID {text!r}") from exc
        cid = cls.from_bytes(raw)
        if str(cid) != text:
            raise NonCanonical(f"non-canonical CID string {text!r}")
        return cid


def cid_of(data: bytes, codec: int = DAG_CBOR) -> Cid:
    return Cid(codec, hashlib.sha256(data).digest())


def _head(major: int, n: int) -> bytes:
    if n < 24:
        return bytes([major << 5 | n])
    if n < 0x100:
        return bytes([major << 5 | 24, n])
    if n < 0x10000:
        return bytes([major << 5 | 25]) + n.to_bytes(2, "big")
    if n < 0x100000000:
        return bytes([major << 5 | 26]) + n.to_bytes(4, "big")
    return bytes([major << 5 | 27]) + n.to_bytes(8, "big")


def _key_order(key: bytes) -> tuple[int, bytes]:
    return (len(key), key)


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode(value, out, 0)
    return bytes(out)


def _encode(value: Any, out: bytearray, depth: int) -> None:
    if depth > _MAX_DEPTH:
        raise UnencodableValue("value nested too deeply")
    if value is None:
        out.append(0xF6)
    elif value is True:
        out.append(0xF5)
    elif value is False:
        out.append(0xF4)
    elif isinstance(value, int):
        if not _INT_MIN <= value <= _INT_MAX:
            raise UnencodableValue(f"integer out of 64-bit range: {value}")
        if value >= 0:
            out += _head(0, value)
        else:
            out += _head(1, -1 - value)
    elif isinstance(value, str):
        try:
            raw = value.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise UnencodableValue("string is not valid UTF-8") from exc
        out += _head(3, len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        out += _head(2, len(raw))
        out += raw
    elif isinstance(value, Cid):
        raw = b"\x00" + value.to_bytes()
        out += _head(6, 42)
        out += _head(2, len(raw))
        out += raw
    elif isinstance(value, (list, tuple)):
        out += _head(4, len(value))
        for item in value:
            _encode(item, out, depth + 1)
    elif isinstance(value, dict):
        items = []
        for key, item in value.items():
            if not isinstance(key, str):
                raise UnencodableValue(f"map keys must be strings, got {type(key).__name__}")
            try:
                raw_key = key.encode("utf-8")
            except UnicodeEncodeError as exc:
                raise UnencodableValue("map key is not valid UTF-8") from exc
            items.append((raw_key, item))
        items.sort(key=lambda kv: _key_order(kv[0]))
        out += _head(5, len(items))
        for raw_key, item in items:
            out += _head(3, len(raw_key))
            out += raw_key
            _encode(item, out, depth + 1)
    elif isinstance(value, float):
        raise UnencodableValue("floats are not representable")
    else:
        raise UnencodableValue(f"cannot encode {type(value).__name__}")


class _Decoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise Malformed("unexpected end of input")
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def header(self) -> tuple[int, int]:
        first = self.take(1)[0]
        major, info = first >> 5, first & 0x1F
        if major == 7:
            return major, info
        if info < 24:
            return major, info
        if info == 31:
            raise UnsupportedConstruct("indefinite-length items are not allowed")
        if info > 27:
            raise Malformed(f"reserved additional info {info}")
        size = 1 << (info - 24)
        n = int.from_bytes(self.take(size), "big")
        minimum = 24 if size == 1 else 1 << (8 * (size // 2))
        if n < minimum:
            raise NonCanonical("integer or length not minimally encoded")
        return major, n

    def value(self, depth: int) -> Any:
        if depth > _MAX_DEPTH:
            raise UnsupportedConstruct("input nested too deeply")
        major, arg = self.header()
        if major == 0:
            if arg > _INT_MAX:
                raise UnsupportedConstruct("integer exceeds signed 64-bit range")
            return arg
        if major == 1:
            if arg > _INT_MAX:
                raise UnsupportedConstruct("integer exceeds signed 64-bit range")
            return -1 - arg
        if major == 2:
            return bytes(self.take(arg))
        if major == 3:
            try:
                return bytes(self.take(arg)).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise Malformed("invalid UTF-8 in text string") from exc
        if major == 4:
            return [self.value(depth + 1) for _ in range(arg)]
        if major == 5:
            result: dict[str, Any] = {}
            last = None
            for _ in range(arg):
                kmajor, klen = self.header()
                if kmajor != 3:
                    raise UnsupportedConstruct("map keys must be text strings")
                raw_key = bytes(self.take(klen))
                try:
                    key = raw_key.decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise Malformed("invalid UTF-8 in map key") from exc
                order = _key_order(raw_key)
                if last is not None:
                    if order == last:
                        raise NonCanonical(f"duplicate map key {key!r}")
                    if order < last:
                        raise NonCanonical("map keys are not in canonical order")
                last = order
                result[key] = self.value(depth + 1)
            return result
        if major == 6:
            if arg != 42:
                raise UnsupportedConstruct(f"tag {arg} is not allowed")
            imajor, ilen = self.header()
            if imajor != 2:
                raise Malformed("tag 42 must wrap a byte string")
            raw = bytes(self.take(ilen))
            if not raw or raw[0] != 0:
                raise Malformed("CID link missing identity multibase prefix")
            return Cid.from_bytes(raw[1:])
        # major 7
        if arg == 20:
            return False
        if arg == 21:
            return True
        if arg == 22:
            return None
        if arg in (25, 26, 27):
            raise UnsupportedConstruct("floating-point values are not allowed")
        raise UnsupportedConstruct(f"simple value {arg} is not allowed")


def decode(data: bytes) -> Any:
    decoder = _Decoder(bytes(data))
    value = decoder.value(0)
    if decoder.pos != len(decoder.data):
        raise Malformed("trailing bytes after value")
    return value


def to_json(value: Any) -> Any:
    """Render a Value as DAG-JSON-style plain JSON (CIDs and bytes under ``"/"``)."""
    if isinstance(value, Cid):
        return {"/": str(value)}
    if isinstance(value, (bytes, bytearray)):
        return {"/": {"bytes": base64.b64encode(bytes(value)).decode().rstrip("=")}}
    if isinstance(value, (list, tuple)):
        return [to_json(v) for v in value]
    if isinstance(value, dict):
        return {k: to_json(v) for k, v in sorted(value.items(), key=lambda kv: _key_order(kv[0].encode()))}
    return value


def from_json(value: Any) -> Any:
    if isinstance(value, dict):
        if set(value) == {"/"}:
            inner = value["/"]
            if isinstance(inner, str):
                return Cid.parse(inner)
            if isinstance(inner, dict) and set(inner) == {"bytes"}:
                text = inner["bytes"]
                return base64.b64decode(text + "=" * (-len(text) % 4))
        return {k: from_json(v) for k, v in value.items()}
    if isinstance(value, list):
        return [from_json(v) for v in value]
    if isinstance(value, float):
        raise UnsupportedConstruct("floats are not representable")
    return value
