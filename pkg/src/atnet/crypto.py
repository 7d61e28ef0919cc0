"""Ed25519 signing keys with multibase (did:key style) public key strings."""

from __future__ import annotations

import random

import base58
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

# multicodec ed25519-pub, varint encoded
_ED25519_PREFIX = b"\xed\x01"


class Keypair:
    """An Ed25519 private key. Signatures are deterministic."""

    def __init__(self, private: Ed25519PrivateKey):
        self._private = private
        raw = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        self.public_key = encode_public_key(raw)

    @classmethod
    def from_seed(cls, seed: bytes) -> Keypair:
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @classmethod
    def generate(cls, rng: random.Random | None = None) -> Keypair:
        if rng is None:
            return cls(Ed25519PrivateKey.generate())
        return cls.from_seed(rng.randbytes(32))

    def seed(self) -> bytes:
        return self._private.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )

    def sign(self, data: bytes) -> bytes:
        return self._private.sign(data)

    def __repr__(self) -> str:
        return f"Keypair({self.public_key})"


def encode_public_key(raw: bytes) -> str:
    if len(raw) != 32:
        raise ValueError("Ed25519 public keys are 32 bytes")
    return "z" + base58.b58encode(_ED25519_PREFIX + raw).decode()


def decode_public_key(key: str) -> bytes:
    if not key.startswith("z"):
        raise ValueError(f"unsupported multibase prefix in {key!r}")
    raw = base58.b58decode(key[1:])
    if raw[:2] != _ED25519_PREFIX or len(raw) != 34:
        raise ValueError(f"not an ed25519 public key: {key!r}")
    return raw[2:]


def verify_signature(public_key: str, data: bytes, sig: bytes) -> bool:
    try:
        raw = decode_public_key(public_key)
        Ed25519PublicKey.from_public_bytes(raw).verify(bytes(sig), data)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True
