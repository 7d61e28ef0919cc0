"""Authenticated-transfer social networking: signed repositories, self-certifying
identity, hosting, relaying and indexing, plus a deterministic simulator."""

__version__ = "0.1.0"
