"""Record schemas for the microblogging mode, and at-URI parsing.

Schemas are compiled-in data tables. Validation never raises: it returns the
list of violations, and collections with no registered schema pass with an
``unknown-lexicon`` note.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, NamedTuple

from atnet.codec import Cid
from atnet.identity import is_valid_did

POST = "app.bsky.feed.post"
LIKE = "app.bsky.feed.like"
REPOST = "app.bsky.feed.repost"
FOLLOW = "app.bsky.graph.follow"
BLOCK = "app.bsky.graph.block"
PROFILE = "app.bsky.actor.profile"
LIST = "app.bsky.graph.list"
LISTITEM = "app.bsky.graph.listitem"
THREADGATE = "app.bsky.feed.threadgate"
LABELER = "app.bsky.labeler.service"
GENERATOR = "app.bsky.feed.generator"

MAX_POST_CHARS = 300
MAX_IMAGES = 4

_NSID = re.compile(r"^[a-z][a-z0-9-]*(\.[a-z][a-zA-Z0-9-]*){2,}$")
_RKEY = re.compile(r"^[A-Za-z0-9._:~-]{1,512}$")


class MalformedUri(ValueError):
    pass


class AtUri(NamedTuple):
    did: str
    collection: str
    rkey: str

    def __str__(self) -> str:
        return f"at://{self.did}/{self.collection}/{self.rkey}"

    @property
    def path(self) -> str:
        return f"{self.collection}/{self.rkey}"


def parse_at_uri(uri: str) -> AtUri:
    if not isinstance(uri, str) or not uri.startswith("at://"):
        raise MalformedUri(f"not an at:// URI: {uri!r}")
    parts = uri[5:].split("/")
    if len(parts) != 3:
        raise MalformedUri(f"expected at://<did>/<collection>/<rkey>: {uri!r}")
    did, collection, rkey = parts
    if not is_valid_did(did):
        raise MalformedUri(f"bad DID in {uri!r}")
    if not _NSID.match(collection):
        raise MalformedUri(f"bad collection in {uri!r}")
    if not _RKEY.match(rkey) or rkey in (".", ".."):
        raise MalformedUri(f"bad record key in {uri!r}")
    return AtUri(did, collection, rkey)


def format_at_uri(did: str, collection: str, rkey: str) -> str:
    return str(AtUri(did, collection, rkey))


@dataclass(frozen=True)
class Violation:
    code: str
    path: str

    def __str__(self) -> str:
        return f"{self.code} at {self.path}"


@dataclass
class ValidationResult:
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


# Field kinds understood by the checker. Each spec is
# (kind, required, options) where options carries constraints.
@dataclass(frozen=True)
class FieldSpec:
    kind: str
    required: bool = False
    max_length: int | None = None
    max_items: int | None = None
    item: FieldSpec | None = None
    fields: dict[str, FieldSpec] | None = None
    enum: tuple[str, ...] | None = None


@dataclass(frozen=True)
class RecordSchema:
    collection: str
    fields: dict[str, FieldSpec]


def _f(kind: str, required: bool = False, **kw) -> FieldSpec:
    return FieldSpec(kind, required, **kw)


STRONG_REF = _f("object", fields={"uri": _f("at-uri", True), "cid": _f("cid", True)})
BLOB = _f("blob")

SCHEMAS: dict[str, RecordSchema] = {
    s.collection: s
    for s in [
        RecordSchema(
            POST,
            {
                "text": _f("string", True, max_length=MAX_POST_CHARS),
                "createdAt": _f("datetime", True),
                "reply": _f(
                    "object",
                    fields={
                        "root": _f("strong-ref", True),
                        "parent": _f("strong-ref", True),
                    },
                ),
                "embed": _f(
                    "object",
                    fields={
                        "images": _f(
                            "array",
                            True,
                            max_items=MAX_IMAGES,
                            item=_f(
                                "object",
                                fields={"image": _f("blob", True), "alt": _f("string", max_length=1000)},
                            ),
                        )
                    },
                ),
                "langs": _f("array", max_items=3, item=_f("string")),
            },
        ),
        RecordSchema(LIKE, {"subject": _f("strong-ref", True), "createdAt": _f("datetime", True)}),
        RecordSchema(REPOST, {"subject": _f("strong-ref", True), "createdAt": _f("datetime", True)}),
        RecordSchema(FOLLOW, {"subject": _f("did", True), "createdAt": _f("datetime", True)}),
        RecordSchema(BLOCK, {"subject": _f("did", True), "createdAt": _f("datetime", True)}),
        RecordSchema(
            PROFILE,
            {
                "displayName": _f("string", max_length=64),
                "description": _f("string", max_length=256),
                "avatar": _f("blob"),
            },
        ),
        RecordSchema(
            LIST,
            {
                "name": _f("string", True, max_length=64),
                "purpose": _f("string", True, enum=("modlist", "curatelist")),
                "createdAt": _f("datetime", True),
            },
        ),
        RecordSchema(
            LISTITEM,
            {"subject": _f("did", True), "list": _f("at-uri", True), "createdAt": _f("datetime", True)},
        ),
        RecordSchema(
            THREADGATE,
            {
                "post": _f("at-uri", True),
                "allow": _f(
                    "array",
                    True,
                    max_items=5,
                    item=_f(
                        "object",
                        fields={
                            "rule": _f("string", True, enum=("mention", "following", "list")),
                            "list": _f("at-uri"),
                        },
                    ),
                ),
                "createdAt": _f("datetime", True),
            },
        ),
        RecordSchema(
            LABELER,
            {
                "labelValues": _f("array", True, item=_f("string", max_length=128)),
                "createdAt": _f("datetime", True),
            },
        ),
        RecordSchema(
            GENERATOR,
            {
                "did": _f("did", True),
                "displayName": _f("string", True, max_length=24),
                "description": _f("string", max_length=300),
                "createdAt": _f("datetime", True),
            },
        ),
    ]
}

_DATETIME = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d{1,9})?(Z|[+-]\d{2}:\d{2})$")


def validate_record(collection: str, record: Any) -> ValidationResult:
    result = ValidationResult()
    if not isinstance(record, dict):
        result.violations.append(Violation("wrong-type", "$"))
        return result
    declared = record.get("$type")
    if declared is not None and declared != collection:
        result.violations.append(Violation("type-mismatch", "$type"))
    schema = SCHEMAS.get(collection)
    if schema is None:
        result.notes.append("unknown-lexicon")
        return result
    _check_fields(schema.fields, record, "", result.violations)
    return result


def _check_fields(specs: dict[str, FieldSpec], obj: dict, prefix: str, out: list[Violation]) -> None:
    for name, spec in specs.items():
        path = f"{prefix}{name}"
        if name not in obj or obj[name] is None:
            if spec.required:
                out.append(Violation("missing-field", path))
            continue
        _check_value(spec, obj[name], path, out)


def _check_value(spec: FieldSpec, value: Any, path: str, out: list[Violation]) -> None:
    kind = spec.kind
    if kind == "string":
        if not isinstance(value, str):
            out.append(Violation("wrong-type", path))
            return
        if spec.max_length is not None and len(value) > spec.max_length:
            out.append(Violation("text-too-long" if path == "text" else "too-long", path))
        if spec.enum is not None and value not in spec.enum:
            out.append(Violation("not-in-enum", path))
    elif kind == "datetime":
        if not isinstance(value, str) or not _DATETIME.match(value):
            out.append(Violation("bad-datetime", path))
    elif kind == "did":
        if not isinstance(value, str) or not is_valid_did(value):
            out.append(Violation("bad-did", path))
    elif kind == "at-uri":
        try:
            parse_at_uri(value)
        except MalformedUri:
            out.append(Violation("bad-uri", path))
    elif kind == "cid":
        if not isinstance(value, Cid):
            out.append(Violation("bad-cid", path))
    elif kind == "strong-ref":
        if not isinstance(value, dict):
            out.append(Violation("wrong-type", path))
            return
        if value.get("uri") is None:
            out.append(Violation("missing-uri", f"{path}.uri"))
        else:
            _check_value(_f("at-uri"), value["uri"], f"{path}.uri", out)
        if value.get("cid") is None:
            out.append(Violation("missing-cid", f"{path}.cid"))
        else:
            _check_value(_f("cid"), value["cid"], f"{path}.cid", out)
    elif kind == "blob":
        if (
            not isinstance(value, dict)
            or value.get("$type") != "blob"
            or not isinstance(value.get("ref"), Cid)
            or not isinstance(value.get("mimeType"), str)
            or not isinstance(value.get("size"), int)
        ):
            out.append(Violation("bad-blob", path))
    elif kind == "array":
        if not isinstance(value, list):
            out.append(Violation("wrong-type", path))
            return
        if spec.max_items is not None and len(value) > spec.max_items:
            out.append(Violation("too-many-images" if path.endswith("images") else "too-many-items", path))
        if spec.item is not None:
            for i, item in enumerate(value):
                _check_value(spec.item, item, f"{path}[{i}]", out)
    elif kind == "object":
        if not isinstance(value, dict):
            out.append(Violation("wrong-type", path))
            return
        _check_fields(spec.fields or {}, value, f"{path}.", out)
    else:  # pragma: no cover - schema tables only use the kinds above
        raise ValueError(f"unknown field kind {kind}")


def strong_ref(uri: str, cid: Cid) -> dict[str, Any]:
    return {"uri": uri, "cid": cid}


def blob_ref(cid: Cid, mime_type: str, size: int) -> dict[str, Any]:
    return {"$type": "blob", "ref": cid, "mimeType": mime_type, "size": size}
