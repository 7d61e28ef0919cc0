"""Labelers: services that publish signed judgements about records and accounts."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, replace
from typing import Any

from atnet import codec, lexicon
from atnet.codec import Cid
from atnet.crypto import Keypair, verify_signature
from atnet.events import DELETE, RepoEvent
from atnet.identity import DidDocument
from atnet.net import Network, host_of
from atnet.stream import EventLog, OutdatedCursor, StreamClient, Subscription

logger = logging.getLogger(__name__)


class BadLabelSignature(ValueError):
    pass


@dataclass(frozen=True)
class Label:
    """One judgement. ``uri`` is a record at-URI, or a bare DID for the account."""

    src: str
    uri: str
    cid: Cid | None
    val: str
    neg: bool
    cts: str
    sig: bytes = b""

    def unsigned(self) -> dict[str, Any]:
        return {"src": self.src, "uri": self.uri, "cid": self.cid, "val": self.val, "neg": self.neg,
                "cts": self.cts}

    def to_value(self) -> dict[str, Any]:
        return {**self.unsigned(), "sig": self.sig}

    @classmethod
    def from_value(cls, raw: dict[str, Any]) -> Label:
        return cls(raw["src"], raw["uri"], raw["cid"], raw["val"], raw["neg"], raw["cts"], raw["sig"])

    def signed(self, key: Keypair) -> Label:
        return replace(self, sig=key.sign(codec.encode(self.unsigned())))

    def verify(self, public_key: str) -> bool:
        return verify_signature(public_key, codec.encode(self.unsigned()), self.sig)


@dataclass(frozen=True)
class LabelEvent:
    seq: int
    label: Label


@dataclass(frozen=True)
class Rule:
    """Declarative predicate: every given condition must hold.

    ``text_contains`` is case-insensitive and only ever matches records
    with a ``text`` field.
    """

    val: str
    collection: str = lexicon.POST
    text_contains: str | None = None
    authors: frozenset[str] | None = None

    def matches(self, did: str, collection: str, record: Any) -> bool:
        if collection != self.collection or not isinstance(record, dict):
            return False
        if self.authors is not None and did not in self.authors:
            return False
        if self.text_contains is not None:
            text = record.get("text")
            if not isinstance(text, str) or self.text_contains.lower() not in text.lower():
                return False
        return True


def publish_did_web(network: Network, did: str, url: str, key: Keypair) -> DidDocument:
    """Serve a did:web document for a service at its host's well-known path."""
    doc = DidDocument(did, host_of(url), url.rstrip("/"), key.public_key)
    network.publish(f"https://{did.removeprefix('did:web:')}/.well-known/did.json", json.dumps(doc.to_json()))
    return doc


class Labeler:
    def __init__(
        self,
        url: str,
        network: Network,
        key: Keypair,
        rules: Iterable[Rule] = (),
        *,
        relay_url: str | None = None,
        retention: int = 100_000,
    ):
        self.url = url.rstrip("/")
        self.did = f"did:web:{host_of(url)}"
        self.network = network
        self.key = key
        self.rules = list(rules)
        self.labels: EventLog[LabelEvent] = EventLog(retention)
        # uri -> val -> latest non-negated label
        self.active: dict[str, dict[str, Label]] = {}
        self._firehose = StreamClient(network, relay_url, "firehose_subscribe", self.url) if relay_url else None
        publish_did_web(network, self.did, self.url, key)
        network.serve(self.url, self)

    def emit(self, uri: str, val: str, cid: Cid | None = None, neg: bool = False) -> Label:
        label = Label(self.did, uri, cid, val, neg, self.network.clock.iso()).signed(self.key)
        if neg:
            self.active.get(uri, {}).pop(val, None)
        else:
            self.active.setdefault(uri, {})[val] = label
        self.labels.append(lambda seq: LabelEvent(seq, label))
        return label

    def run(self, limit: int | None = None) -> int:
        """Pull the firehose once and label what the rules match."""
        if self._firehose is None:
            return 0
        items = self._firehose.pull(limit)
        for item in items:
            if not isinstance(item, OutdatedCursor):
                self.process(item)
        return len(items)

    def process(self, event: RepoEvent) -> None:
        for op in event.ops:
            uri = f"at://{event.did}/{op.path}"
            collection = op.path.split("/", 1)[0]
            if op.action == DELETE:
                wanted: set[str] = set()
            else:
                record = event.record(op)
                wanted = {r.val for r in self.rules if r.matches(event.did, collection, record)}
            current = set(self.active.get(uri, ()))
            for val in sorted(current - wanted):
                self.emit(uri, val, neg=True)
            for val in sorted(wanted - current):
                self.emit(uri, val, op.cid)

    # serving

    def subscribe_labels(self, cursor: int | None = 0) -> Subscription[LabelEvent]:
        return self.labels.subscribe(cursor)

    def query_labels(self, cursor: int = 0, limit: int | None = None) -> list[LabelEvent]:
        events, _ = self.labels.read(cursor, limit)
        return events
