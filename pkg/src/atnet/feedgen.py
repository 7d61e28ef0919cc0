"""Feed generators: independent services that pick posts and return their URIs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

from atnet import lexicon
from atnet.crypto import Keypair
from atnet.events import DELETE, RepoEvent
from atnet.labeler import publish_did_web
from atnet.net import Network, host_of
from atnet.stream import OutdatedCursor, StreamClient

logger = logging.getLogger(__name__)


class UnknownFeed(KeyError):
    pass


class BadCursor(ValueError):
    pass


@dataclass(frozen=True)
class FeedRule:
    """Posts by ``authors`` (any author if None) containing ``hashtag`` (any if None)."""

    hashtag: str | None = None
    authors: frozenset[str] | None = None

    def matches(self, did: str, record: Any) -> bool:
        if self.authors is not None and did not in self.authors:
            return False
        if self.hashtag is None:
            return True
        text = record.get("text", "") if isinstance(record, dict) else ""
        tag = "#" + self.hashtag.lstrip("#").lower()
        return tag in (word.rstrip(".,!?;:").lower() for word in text.split())


@dataclass(frozen=True)
class FeedSkeleton:
    feed: str
    posts: list[str]
    cursor: str | None


class FeedGenerator:
    def __init__(self, url: str, network: Network, key: Keypair, *, relay_url: str | None = None):
        self.url = url.rstrip("/")
        self.did = f"did:web:{host_of(url)}"
        self.network = network
        self.rules: dict[str, FeedRule] = {}
        # feed uri -> post uri -> createdAt
        self.index: dict[str, dict[str, str]] = {}
        self._firehose = StreamClient(network, relay_url, "firehose_subscribe", self.url) if relay_url else None
        publish_did_web(network, self.did, self.url, key)
        network.serve(self.url, self)

    def register_feed(self, feed_uri: str, rule: FeedRule) -> None:
        self.rules[feed_uri] = rule
        self.index.setdefault(feed_uri, {})

    def run(self, limit: int | None = None) -> int:
        if self._firehose is None:
            return 0
        items = self._firehose.pull(limit)
        for item in items:
            if not isinstance(item, OutdatedCursor):
                self.process(item)
        return len(items)

    def process(self, event: RepoEvent) -> None:
        for op in event.ops:
            if not op.path.startswith(lexicon.POST + "/"):
                continue
            uri = f"at://{event.did}/{op.path}"
            record = None if op.action == DELETE else event.record(op)
            for feed, rule in self.rules.items():
                posts = self.index[feed]
                created = record.get("createdAt") if isinstance(record, dict) else None
                if record is not None and isinstance(created, str) and rule.matches(event.did, record):
                    posts[uri] = created
                else:
                    posts.pop(uri, None)

    def get_skeleton(self, feed: str, cursor: str | None = None, limit: int = 50,
                     viewer: str | None = None) -> FeedSkeleton:
        """Newest first by (createdAt, uri). The cursor is the last key returned."""
        if feed not in self.rules:
            raise UnknownFeed(feed)
        entries = sorted(((created, uri) for uri, created in self.index[feed].items()), reverse=True)
        if cursor is not None:
            try:
                created, uri = cursor.split("::", 1)
            except ValueError as exc:
                raise BadCursor(cursor) from exc
            entries = [e for e in entries if e < (created, uri)]
        page = entries[:limit]
        more = len(entries) > limit
        next_cursor = f"{page[-1][0]}::{page[-1][1]}" if more and page else None
        return FeedSkeleton(feed, [uri for _, uri in page], next_cursor)
