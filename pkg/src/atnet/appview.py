"""App view: materializes threads, counts, graphs and timelines from the firehose.

Indexes hold every live record as published. Blocks, threadgates, takedowns,
mutes and labels are applied when a query is answered, so reversing any of
them restores visibility without re-ingesting anything.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Any

from atnet import codec, lexicon
from atnet.codec import Cid
from atnet.events import DELETE, RepoEvent
from atnet.identity import (
    INVALID,
    RESOLUTION_ERROR,
    UNCHECKED,
    DidDocument,
    HandleStatus,
    IdentityError,
    resolve_did,
    verify_handle,
)
from atnet.labeler import BadLabelSignature, Label
from atnet.lexicon import MalformedUri, parse_at_uri
from atnet.net import PLC_URL, Network, Unreachable, host_of
from atnet.repo import import_archive
from atnet.stream import OutdatedCursor, StreamClient

logger = logging.getLogger(__name__)

INVALID_HANDLE = "handle.invalid"
SHOW, WARN, HIDE = "show", "warn", "hide"
DAY_US = 24 * 3600 * 1_000_000


class AppViewError(Exception):
    pass


class NotFound(AppViewError, KeyError):
    pass


class Takedown(AppViewError):
    pass


class UnknownDid(AppViewError, KeyError):
    pass


class Unauthorized(AppViewError):
    pass


class GeneratorUnavailable(AppViewError):
    def __init__(self, message: str):
        super().__init__(message)
        self.fallback: dict[str, Any] = {"feed": [], "cursor": None}


class BadCursor(AppViewError, ValueError):
    pass


@dataclass(frozen=True)
class ViewerContext:
    """Per-query moderation settings. Nothing here is stored by the app view."""

    viewer: str | None = None
    muted: frozenset[str] = frozenset()
    muted_threads: frozenset[str] = frozenset()
    mute_lists: tuple[str, ...] = ()
    label_prefs: dict[str, str] = field(default_factory=dict)
    labelers: tuple[str, ...] = ()

    @classmethod
    def from_preferences(cls, viewer: str | None, prefs: dict[str, Any]) -> ViewerContext:
        return cls(
            viewer,
            frozenset(prefs.get("muted", ())),
            frozenset(prefs.get("mutedThreads", ())),
            tuple(prefs.get("muteLists", ())),
            dict(prefs.get("labelPrefs", {})),
            tuple(prefs.get("labelers", ())),
        )


ANONYMOUS = ViewerContext()


@dataclass
class Row:
    uri: str
    did: str
    collection: str
    rkey: str
    cid: Cid
    value: dict[str, Any]

    @property
    def created_at(self) -> str:
        return self.value.get("createdAt", "")


def _subject_uri(value: dict[str, Any]) -> str:
    return value["subject"]["uri"]


def _add_to(index: dict, key, item) -> None:
    index.setdefault(key, set()).add(item)


def _remove_from(index: dict, key, item) -> None:
    bucket = index.get(key)
    if bucket is not None:
        bucket.discard(item)
        if not bucket:
            del index[key]


class AppView:
    def __init__(
        self,
        url: str,
        network: Network,
        *,
        relay_url: str | None = None,
        admin_token: str = "admin",
        plc_url: str = PLC_URL,
        handle_interval_us: int = DAY_US,
        feed_timeout: float = 2.0,
    ):
        self.url = url.rstrip("/")
        self.host = host_of(url)
        self.network = network
        self.clock = network.clock
        self.relay_url = relay_url
        self.plc_url = plc_url
        self.admin_token = admin_token
        self.handle_interval_us = handle_interval_us
        self.feed_timeout = feed_timeout
        self._lock = threading.RLock()

        self.records: dict[str, Row] = {}
        self.by_did: dict[str, set[str]] = {}
        self.posts_by: dict[str, set[str]] = {}
        self.replies: dict[str, set[str]] = {}
        self.likes: dict[str, set[str]] = {}
        self.reposts: dict[str, set[str]] = {}
        self.reposts_by: dict[str, set[str]] = {}
        self.follows: dict[str, dict[str, set[str]]] = {}
        self.followers: dict[str, dict[str, set[str]]] = {}
        self.block_pairs: dict[tuple[str, str], set[str]] = {}
        self.gates: dict[str, set[str]] = {}
        self.list_members: dict[str, dict[str, set[str]]] = {}

        self.labels: dict[str, dict[str, dict[str, Label]]] = {}
        self.takedowns: set[str] = set()
        self.handles: dict[str, HandleStatus] = {}
        self.known: set[str] = set()
        self.processed: set[tuple[str, Cid]] = set()
        self.malformed = 0
        self.ignored = 0
        self._docs: dict[str, DidDocument] = {}
        self._blobs: dict[Cid, bytes] = {}
        self._firehose = (
            StreamClient(network, relay_url, "firehose_subscribe", self.url) if relay_url else None
        )
        self._labelers: dict[str, StreamClient] = {}
        network.serve(self.url, self)

    # ingestion

    def run(self, limit: int | None = None) -> int:
        """Pull the firehose and label streams once; returns items handled."""
        handled = 0
        if self._firehose is not None:
            items = self._firehose.pull(limit)
            for item in items:
                if isinstance(item, OutdatedCursor):
                    self.resync_all()
                else:
                    self.ingest_event(item)
            handled += len(items)
        for src in sorted(self._labelers):
            for item in self._labelers[src].pull(limit):
                handled += 1
                if isinstance(item, OutdatedCursor):
                    continue
                try:
                    self.ingest_label(item.label)
                except BadLabelSignature:
                    logger.warning("dropped label with bad signature from %s", src)
        return handled

    def ingest_event(self, event: RepoEvent) -> None:
        with self._lock:
            key = (event.did, event.commit)
            if key in self.processed:
                return
            self.processed.add(key)
            self.known.add(event.did)
            for op in event.ops:
                uri = f"at://{event.did}/{op.path}"
                if op.action == DELETE:
                    self._remove(uri)
                    continue
                try:
                    value = event.record(op)
                except (KeyError, codec.CodecError):
                    self.malformed += 1
                    continue
                self._put(event.did, op.path, op.cid, value)

    def _put(self, did: str, path: str, cid: Cid, value: Any) -> None:
        uri = f"at://{did}/{path}"
        existing = self.records.get(uri)
        if existing is not None and existing.cid == cid:
            return
        self._remove(uri)
        collection, _, rkey = path.partition("/")
        if collection not in lexicon.SCHEMAS:
            self.ignored += 1
            return
        if not lexicon.validate_record(collection, value).ok:
            self.malformed += 1
            return
        row = Row(uri, did, collection, rkey, cid, value)
        self.records[uri] = row
        _add_to(self.by_did, did, uri)
        self._index(row, add=True)

    def _remove(self, uri: str) -> None:
        row = self.records.pop(uri, None)
        if row is None:
            return
        _remove_from(self.by_did, row.did, uri)
        self._index(row, add=False)

    def _index(self, row: Row, add: bool) -> None:
        op = _add_to if add else _remove_from
        value = row.value
        if row.collection == lexicon.POST:
            op(self.posts_by, row.did, row.uri)
            if "reply" in value:
                op(self.replies, value["reply"]["parent"]["uri"], row.uri)
        elif row.collection == lexicon.LIKE:
            op(self.likes, _subject_uri(value), row.uri)
        elif row.collection == lexicon.REPOST:
            op(self.reposts, _subject_uri(value), row.uri)
            op(self.reposts_by, row.did, row.uri)
        elif row.collection == lexicon.FOLLOW:
            op(self.follows.setdefault(row.did, {}), value["subject"], row.uri)
            op(self.followers.setdefault(value["subject"], {}), row.did, row.uri)
        elif row.collection == lexicon.BLOCK:
            op(self.block_pairs, (row.did, value["subject"]), row.uri)
        elif row.collection == lexicon.THREADGATE:
            op(self.gates, value["post"], row.uri)
        elif row.collection == lexicon.LISTITEM:
            op(self.list_members.setdefault(value["list"], {}), value["subject"], row.uri)

    def resync_all(self) -> None:
        """Rebuild every account's rows from the relay's replicas (after a gap)."""
        relay = self.network.connect(self.relay_url, self.url)
        for did, _ in relay.list_repos():
            self.resync(did, relay.get_replica(did))

    def resync(self, did: str, archive: bytes) -> None:
        repo = import_archive(archive, did=did)
        with self._lock:
            self.known.add(did)
            for uri in sorted(self.by_did.get(did, ())):
                self._remove(uri)
            for path, cid in repo.record_cids():
                self._put(did, path, cid, codec.decode(repo.store[cid]))

    # identity

    def _resolver(self):
        return self.network.resolver(self.url, self.plc_url)

    def _document(self, did: str, refresh: bool = False) -> DidDocument:
        if refresh or did not in self._docs:
            self._docs[did] = resolve_did(did, self._resolver())
        return self._docs[did]

    def handle_of(self, did: str) -> str | None:
        try:
            return self._document(did).handle
        except IdentityError:
            return None

    def check_handles(self, force: bool = False) -> dict[str, HandleStatus]:
        """Re-verify handles whose last check is older than the cadence."""
        now = self.clock.now()
        with self._lock:
            for did in sorted(self.known):
                last = self.handles.get(did)
                if not force and last is not None and now - last.checked_at < self.handle_interval_us:
                    continue
                env = self._resolver()
                try:
                    doc = self._document(did, refresh=True)
                except IdentityError:
                    handle = last.handle if last else ""
                    self.handles[did] = HandleStatus(handle, did, INVALID, now, RESOLUTION_ERROR)
                    continue
                self.handles[did] = verify_handle(doc.handle, did, env)
            return dict(self.handles)

    def handle_status(self, did: str) -> str:
        status = self.handles.get(did)
        return status.state if status else UNCHECKED

    def display_handle(self, did: str) -> str:
        status = self.handles.get(did)
        if status is not None and status.state == INVALID:
            return INVALID_HANDLE
        return self.handle_of(did) or INVALID_HANDLE

    # labels

    def subscribe_labeler(self, did: str) -> None:
        doc = self._document(did)
        self._labelers[did] = StreamClient(self.network, doc.pds_url, "subscribe_labels", self.url, cursor=0)

    def ingest_label(self, label: Label) -> None:
        try:
            ok = label.verify(self._document(label.src).signing_key)
            if not ok:
                ok = label.verify(self._document(label.src, refresh=True).signing_key)
        except IdentityError as exc:
            raise BadLabelSignature(f"cannot resolve {label.src}: {exc}") from exc
        if not ok:
            raise BadLabelSignature(f"label {label.val} on {label.uri} from {label.src}")
        with self._lock:
            by_src = self.labels.setdefault(label.uri, {}).setdefault(label.src, {})
            if label.neg:
                by_src.pop(label.val, None)
            else:
                by_src[label.val] = label

    def _label_values(self, subject: str, ctx: ViewerContext) -> set[str]:
        by_src = self.labels.get(subject, {})
        return {val for src in ctx.labelers for val in by_src.get(src, {})}

    # moderation

    def admin_takedown(self, subject: str, token: str) -> None:
        self._admin(token)
        with self._lock:
            self.takedowns.add(subject)

    def reverse_takedown(self, subject: str, token: str) -> None:
        self._admin(token)
        with self._lock:
            self.takedowns.discard(subject)

    def _admin(self, token: str) -> None:
        if token != self.admin_token:
            raise Unauthorized("operator credential required")

    def blocked(self, a: str, b: str) -> bool:
        return (a, b) in self.block_pairs or (b, a) in self.block_pairs

    def _live(self, row: Row) -> bool:
        return row.uri not in self.takedowns and row.did not in self.takedowns

    def _follows(self, a: str, b: str) -> bool:
        return b in self.follows.get(a, {})

    def _gate(self, root: Row) -> Row | None:
        candidates = [self.records[u] for u in sorted(self.gates.get(root.uri, ()))]
        return next((g for g in candidates if g.did == root.did), None)

    def _gate_allows(self, root: Row, replier: str) -> bool:
        if replier == root.did:
            return True
        gate = self._gate(root)
        if gate is None:
            return True
        for rule in gate.value["allow"]:
            kind = rule["rule"]
            if kind == "following" and self._follows(root.did, replier):
                return True
            if kind == "mention":
                handle = self.handle_of(replier)
                if handle and f"@{handle}" in root.value.get("text", ""):
                    return True
            if kind == "list":
                target = rule.get("list")
                if target and parse_at_uri(target).did == root.did and replier in self.list_members.get(target, {}):
                    return True
        return False

    def post_visible(self, row: Row) -> bool:
        """Visible to every viewer: not taken down, not a blocked or gated reply."""
        if not self._live(row):
            return False
        reply = row.value.get("reply")
        if reply is None:
            return True
        for ref in (reply["parent"], reply["root"]):
            try:
                author = parse_at_uri(ref["uri"]).did
            except MalformedUri:
                return False
            if self.blocked(row.did, author):
                return False
        root = self.records.get(reply["root"]["uri"])
        if root is not None and root.collection == lexicon.POST and not self._gate_allows(root, row.did):
            return False
        return True

    def _muted(self, ctx: ViewerContext, did: str) -> bool:
        if did in ctx.muted:
            return True
        return any(did in self.list_members.get(lst, {}) for lst in ctx.mute_lists)

    def _thread_root(self, row: Row) -> str:
        reply = row.value.get("reply")
        return reply["root"]["uri"] if reply else row.uri

    def _hidden_reason(self, ctx: ViewerContext, row: Row) -> str | None:
        """Why this viewer should not see the post, or None."""
        if ctx.viewer is not None and self.blocked(ctx.viewer, row.did):
            return "blocked"
        if self._muted(ctx, row.did) or self._thread_root(row) in ctx.muted_threads:
            return "muted"
        vals = self._label_values(row.uri, ctx) | self._label_values(row.did, ctx)
        if any(ctx.label_prefs.get(v) == HIDE for v in vals):
            return "hidden"
        return None

    def _interaction_visible(self, row: Row, target_author: str) -> bool:
        return self._live(row) and not self.blocked(row.did, target_author)

    # aggregates

    def like_count(self, uri: str) -> int:
        return len(self._likers(uri))

    def _likers(self, uri: str) -> set[str]:
        author = parse_at_uri(uri).did
        rows = (self.records[u] for u in self.likes.get(uri, ()))
        return {r.did for r in rows if self._interaction_visible(r, author)}

    def repost_count(self, uri: str) -> int:
        author = parse_at_uri(uri).did
        rows = (self.records[u] for u in self.reposts.get(uri, ()))
        return sum(1 for r in rows if self._interaction_visible(r, author))

    def _visible_replies(self, uri: str) -> list[Row]:
        rows = [self.records[u] for u in self.replies.get(uri, ())]
        return sorted((r for r in rows if self.post_visible(r)), key=lambda r: (r.created_at, r.uri))

    def post_view(self, row: Row, ctx: ViewerContext = ANONYMOUS) -> dict[str, Any]:
        value = row.value
        reply = value.get("reply")
        images = value.get("embed", {}).get("images", []) if isinstance(value.get("embed"), dict) else []
        vals = self._label_values(row.uri, ctx) | self._label_values(row.did, ctx)
        return {
            "uri": row.uri,
            "cid": str(row.cid),
            "author": {"did": row.did, "handle": self.display_handle(row.did)},
            "text": value["text"],
            "createdAt": row.created_at,
            "reply": {"root": reply["root"]["uri"], "parent": reply["parent"]["uri"]} if reply else None,
            "images": [
                {"cid": str(img["image"]["ref"]), "mimeType": img["image"]["mimeType"], "alt": img.get("alt", "")}
                for img in images
            ],
            "likeCount": self.like_count(row.uri),
            "repostCount": self.repost_count(row.uri),
            "replyCount": len(self._visible_replies(row.uri)),
            "labels": sorted(vals),
            "warnings": sorted(v for v in vals if ctx.label_prefs.get(v) == WARN),
        }

    def _post(self, uri: str) -> Row:
        row = self.records.get(uri)
        if row is None or row.collection != lexicon.POST:
            raise NotFound(uri)
        if not self._live(row):
            raise Takedown(uri)
        return row

    # queries

    def get_post(self, uri: str, ctx: ViewerContext = ANONYMOUS) -> dict[str, Any]:
        with self._lock:
            return self.post_view(self._post(uri), ctx)

    def get_thread(self, uri: str, ctx: ViewerContext = ANONYMOUS) -> dict[str, Any]:
        with self._lock:
            row = self._post(uri)
            root = self.records.get(self._thread_root(row))
            if root is None or root.collection != lexicon.POST or not self._live(root):
                root = row
            return self._thread_node(root, ctx, set())

    def _thread_node(self, row: Row, ctx: ViewerContext, seen: set[str]) -> dict[str, Any]:
        seen.add(row.uri)
        reason = self._hidden_reason(ctx, row)
        if reason is not None:
            return {"uri": row.uri, "collapsed": reason, "replies": []}
        children = [c for c in self._visible_replies(row.uri) if c.uri not in seen]
        return {
            "post": self.post_view(row, ctx),
            "replies": [self._thread_node(c, ctx, seen) for c in children],
        }

    def get_timeline(self, viewer: str, ctx: ViewerContext | None = None, cursor: str | None = None,
                     limit: int = 50) -> dict[str, Any]:
        """Posts and reposts by followed accounts, newest first.

        Items sort by (createdAt, item uri) descending; a reposted post that
        already appeared earlier in the walk is skipped.
        """
        ctx = ctx or ViewerContext(viewer)
        with self._lock:
            if viewer not in self.known:
                raise UnknownDid(viewer)
            items = self._timeline_items(viewer, ctx)
            if cursor is not None:
                try:
                    when, uri = cursor.split("::", 1)
                except ValueError as exc:
                    raise BadCursor(cursor) from exc
                items = [it for it in items if (it[0], it[1]) < (when, uri)]
            page = items[:limit]
            next_cursor = f"{page[-1][0]}::{page[-1][1]}" if len(items) > limit and page else None
            feed = []
            for when, item_uri, post_uri, reposter in page:
                entry = {"post": self.post_view(self.records[post_uri], ctx), "reason": None}
                if reposter is not None:
                    entry["reason"] = {"repostBy": reposter, "uri": item_uri, "indexedAt": when}
                feed.append(entry)
            return {"feed": feed, "cursor": next_cursor}

    def _timeline_items(self, viewer: str, ctx: ViewerContext) -> list[tuple[str, str, str, str | None]]:
        items = []
        for did in self.follows.get(viewer, {}):
            for uri in self.posts_by.get(did, ()):
                post = self.records[uri]
                if self.post_visible(post) and self._hidden_reason(ctx, post) is None:
                    items.append((post.created_at, uri, uri, None))
            for uri in self.reposts_by.get(did, ()):
                repost = self.records[uri]
                subject = self.records.get(_subject_uri(repost.value))
                if subject is None or subject.collection != lexicon.POST:
                    continue
                if not self._interaction_visible(repost, subject.did) or not self.post_visible(subject):
                    continue
                if self._hidden_reason(ctx, subject) is not None:
                    continue
                items.append((repost.created_at, uri, subject.uri, did))
        items.sort(reverse=True)
        seen: set[str] = set()
        out = []
        for item in items:
            if item[2] not in seen:
                seen.add(item[2])
                out.append(item)
        return out

    def _require_known(self, did: str) -> None:
        if did not in self.known:
            raise UnknownDid(did)
        if did in self.takedowns:
            raise Takedown(did)

    def get_followers(self, did: str) -> list[str]:
        with self._lock:
            self._require_known(did)
            return sorted(
                a for a in self.followers.get(did, {}) if a not in self.takedowns and not self.blocked(a, did)
            )

    def get_follows(self, did: str) -> list[str]:
        with self._lock:
            self._require_known(did)
            return sorted(
                b for b in self.follows.get(did, {}) if b not in self.takedowns and not self.blocked(did, b)
            )

    def get_likes(self, uri: str) -> list[str]:
        with self._lock:
            self._post(uri)
            return sorted(self._likers(uri))

    def get_profile(self, did: str) -> dict[str, Any]:
        with self._lock:
            self._require_known(did)
            profile = self.records.get(f"at://{did}/{lexicon.PROFILE}/self")
            value = profile.value if profile else {}
            posts = [self.records[u] for u in self.posts_by.get(did, ())]
            return {
                "did": did,
                "handle": self.display_handle(did),
                "handleState": self.handle_status(did),
                "displayName": value.get("displayName"),
                "description": value.get("description"),
                "followersCount": len(self.get_followers(did)),
                "followsCount": len(self.get_follows(did)),
                "postsCount": sum(1 for p in posts if self.post_visible(p)),
            }

    def get_feed(self, feed_uri: str, ctx: ViewerContext = ANONYMOUS, cursor: str | None = None,
                 limit: int = 50) -> dict[str, Any]:
        with self._lock:
            gen = self.records.get(feed_uri)
            if gen is None or gen.collection != lexicon.GENERATOR or not self._live(gen):
                raise NotFound(feed_uri)
            service_did = gen.value["did"]
        try:
            doc = self._document(service_did)
            service = self.network.connect(doc.pds_url, self.url, timeout=self.feed_timeout)
            skeleton = service.get_skeleton(feed_uri, cursor, limit, ctx.viewer)
        except (IdentityError, Unreachable) as exc:
            raise GeneratorUnavailable(f"{service_did}: {exc}") from exc
        except KeyError as exc:
            raise NotFound(feed_uri) from exc
        with self._lock:
            feed = []
            for uri in skeleton.posts:
                row = self.records.get(uri)
                if row is None or row.collection != lexicon.POST or not self.post_visible(row):
                    continue
                if self._hidden_reason(ctx, row) is not None:
                    continue
                feed.append({"post": self.post_view(row, ctx), "reason": None})
            return {"feed": feed, "cursor": skeleton.cursor}

    # blobs

    def get_blob(self, did: str, cid: Cid) -> bytes:
        """Fetch from the account's current PDS on first use, then serve from cache."""
        if cid in self._blobs:
            return self._blobs[cid]
        for refresh in (False, True):
            try:
                doc = self._document(did, refresh=refresh)
                data = self.network.connect(doc.pds_url, self.url).get_blob(did, cid)
            except (IdentityError, Unreachable, KeyError):
                continue
            if codec.cid_of(data, codec.RAW) == cid:
                self._blobs[cid] = data
                return data
        raise NotFound(str(cid))

    # introspection for tests and the CLI

    def rows(self, collection: str | None = None) -> Iterable[Row]:
        return (r for r in self.records.values() if collection is None or r.collection == collection)
