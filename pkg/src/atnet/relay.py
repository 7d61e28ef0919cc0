"""Relay: crawls PDSes, verifies every commit, keeps replicas, emits the firehose."""

from __future__ import annotations

import logging
import random
from collections import ChainMap, Counter
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from atnet.codec import Cid
from atnet.events import (
    BAD_BLOCKS,
    BAD_SIGNATURE,
    DUPLICATE,
    POLICY,
    STALE_PREV,
    EventOp,
    RepoEvent,
    event_commit,
    verify_event,
)
from atnet.identity import IdentityError, resolve_did
from atnet.net import PLC_URL, Network, Unreachable, host_of
from atnet.repo import BlockStore, CorruptArchive, Repository, diff, export_archive, import_archive
from atnet.repo.archive import write_car
from atnet.repo.mst import MalformedNode, MissingBlock
from atnet.stream import EventLog, OutdatedCursor, StreamClient, Subscription

logger = logging.getLogger(__name__)

Policy = Callable[[str, str, Any], bool]


class RelayError(Exception):
    pass


class FetchFailed(RelayError):
    pass


class VerifyFailed(RelayError):
    pass


class UnknownRepo(RelayError, KeyError):
    pass


def allow_all(did: str, path: str, record: Any) -> bool:
    return True


def denylist_policy(words: list[str]) -> Policy:
    """Drop any record whose ``text`` contains one of ``words``."""
    lowered = [w.lower() for w in words]

    def policy(did: str, path: str, record: Any) -> bool:
        text = record.get("text") if isinstance(record, dict) else None
        return not (isinstance(text, str) and any(w in text.lower() for w in lowered))

    return policy


@dataclass
class Replica:
    did: str
    head: Cid
    data: Cid
    store: BlockStore
    seen: set[Cid] = field(default_factory=set)

    def repository(self) -> Repository:
        return Repository.load(self.did, self.store, self.head)


@dataclass(frozen=True)
class Dropped:
    reason: str


@dataclass
class Lane:
    url: str
    client: StreamClient


class Relay:
    def __init__(
        self,
        url: str,
        network: Network,
        *,
        plc_url: str = PLC_URL,
        retention: int = 10_000,
        policy: Policy = allow_all,
        log_path: str | Path | None = None,
    ):
        self.url = url.rstrip("/")
        self.host = host_of(url)
        self.network = network
        self.clock = network.clock
        self.plc_url = plc_url
        self.policy = policy
        self.lanes: dict[str, Lane] = {}
        self.replicas: dict[str, Replica] = {}
        self.firehose: EventLog[RepoEvent] = EventLog(
            retention, log_path, dump=RepoEvent.to_bytes, load=RepoEvent.from_bytes
        )
        self.drops: Counter[str] = Counter()
        self.backoff: dict[str, tuple[int, int]] = {}
        self.pending_recrawl: set[str] = set()
        self._keys: dict[str, str] = {}
        network.serve(self.url, self)

    # identity

    def _resolve(self, did: str):
        try:
            return resolve_did(did, self.network.resolver(self.url, self.plc_url))
        except IdentityError as exc:
            raise FetchFailed(f"cannot resolve {did}: {exc}") from exc

    def _signing_key(self, did: str, refresh: bool = False) -> str:
        if refresh or did not in self._keys:
            self._keys[did] = self._resolve(did).signing_key
        return self._keys[did]

    # crawling

    def register_pds(self, url: str) -> None:
        url = url.rstrip("/")
        if url in self.lanes:
            return
        try:
            pds = self.network.connect(url, self.url)
        except Unreachable:
            attempts = self.backoff.get(url, (0, 0))[0] + 1
            retry_at = self.clock.now() + (2 ** min(attempts, 10)) * 1_000_000
            self.backoff[url] = (attempts, retry_at)
            raise
        self.backoff.pop(url, None)
        lane = Lane(url, StreamClient(self.network, url, "subscribe_repos", self.url, cursor=pds.seq))
        self.lanes[url] = lane
        for did, _ in pds.sync_list_repos():
            try:
                self._sync_from(did, pds)
            except RelayError as exc:
                logger.warning("backfill of %s from %s failed: %s", did, url, exc)
        logger.info("registered %s", url)

    def retry_registrations(self) -> None:
        for url, (_, retry_at) in list(self.backoff.items()):
            if self.clock.now() >= retry_at:
                try:
                    self.register_pds(url)
                except Unreachable:
                    pass

    def recrawl(self, did: str) -> list[RepoEvent]:
        doc = self._resolve(did)
        self._keys[did] = doc.signing_key
        try:
            pds = self.network.connect(doc.pds_url, self.url)
        except Unreachable as exc:
            raise FetchFailed(str(exc)) from exc
        return self._sync_from(did, pds)

    def _sync_from(self, did: str, pds) -> list[RepoEvent]:
        try:
            archive = pds.sync_get_repo(did)
        except Exception as exc:
            raise FetchFailed(f"{did}: {exc}") from exc
        key = self._signing_key(did)
        try:
            fetched = import_archive(archive, did=did, public_key=key)
        except CorruptArchive:
            try:
                fetched = import_archive(archive, did=did, public_key=self._signing_key(did, refresh=True))
            except CorruptArchive as exc:
                raise VerifyFailed(f"{did}: {exc}") from exc
        self.pending_recrawl.discard(did)
        replica = self.replicas.get(did)
        if replica is not None and replica.head == fetched.head:
            return []
        old_root = replica.data if replica else None
        blocks = ChainMap(dict(fetched.store.items()), replica.store) if replica else fetched.store
        try:
            changes = diff(old_root, fetched.data_root, blocks).changes()
        except (MissingBlock, MalformedNode) as exc:
            raise VerifyFailed(f"{did}: {exc}") from exc
        ops = tuple(
            EventOp("create" if c.old is None else "delete" if c.new is None else "update", c.path, c.new)
            for c in changes
        )
        # spans an unknown number of commits, so carry the whole tree
        carried = write_car(fetched.head, fetched.reachable_blocks())
        event = RepoEvent(0, did, fetched.head, replica.head if replica else None, ops, carried, self.clock.now())
        if replica is None:
            replica = self.replicas[did] = Replica(did, fetched.head, fetched.data_root, BlockStore())
        replica.store.put_many(dict(fetched.store.items()))
        emitted = self._advance(replica, event, fetched.head, fetched.data_root)
        return [emitted] if isinstance(emitted, RepoEvent) else []

    # ingestion

    def ingest(self, event: RepoEvent, source: str | None = None) -> RepoEvent | Dropped:
        replica = self.replicas.get(event.did)
        if replica is not None and event.commit in replica.seen:
            return self._drop(DUPLICATE)
        try:
            key = self._signing_key(event.did)
        except FetchFailed:
            return self._drop(BAD_SIGNATURE)
        reason = verify_event(event, key)
        if reason == BAD_SIGNATURE:
            try:
                reason = verify_event(event, self._signing_key(event.did, refresh=True))
            except FetchFailed:
                pass
        if reason is not None:
            return self._drop(reason)
        expected_prev = replica.head if replica else None
        if event.prev != expected_prev:
            self.pending_recrawl.add(event.did)
            return self._drop(STALE_PREV)
        commit = event_commit(event)
        carried = event.block_map()
        blocks = ChainMap(carried, replica.store) if replica else carried
        try:
            changes = diff(replica.data if replica else None, commit.data, blocks).changes()
        except (MissingBlock, MalformedNode):
            return self._drop(BAD_BLOCKS)
        claimed = sorted((op.path, op.cid) for op in event.ops)
        if claimed != sorted((c.path, c.new) for c in changes):
            return self._drop(BAD_BLOCKS)
        if replica is None:
            replica = self.replicas[event.did] = Replica(event.did, event.commit, commit.data, BlockStore())
        replica.store.put_many(carried)
        return self._advance(replica, event, event.commit, commit.data)

    def _advance(self, replica: Replica, event: RepoEvent, head: Cid, data: Cid) -> RepoEvent | Dropped:
        replica.head = head
        replica.data = data
        replica.seen.add(head)
        for op in event.ops:
            if op.cid is not None and not self.policy(event.did, op.path, event.record(op)):
                return self._drop(POLICY)
        return self.firehose.append(
            lambda seq: replace(event, seq=seq, verified=True, time=self.clock.now())
        )

    def _drop(self, reason: str) -> Dropped:
        self.drops[reason] += 1
        return Dropped(reason)

    def poll(self, limit: int | None = None, rng: random.Random | None = None) -> int:
        """Pull once from every lane (in random order if ``rng``); returns items handled."""
        self.retry_registrations()
        lanes = list(self.lanes.values())
        if rng is not None:
            rng.shuffle(lanes)
        handled = 0
        for lane in lanes:
            handled += self.poll_lane(lane.url, limit)
        handled += self.run_pending_recrawls()
        return handled

    def poll_lane(self, url: str, limit: int | None = None) -> int:
        lane = self.lanes[url]
        items = lane.client.pull(limit)
        for item in items:
            if isinstance(item, OutdatedCursor):
                self._recrawl_host(url)
            else:
                self.ingest(item, url)
        return len(items)

    def _recrawl_host(self, url: str) -> None:
        try:
            pds = self.network.connect(url, self.url)
        except Unreachable:
            return
        for did, _ in pds.sync_list_repos():
            self.pending_recrawl.add(did)

    def run_pending_recrawls(self) -> int:
        done = 0
        for did in sorted(self.pending_recrawl):
            try:
                self.recrawl(did)
                done += 1
            except RelayError as exc:
                logger.info("re-crawl of %s deferred: %s", did, exc)
        return done

    def disconnect(self, url: str) -> None:
        self.lanes[url.rstrip("/")].client.disconnect()

    # serving

    def firehose_subscribe(self, cursor: int | None = None) -> Subscription[RepoEvent]:
        return self.firehose.subscribe(cursor)

    def get_replica(self, did: str) -> bytes:
        replica = self.replicas.get(did)
        if replica is None:
            raise UnknownRepo(did)
        return export_archive(replica.repository())

    def replica_records(self, did: str) -> dict[str, Cid]:
        return dict(self.replicas[did].repository().record_cids())

    def list_repos(self) -> list[tuple[str, Cid]]:
        return [(did, r.head) for did, r in self.replicas.items()]
