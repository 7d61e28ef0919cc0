"""Sequenced event logs with cursor-based replay and live tail."""

from __future__ import annotations

from collections import deque
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Generic, TypeVar

from atnet.net import Network, Unreachable

E = TypeVar("E")


class FutureCursor(ValueError):
    pass


@dataclass(frozen=True)
class OutdatedCursor:
    """Stream marker: the requested cursor fell out of retention.

    Events resume from ``oldest_seq``; whatever came before must be
    recovered by re-crawling.
    """

    requested: int
    oldest_seq: int


class EventLog(Generic[E]):
    """A ring buffer of sequenced events, optionally backed by a frame file.

    ``load`` and ``dump`` convert events to and from bytes when a ``path`` is
    given; on construction the tail of the file is replayed.
    """

    def __init__(
        self,
        retention: int = 10_000,
        path: str | Path | None = None,
        dump: Callable[[E], bytes] | None = None,
        load: Callable[[bytes], E] | None = None,
    ):
        self.retention = retention
        self._events: deque[E] = deque(maxlen=retention)
        self.seq = 0
        self._path = Path(path) if path is not None else None
        self._dump = dump
        self._load = load
        if self._path is not None and self._path.exists():
            self._replay()

    def _replay(self) -> None:
        data = self._path.read_bytes()
        pos = 0
        while pos < len(data):
            size = int.from_bytes(data[pos : pos + 4], "big")
            event = self._load(data[pos + 4 : pos + 4 + size])
            self._events.append(event)
            self.seq = event.seq
            pos += 4 + size

    def append(self, build: Callable[[int], E]) -> E:
        event = build(self.seq + 1)
        self.seq += 1
        self._events.append(event)
        if self._path is not None:
            frame = self._dump(event)
            with self._path.open("ab") as fh:
                fh.write(len(frame).to_bytes(4, "big") + frame)
        return event

    @property
    def oldest_seq(self) -> int:
        return self._events[0].seq if self._events else self.seq + 1

    def read(self, cursor: int, limit: int | None = None) -> tuple[list[E], OutdatedCursor | None]:
        if cursor > self.seq:
            raise FutureCursor(f"cursor {cursor} is ahead of sequence {self.seq}")
        outdated = None
        if cursor < self.oldest_seq - 1:
            outdated = OutdatedCursor(cursor, self.oldest_seq)
            cursor = self.oldest_seq - 1
        # seqs are contiguous inside the buffer
        start = cursor - (self.oldest_seq - 1)
        events = list(self._events)[start:] if start < len(self._events) else []
        if limit is not None:
            events = events[:limit]
        return events, outdated

    def subscribe(self, cursor: int | None = None) -> Subscription[E]:
        if cursor is not None and cursor > self.seq:
            raise FutureCursor(f"cursor {cursor} is ahead of sequence {self.seq}")
        return Subscription(self, self.seq if cursor is None else cursor)

    def __len__(self) -> int:
        return len(self._events)


class Subscription(Generic[E]):
    """A consumer position in an EventLog.

    ``poll`` returns everything after the cursor (replay), then on later calls
    whatever has arrived since (live tail). Each event is delivered once.
    """

    def __init__(self, log: EventLog[E], cursor: int):
        self.log = log
        self.cursor = cursor
        self.closed = False

    def poll(self, limit: int | None = None) -> list[E | OutdatedCursor]:
        if self.closed:
            return []
        events, outdated = self.log.read(self.cursor, limit)
        out: list[Any] = [outdated] if outdated else []
        out.extend(events)
        if events:
            self.cursor = events[-1].seq
        elif outdated:
            self.cursor = outdated.oldest_seq - 1
        return out

    def close(self) -> None:
        self.closed = True


class StreamClient:
    """Remote subscription that survives disconnects by resuming at its cursor."""

    def __init__(self, network: Network, url: str, method: str, origin: str | None = None,
                 cursor: int | None = 0):
        self.network = network
        self.url = url
        self.method = method
        self.origin = origin
        self.cursor = cursor
        self._sub: Subscription | None = None

    @property
    def connected(self) -> bool:
        return self._sub is not None and not self._sub.closed

    def pull(self, limit: int | None = None) -> list[Any]:
        try:
            service = self.network.connect(self.url, self.origin)
        except Unreachable:
            self.disconnect()
            return []
        if not self.connected:
            self._sub = getattr(service, self.method)(self.cursor)
        items = self._sub.poll(limit)
        self.cursor = self._sub.cursor
        return items

    def disconnect(self) -> None:
        if self._sub is not None:
            self._sub.close()
        self._sub = None
