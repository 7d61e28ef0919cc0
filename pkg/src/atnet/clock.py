"""Virtual time. Every service reads time from here, never from the wall clock."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)
_US = 1_000_000


class VirtualClock:
    """Integer-microsecond clock that only moves when told to.

    ``step_us`` is added on every ``tick()`` so that consecutive actions get
    distinct, ordered timestamps.
    """

    def __init__(self, start_us: int = 0, step_us: int = 1_000):
        self.us = start_us
        self.step_us = step_us

    def now(self) -> int:
        return self.us

    def tick(self) -> int:
        self.us += self.step_us
        return self.us

    def advance(self, seconds: float = 0, *, hours: float = 0) -> int:
        self.us += int(round((seconds + hours * 3600) * _US))
        return self.us

    def iso(self, us: int | None = None) -> str:
        return to_iso(self.us if us is None else us)


def to_iso(us: int) -> str:
    moment = EPOCH + timedelta(microseconds=us)
    return moment.strftime("%Y-%m-%dT%H:%M:%S.") + f"{moment.microsecond:06d}Z"


def from_iso(text: str) -> int:
    moment = datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)
    delta = moment - EPOCH
    return (delta.days * 86_400 + delta.seconds) * _US + delta.microseconds
