"""Append-only event log of a run.

One line per event::

    <time> <worker> <EVENT> <dt-key|-> <obj-key|-> <detail|->

Times are logical and strictly increasing. The log holds no wall-clock data, so
replaying a scenario reproduces it byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

from .errors import MalformedHistory

if TYPE_CHECKING:
    from collections.abc import Iterator

    from .keys import Key

EMPTY = "-"


class EventType(StrEnum):
    READ = "READ"
    LOCK = "LOCK"
    ENTER_2LOCKED = "ENTER_2LOCKED"
    CHECK_PASS = "CHECK_PASS"
    CHECK_FAIL = "CHECK_FAIL"
    APPLY = "APPLY"
    RELEASE = "RELEASE"
    MODE = "MODE"
    COMMIT = "COMMIT"
    ABORT = "ABORT"
    WAIT_ON = "WAIT_ON"
    GC = "GC"
    CRASH = "CRASH"


@dataclass(frozen=True, slots=True)
class Event:
    time: int
    worker: str
    type: EventType
    dt: str = EMPTY
    obj: str = EMPTY
    detail: str = EMPTY

    def format(self) -> str:
        return f"{self.time} {self.worker} {self.type} {self.dt} {self.obj} {self.detail}"

    @classmethod
    def parse(cls, line: str) -> Event:
        parts = line.split(" ", 5)
        if len(parts) != 6:  # noqa: PLR2004
            msg = f"expected 6 fields, got {len(parts)}: {line!r}"
            raise MalformedHistory(msg)
        time, worker, type_, dt, obj, detail = parts
        try:
            return cls(int(time), worker, EventType(type_), dt, obj, detail)
        except ValueError as exc:
            msg = f"malformed event {line!r}: {exc}"
            raise MalformedHistory(msg) from exc


class History:
    """Ordered list of :class:`Event` with strictly increasing times."""

    def __init__(self, events: list[Event] | None = None) -> None:  # noqa: D107
        self.events: list[Event] = []
        for event in events or []:
            self._push(event)

    def _push(self, event: Event) -> None:
        if self.events and event.time <= self.events[-1].time:
            msg = f"time {event.time} does not follow {self.events[-1].time}"
            raise MalformedHistory(msg)
        self.events.append(event)

    def append(  # noqa: PLR0913
        self,
        clock: int,
        worker: str,
        type_: EventType,
        dt: Key | str | None = None,
        obj: Key | str | None = None,
        detail: str | None = None,
    ) -> Event:
        """Append an event stamped no earlier than ``clock``."""
        time = max(clock, self.events[-1].time + 1) if self.events else clock
        event = Event(
            time,
            worker,
            type_,
            EMPTY if dt is None else str(dt),
            EMPTY if obj is None else str(obj),
            detail or EMPTY,
        )
        self._push(event)
        return event

    def of_type(self, *types: EventType) -> list[Event]:
        return [event for event in self.events if event.type in types]

    def dump(self) -> str:
        return "".join(f"{event.format()}\n" for event in self.events)

    @classmethod
    def parse(cls, text: str) -> History:
        return cls([Event.parse(line) for line in text.splitlines() if line.strip()])

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


__all__ = ("EMPTY", "Event", "EventType", "History")
