"""Logical time and instrumented suspension points.

Protocol code is written as coroutines. Every place where a real worker could
be preempted, crash or time out awaits :meth:`Runtime.checkpoint`; waiting for
time to pass awaits :meth:`Runtime.sleep`. Whoever drives the coroutine decides
what happens at those points: :func:`drive` simply runs it to completion, the
:class:`~dtxn_lab.scheduler.Scheduler` interleaves many of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .history import History

if TYPE_CHECKING:
    from collections.abc import Coroutine, Generator

    from .history import Event, EventType
    from .keys import Key

MAIN_WORKER = "main"


@dataclass(frozen=True, slots=True)
class Checkpoint:
    """Request to yield at an instrumented point named ``module:op:step``."""

    point: str


@dataclass(frozen=True, slots=True)
class Sleep:
    """Request to be resumed once the logical clock reaches ``until``."""

    until: int
    point: str


type Request = Checkpoint | Sleep


class _Suspend:
    __slots__ = ("request",)

    def __init__(self, request: Request) -> None:
        self.request = request

    def __await__(self) -> Generator[Request, None, None]:
        yield self.request


class Runtime:
    """Logical clock, current-worker identity and history of one simulation.

    Attributes:
        clock (int): The global logical clock, advanced by the driver.
        history (History): Where protocol events are recorded.
        worker (str): Name of the worker currently running.
        skews (dict[str, int]): Per-worker offsets applied by :meth:`now`.

    """

    def __init__(self, history: History | None = None) -> None:  # noqa: D107
        self.clock = 0
        self.history = history if history is not None else History()
        self.worker = MAIN_WORKER
        self.skews: dict[str, int] = {}

    def now(self) -> int:
        """The clock as read by the current worker, skew included."""
        return self.clock + self.skews.get(self.worker, 0)

    async def checkpoint(self, point: str) -> None:
        await _Suspend(Checkpoint(point))

    async def sleep(self, ticks: int, point: str = "sim:sleep") -> None:
        """Suspend the current worker for ``ticks`` of logical time."""
        await _Suspend(Sleep(self.clock + max(ticks, 1), point))

    def record(
        self,
        type_: EventType,
        dt: Key | str | None = None,
        obj: Key | str | None = None,
        detail: str | None = None,
    ) -> Event:
        return self.history.append(self.clock, self.worker, type_, dt, obj, detail)


def drive[T](runtime: Runtime, coro: Coroutine[Any, Any, T]) -> T:
    """Run ``coro`` alone to completion, ticking the clock at every suspension."""
    while True:
        try:
            value = coro.send(None)
        except StopIteration as stop:
            return stop.value
        if isinstance(value, Sleep):
            runtime.clock = max(runtime.clock + 1, value.until)
        else:
            runtime.clock += 1


__all__ = ("MAIN_WORKER", "Checkpoint", "Request", "Runtime", "Sleep", "drive")
