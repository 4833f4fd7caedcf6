"""Deterministic interleaving of simulated workers.

Each worker runs a sequence of requests; a request is a coroutine built by a
factory. The scheduler resumes one runnable worker at a time, chosen by a
seeded RNG, so a scenario always produces the same interleaving. At every
suspension point it may kill the worker (its current request is lost, the next
one starts) or deliver a soft timeout.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .errors import DTxnError, NonQuiescent, SoftTimeout
from .history import EventType
from .sim import Sleep

if TYPE_CHECKING:
    from collections.abc import Callable, Coroutine, Iterable, Iterator

    from .sim import Request, Runtime

logger = logging.getLogger(__name__)

type RequestFactory = Callable[[], Coroutine[Any, Any, Any]]

HARD_TIMEOUT = "hard-timeout"


@dataclass(slots=True)
class CrashPolicy:
    """Where workers get killed.

    Attributes:
        p_crash (float): Chance of a crash at each suspension point.
        points (tuple[str, ...]): Point-name prefixes eligible for random
            crashes; empty means every point.
        at_hits (frozenset[int]): Global hit indices that always crash.
        seed (int): Seed of the crash RNG.
        enabled (bool): Master switch.

    """

    p_crash: float = 0.0
    points: tuple[str, ...] = ()
    at_hits: frozenset[int] = frozenset()
    seed: int = 0
    enabled: bool = True
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate the crash probability and seed the crash RNG."""
        if not 0.0 <= self.p_crash <= 1.0:
            msg = f"p_crash must be within [0, 1], got {self.p_crash}"
            raise ValueError(msg)
        self.rng = random.Random(f"crash:{self.seed}")

    def should_crash(self, point: str, hit: int) -> bool:
        if not self.enabled:
            return False
        if hit in self.at_hits:
            return True
        if self.p_crash <= 0.0:
            return False
        eligible = not self.points or point.startswith(self.points)
        return self.rng.random() < self.p_crash and eligible


@dataclass(slots=True)
class Outcome:
    """How one request of a worker ended."""

    worker: str
    index: int
    value: Any = None
    error: DTxnError | None = None
    crashed: str | None = None


@dataclass(slots=True)
class Worker:
    """A simulated worker thread.

    Attributes:
        name (str): Worker id, as written in the history.
        requests (Iterator[RequestFactory]): Requests still to run, pulled lazily.
        skew (int): Offset of this worker's clock.

    """

    name: str
    requests: Iterator[RequestFactory]
    skew: int = 0
    coro: Coroutine[Any, Any, Any] | None = None
    index: int = -1
    started: int = 0
    wake: int = 0
    soft_sent: bool = False
    done: bool = False

    @classmethod
    def of(cls, name: str, requests: Iterable[RequestFactory], skew: int = 0) -> Worker:
        return cls(name, iter(requests), skew)


class Scheduler:
    """Seeded cooperative scheduler over a shared :class:`~dtxn_lab.sim.Runtime`.

    Attributes:
        hits (int): Suspension points reached so far, over all workers.
        steps (int): Resumptions so far.
        crashes (int): Workers killed so far.
        outcomes (list[Outcome]): One entry per finished or killed request.

    """

    def __init__(  # noqa: PLR0913
        self,
        runtime: Runtime,
        *,
        seed: int = 0,
        crash: CrashPolicy | None = None,
        soft_timeout: int | None = None,
        hard_timeout: int | None = None,
        max_steps: int = 1_000_000,
    ) -> None:
        """Create a scheduler.

        :param runtime: the runtime shared by every worker
        :param seed: seed of the scheduling RNG
        :param crash: crash injection, defaults to none
        :param soft_timeout: request age at which SoftTimeout is delivered
        :param hard_timeout: request age at which the request is killed
        :param max_steps: resumptions allowed before giving up
        """
        self.runtime = runtime
        self.rng = random.Random(f"schedule:{seed}")
        self.crash = crash or CrashPolicy(enabled=False)
        self.soft_timeout = soft_timeout
        self.hard_timeout = hard_timeout
        self.max_steps = max_steps
        self.workers: list[Worker] = []
        self.hits = 0
        self.steps = 0
        self.crashes = 0
        self.outcomes: list[Outcome] = []

    def spawn(self, worker: Worker) -> Worker:
        self.workers.append(worker)
        self.runtime.skews[worker.name] = worker.skew
        return worker

    def run(self) -> None:
        """Run every worker until all of them have no request left.

        Raises:
            NonQuiescent: If ``max_steps`` resumptions did not suffice.

        """
        runtime = self.runtime
        while True:
            alive = [worker for worker in self.workers if not worker.done]
            if not alive:
                return
            runnable = [worker for worker in alive if worker.wake <= runtime.clock]
            if not runnable:
                runtime.clock = min(worker.wake for worker in alive)
                continue
            self._step(self.rng.choice(runnable))
            self.steps += 1
            if self.steps > self.max_steps:
                msg = f"no quiescence after {self.max_steps} scheduling steps"
                raise NonQuiescent(msg)

    def _next_request(self, worker: Worker) -> bool:
        factory = next(worker.requests, None)
        if factory is None:
            worker.done = True
            return False
        worker.coro = factory()
        worker.index += 1
        worker.started = self.runtime.clock
        worker.soft_sent = False
        return True

    def _finish(self, worker: Worker, outcome: Outcome) -> None:
        self.outcomes.append(outcome)
        worker.coro = None

    def _kill(self, worker: Worker, why: str) -> None:
        if worker.coro is not None:
            worker.coro.close()
        self.crashes += 1
        self.runtime.record(EventType.CRASH, None, None, why)
        logger.warning("worker %s killed at %s", worker.name, why)
        self._finish(worker, Outcome(worker.name, worker.index, crashed=why))
        worker.wake = self.runtime.clock

    def _step(self, worker: Worker) -> None:
        runtime = self.runtime
        runtime.worker = worker.name
        runtime.clock += 1
        if worker.coro is None and not self._next_request(worker):
            return
        coro = worker.coro
        assert coro is not None  # noqa: S101
        age = runtime.clock - worker.started
        if self.hard_timeout is not None and age >= self.hard_timeout:
            self._kill(worker, HARD_TIMEOUT)
            return
        try:
            if self.soft_timeout is not None and age >= self.soft_timeout and not worker.soft_sent:
                worker.soft_sent = True
                request: Request = coro.throw(SoftTimeout(f"{worker.name} ran for {age} ticks"))
            else:
                request = coro.send(None)
        except StopIteration as stop:
            self._finish(worker, Outcome(worker.name, worker.index, value=stop.value))
            return
        except DTxnError as exc:
            logger.debug("request %d of %s failed: %r", worker.index, worker.name, exc)
            self._finish(worker, Outcome(worker.name, worker.index, error=exc))
            return
        hit = self.hits
        self.hits += 1
        if isinstance(request, Sleep):
            worker.wake = request.until
        if self.crash.should_crash(request.point, hit):
            self._kill(worker, request.point)


__all__ = ("HARD_TIMEOUT", "CrashPolicy", "Outcome", "RequestFactory", "Scheduler", "Worker")
