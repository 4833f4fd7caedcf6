"""Run a scenario end to end.

A run sets up the workload's data, starts the history, lets the scheduler
interleave the client workers and a sweeper, and then settles the store with
extra sweeps until nothing but client data and finished transaction records is
left.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any

from .checker import count_outcomes
from .errors import DanglingLock, NonQuiescent, QueueError, ReadLockExpired
from .extension import DistributedTransactions
from .history import History
from .records import SHADOW_DELETE_KIND, SHADOW_KIND, TXN_KIND, DTRecord, user_key
from .scheduler import CrashPolicy, Scheduler, Worker
from .sim import Runtime, drive
from .store import EGStore
from .workloads import WORKLOADS

if TYPE_CHECKING:
    from collections.abc import Iterator

    from .scenario import Scenario
    from .scheduler import Outcome, RequestFactory
    from .store import Entity
    from .workloads import ClientCall, Workload

logger = logging.getLogger(__name__)

GC_WORKER = "gc"
SETTLE_WORKER = "settle"
SETTLE_ROUNDS = 4


@dataclass(slots=True)
class RunResult:
    """Everything a run produced; checks only look at the dumps and the history."""

    scenario: Scenario
    initial_dump: str
    final_dump: str
    history: History
    outcomes: list[Outcome] = field(default_factory=list)
    report: dict[str, Any] = field(default_factory=dict)


def make_workload(scenario: Scenario) -> Workload:
    size = scenario.accounts
    return WORKLOADS[scenario.workload](size)


def residue(entities: list[Entity]) -> list[str]:
    """Reasons the store is not quiescent; empty when it is."""
    problems = []
    for entity in entities:
        kind = entity.key.kind
        if kind in (SHADOW_KIND, SHADOW_DELETE_KIND):
            problems.append(f"shadow {entity.key} remains")
        elif kind == TXN_KIND:
            mode = DTRecord.from_entity(entity).mode
            if not mode.is_terminal:
                problems.append(f"{entity.key} is still in {mode}")
        if entity.write_lock is not None:
            problems.append(f"{entity.key} is locked by {entity.write_lock}")
    return problems


class ScenarioRun:
    """One execution of a scenario; see :func:`run_scenario`."""

    def __init__(self, scenario: Scenario, crash: CrashPolicy | None = None) -> None:  # noqa: D107
        self.scenario = scenario
        self.runtime = Runtime()
        self.store = EGStore(scenario.store_config())
        self.dtxn = DistributedTransactions(self.store, self.runtime, scenario.dtxn_config())
        self.workload = make_workload(scenario)
        self.crash = crash or CrashPolicy(
            p_crash=scenario.p_crash,
            points=scenario.crash_points,
            seed=scenario.seed,
        )
        self.users = [f"w{index}" for index in range(scenario.workers)]
        self.clients_left = scenario.workers

    @property
    def queues(self) -> bool:
        return self.dtxn.queues.enabled

    async def _setup(self) -> None:
        await self.workload.setup(self.dtxn)
        user = self.workload.setup_user
        if self.queues:
            await self.dtxn.catch_up(user)
            return
        for entity in self.store.ancestor_query(user_key(user)):
            if entity.key.kind == TXN_KIND:
                await self.dtxn.acknowledge(user, entity.key)

    async def _issue(self, user: str, call: ClientCall) -> DTRecord | None:
        dtxn = self.dtxn
        if self.queues:
            await dtxn.catch_up(user)
        read_lock = None
        if dtxn.read_locks.enabled and call.read_keys:
            read_lock = (await dtxn.acquire_read_lock(user, call.read_keys)).key
        try:
            record = await dtxn.run_in_transaction(
                user,
                call.function,
                *call.args,
                read_lock=read_lock,
            )
        except ReadLockExpired:
            record = await dtxn.run_in_transaction(user, call.function, *call.args)
        if record is not None and record.mode.is_terminal and not self.queues:
            await dtxn.acknowledge(user, record.key)
        return record

    def _client_requests(self, user: str, calls: list[ClientCall]) -> Iterator[RequestFactory]:
        for call in calls:
            yield lambda call=call: self._issue(user, call)
        if self.queues:
            yield lambda: self.dtxn.catch_up(user)
        self.clients_left -= 1

    def _gc_requests(self) -> Iterator[RequestFactory]:
        interval = self.scenario.gc_interval

        async def sweep() -> None:
            await self.runtime.sleep(interval, "runner:gc:wait")
            await self.dtxn.gc_sweep()

        while self.clients_left > 0:
            yield sweep

    async def _settle(self) -> bool:
        config = self.dtxn.gc_config
        horizon = (
            max(
                config.timeout_roll_forward_dt,
                config.timeout_garbage_collect_dt,
                config.timeout_garbage_collect_shadow,
                config.timeout_read_lock_dt,
            )
            + config.timeout_gae
            + self.dtxn.read_locks.pad
            + max((abs(skew) for skew in self.scenario.skews), default=0)
            + 1
        )
        for _ in range(SETTLE_ROUNDS):
            self.runtime.clock += horizon
            await self.dtxn.gc_sweep()
            if self.queues:
                for user in self.users:
                    await self.dtxn.catch_up(user)
            if not residue(self.store.scan()):
                return True
        return False

    def settle(self) -> None:
        """Sweep until quiescent, first with the scenario's faults, then without.

        Raises:
            NonQuiescent: If residue remains after both phases.

        """
        self.runtime.worker = SETTLE_WORKER
        if drive(self.runtime, self._settle()):
            return
        with self.store.override(p_submarine=0.0, p_stale_eventual=0.0, p_stale_index=0.0):
            if drive(self.runtime, self._settle()):
                return
        problems = residue(self.store.scan())
        msg = f"store not quiescent: {'; '.join(problems[:5])}"
        raise NonQuiescent(msg)

    def run(self) -> RunResult:
        scenario = self.scenario
        runtime = self.runtime
        logger.info("running %s seed=%d", scenario.workload, scenario.seed)
        with self.store.override(p_submarine=0.0, p_stale_eventual=0.0, p_stale_index=0.0):
            drive(runtime, self._setup())
        initial_dump = self.store.dump()
        runtime.history = History()

        calls = self.workload.plan(random.Random(f"workload:{scenario.seed}"), scenario.ops)
        per_user: list[list[ClientCall]] = [[] for _ in self.users]
        for index, call in enumerate(calls):
            per_user[index % len(self.users)].append(call)

        gc = self.dtxn.gc_config
        scheduler = Scheduler(
            runtime,
            seed=scenario.seed,
            crash=self.crash,
            soft_timeout=gc.timeout_gae * 3 // 4 if scenario.soft_timeouts else None,
            hard_timeout=gc.timeout_gae if scenario.soft_timeouts else None,
            max_steps=scenario.max_steps,
        )
        for index, (user, mine) in enumerate(zip(self.users, per_user, strict=True)):
            requests = self._client_requests(user, mine)
            scheduler.spawn(Worker(user, requests, scenario.skew_of(index)))
        scheduler.spawn(Worker(GC_WORKER, self._gc_requests()))
        scheduler.run()

        for outcome in scheduler.outcomes:
            if isinstance(outcome.error, DanglingLock):
                msg = f"{outcome.worker}: {outcome.error}"
                raise NonQuiescent(msg)
        self.settle()

        history = runtime.history
        report = self._report(scheduler, history, initial_dump)
        logger.info("finished %s seed=%d: %s", scenario.workload, scenario.seed, report)
        return RunResult(
            scenario,
            initial_dump,
            self.store.dump(),
            history,
            scheduler.outcomes,
            report,
        )

    def _report(self, scheduler: Scheduler, history: History, initial_dump: str) -> dict[str, Any]:
        committed, aborted = count_outcomes(history)
        refused = sum(
            isinstance(outcome.error, QueueError | ReadLockExpired)
            for outcome in scheduler.outcomes
        )
        report: dict[str, Any] = {
            "seed": self.scenario.seed,
            "workload": self.scenario.workload,
            "workers": self.scenario.workers,
            "ops": self.scenario.ops,
            "committed": committed,
            "aborted": aborted,
            "refused": refused,
            "crashes": scheduler.crashes,
            "steps": scheduler.steps,
            "hits": scheduler.hits,
            "events": len(history),
            "clock": self.runtime.clock,
        }
        before = self.workload.invariant(EGStore.from_dump(initial_dump).scan())
        if before is not None:
            after = self.workload.invariant(self.store.scan())
            report["conserved"] = before == after
        return report


def run_scenario(scenario: Scenario, crash: CrashPolicy | None = None) -> RunResult:
    """Run ``scenario`` to quiescence.

    Raises:
        NonQuiescent: If the store could not be settled, or a lock dangled.

    """
    return ScenarioRun(scenario, crash).run()


def crash_sweep(scenario: Scenario) -> Iterator[RunResult]:
    """Re-run ``scenario`` once per suspension point of its crash-free run, killing there."""
    quiet = replace(scenario, p_crash=0.0)
    baseline = run_scenario(quiet, CrashPolicy(enabled=False))
    hits = int(baseline.report["hits"])
    logger.info("crash sweep over %d point(s)", hits)
    yield baseline
    for hit in range(hits):
        yield run_scenario(quiet, CrashPolicy(at_hits=frozenset({hit}), seed=scenario.seed))


__all__ = ("RunResult", "ScenarioRun", "crash_sweep", "residue", "run_scenario")
