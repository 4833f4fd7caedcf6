"""Offline checks over a finished run.

Everything here works from the history log and the initial and final dumps
only. Committed transactions are ordered by the moment they first held all
their write locks; replaying their client functions in that order on a fresh
store built from the initial dump must reproduce the final client state, and
every version a transaction logged as read must be the version the replay
shows at that point.

Functions:
    check_serializable, check_modes, check_wait_cycles, check_user_order,
    check_queued_unlocked, check_conservation, check_history, count_outcomes
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import permutations
from typing import TYPE_CHECKING, Any

from .errors import MalformedHistory
from .extension import DistributedTransactions
from .history import EMPTY, EventType
from .keys import Key
from .records import DELETED, NEW, PMD_KIND, Mode, is_legal, is_reserved_key, pmd_key
from .sim import Runtime, drive
from .store import EGStore, decode_value, format_entity, format_version, parse_entity
from .workloads import CLIENT_FUNCTIONS, WORKLOADS

if TYPE_CHECKING:
    from collections.abc import Mapping

    from .history import Event, History
    from .typing import ClientFunction

logger = logging.getLogger(__name__)

PERMUTATION_LIMIT = 4

_FINISHED = frozenset({Mode.DONE4, Mode.ABORTED4, DELETED})


@dataclass(slots=True)
class Verdict:
    """Result of the checks; ``passed`` when no problem was found."""

    witness: list[str] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)
    permutations: int = 0
    satisfying: int = 0

    @property
    def passed(self) -> bool:
        return not self.problems


@dataclass(frozen=True, slots=True)
class CommittedCall:
    dt: Key
    fn: str
    args: tuple[Any, ...]

    @property
    def user(self) -> str:
        return str(self.dt.root.name)


def count_outcomes(history: History) -> tuple[int, int]:
    """Number of distinct committed and aborted transactions."""
    committed = {event.dt for event in history.of_type(EventType.COMMIT)}
    aborted = {event.dt for event in history.of_type(EventType.ABORT)}
    return len(committed), len(aborted)


def _committed_calls(history: History) -> dict[str, CommittedCall]:
    calls: dict[str, CommittedCall] = {}
    for event in history.of_type(EventType.COMMIT):
        try:
            desc = json.loads(event.detail)
            args = tuple(decode_value(desc["args"]) or [])  # type: ignore[arg-type]
            calls[event.dt] = CommittedCall(Key.parse(event.dt), desc["fn"], args)
        except (ValueError, KeyError, TypeError) as exc:
            msg = f"cannot decode committed call of {event.dt}: {exc}"
            raise MalformedHistory(msg) from exc
    return calls


def witness_order(history: History) -> list[str]:
    """Committed transactions ordered by their first ENTER_2LOCKED event."""
    committed = {event.dt for event in history.of_type(EventType.COMMIT)}
    order: dict[str, None] = {}
    for event in history.of_type(EventType.ENTER_2LOCKED):
        if event.dt in committed:
            order.setdefault(event.dt, None)
    missing = sorted(committed.difference(order))
    if missing:
        msg = f"committed without ever holding their locks: {', '.join(missing)}"
        raise MalformedHistory(msg)
    return list(order)


def client_state(dump: str) -> list[str]:
    """Client-visible lines of a dump.

    A pure meta-data entity without a version counts as absent.
    """
    kept = []
    for line in dump.splitlines():
        if not line.strip():
            continue
        entity = parse_entity(line)
        if not is_reserved_key(entity.key) or (
            entity.key.kind == PMD_KIND and entity.version is not None
        ):
            kept.append(format_entity(entity))
    return sorted(kept)


def _version_text(store: EGStore, key: Key) -> str:
    entity = store.get(key)
    if entity is None:
        entity = store.get(pmd_key(key))
    return format_version(entity)


def _created_ids(history: History, dt: str) -> dict[tuple[Key | None, str], list[int]]:
    """Ids the transaction got from the allocator, by parent and kind."""
    plan: dict[tuple[Key | None, str], list[int]] = {}
    for event in history.of_type(EventType.APPLY):
        if event.dt != dt or event.detail != "allocate":
            continue
        key = Key.parse(event.obj)
        if key.id is not None:
            plan.setdefault((key.parent, key.kind), []).append(key.id)
    for ids in plan.values():
        ids.sort()
    return plan


class Replay:
    """Sequential re-execution of committed transactions on a fault-free store."""

    def __init__(  # noqa: D107
        self,
        history: History,
        initial_dump: str,
        registry: Mapping[str, ClientFunction],
    ) -> None:
        self.history = history
        self.initial_dump = initial_dump
        self.registry = registry
        self.reads: dict[str, list[Event]] = {}
        for event in history.of_type(EventType.READ):
            self.reads.setdefault(event.dt, []).append(event)

    def run(
        self,
        order: list[str],
        calls: dict[str, CommittedCall],
        *,
        verify_reads: bool,
    ) -> tuple[EGStore, list[str]]:
        store = EGStore.from_dump(self.initial_dump)
        runtime = Runtime()
        dtxn = DistributedTransactions(store, runtime, {})
        engine = dtxn.engine
        problems: list[str] = []
        for dt in order:
            call = calls[dt]
            fn = self.registry.get(call.fn)
            if fn is None:
                msg = f"{dt} ran unknown client function {call.fn!r}"
                raise MalformedHistory(msg)
            if verify_reads:
                for event in self.reads.get(dt, []):
                    seen = _version_text(store, Key.parse(event.obj))
                    if seen != event.detail:
                        problems.append(
                            f"{dt} read {event.obj} at version {event.detail}, replay has {seen}",
                        )
            desc = json.dumps({"fn": call.fn}, separators=(",", ":"))
            ctx = drive(runtime, engine.begin_dt(call.user, desc, dt_key=call.dt))
            ctx.preallocated = _created_ids(self.history, dt)
            record = drive(runtime, engine.execute(ctx, fn, call.args))
            if record is None or record.mode is not Mode.DONE4:
                result = record.result if record is not None else "record missing"
                problems.append(f"{dt} does not commit when replayed: {result}")
        return store, problems


def check_serializable(
    history: History,
    final_dump: str,
    initial_dump: str,
    registry: Mapping[str, ClientFunction] = CLIENT_FUNCTIONS,
) -> Verdict:
    """Replay committed transactions in witness order and compare with the final state.

    With at most ``PERMUTATION_LIMIT`` committed transactions every order is
    also tried, and the witness must be one of those that reproduce the final
    state.

    Raises:
        MalformedHistory: If commits cannot be decoded or ordered.

    """
    calls = _committed_calls(history)
    order = witness_order(history)
    verdict = Verdict(witness=order)
    replay = Replay(history, initial_dump, registry)
    expected = client_state(final_dump)

    store, problems = replay.run(order, calls, verify_reads=True)
    verdict.problems.extend(problems)
    if client_state(store.dump()) != expected:
        verdict.problems.append("replay in witness order does not reproduce the final state")

    if len(order) <= PERMUTATION_LIMIT:
        satisfying = []
        for candidate in permutations(order):
            store, problems = replay.run(list(candidate), calls, verify_reads=False)
            verdict.permutations += 1
            if not problems and client_state(store.dump()) == expected:
                satisfying.append(list(candidate))
        verdict.satisfying = len(satisfying)
        if order not in satisfying:
            verdict.problems.append(
                "witness order is not among the orders reproducing the final state",
            )
    logger.debug("serializability: %d committed, %d problem(s)", len(order), len(verdict.problems))
    return verdict


def check_modes(history: History) -> list[str]:
    """Every MODE event must be a legal edge continuing its transaction's chain."""
    problems = []
    current: dict[str, str] = {}
    for event in history.of_type(EventType.MODE):
        old, sep, new = event.detail.partition("->")
        if not sep:
            msg = f"malformed mode change {event.detail!r} at {event.time}"
            raise MalformedHistory(msg)
        expected = current.get(event.dt, NEW)
        if old != expected:
            problems.append(f"{event.dt} moved {old}->{new} while in {expected}")
        if not is_legal(old, new):
            problems.append(f"{event.dt} took off-graph edge {old}->{new}")
        current[event.dt] = new
    return problems


def _reaches(edges: dict[str, dict[str, None]], start: str, goal: str) -> bool:
    stack = [start]
    seen: dict[str, None] = {}
    while stack:
        node = stack.pop()
        if node == goal:
            return True
        if node in seen:
            continue
        seen[node] = None
        stack.extend(edges.get(node, {}))
    return False


def check_wait_cycles(history: History) -> list[str]:
    """No WAIT_ON event may close a cycle of waiting transactions.

    An edge lives from its WAIT_ON event until either end finishes.
    """
    problems = []
    edges: dict[str, dict[str, None]] = {}
    for event in history:
        if event.type is EventType.WAIT_ON:
            waiter, blocker = event.dt, event.detail
            if blocker == EMPTY:
                continue
            if _reaches(edges, blocker, waiter):
                problems.append(f"wait cycle closed by {waiter} -> {blocker} at {event.time}")
            edges.setdefault(waiter, {})[blocker] = None
        elif event.type is EventType.MODE and event.detail.partition("->")[2] in _FINISHED:
            edges.pop(event.dt, None)
            for targets in edges.values():
                targets.pop(event.dt, None)
    return problems


def _user_of(dt: str) -> str:
    return str(Key.parse(dt).root.name)


def check_user_order(history: History) -> list[str]:
    """Each user's committed transactions must serialize in the order they were issued."""
    issued: dict[str, int] = {}
    for event in history.of_type(EventType.MODE):
        if event.detail.endswith(f"->{Mode.INIT0}"):
            issued.setdefault(event.dt, event.time)
    by_user: dict[str, list[str]] = {}
    for dt in witness_order(history):
        by_user.setdefault(_user_of(dt), []).append(dt)
    problems = []
    for user, order in by_user.items():
        expected = sorted(order, key=lambda dt: issued.get(dt, -1))
        if order != expected:
            problems.append(
                f"user {user} serialized {', '.join(order)} but issued {', '.join(expected)}",
            )
    return problems


def check_queued_unlocked(history: History) -> list[str]:
    """A transaction may only take write locks once it heads its user's pending queue."""
    problems = []
    pending: dict[str, list[str]] = {}
    for event in history:
        if event.type is EventType.MODE:
            new = event.detail.partition("->")[2]
            queue = pending.setdefault(_user_of(event.dt), [])
            if new == Mode.READY1 and event.dt not in queue:
                queue.append(event.dt)
            elif new in _FINISHED and event.dt in queue:
                queue.remove(event.dt)
        elif event.type is EventType.LOCK:
            queue = pending.get(_user_of(event.dt), [])
            if event.dt in queue and queue[0] != event.dt:
                problems.append(f"{event.dt} locked {event.obj} while queued behind {queue[0]}")
    return problems


def check_conservation(initial_dump: str, final_dump: str, workload: str) -> list[str]:
    """The workload's invariant quantity must match between the two dumps."""
    sample = WORKLOADS[workload](0)
    before = sample.invariant(EGStore.from_dump(initial_dump).scan())
    after = sample.invariant(EGStore.from_dump(final_dump).scan())
    if before != after:
        return [f"{workload} invariant changed from {before} to {after}"]
    return []


def check_history(
    history: History,
    final_dump: str,
    initial_dump: str,
    workload: str | None = None,
    registry: Mapping[str, ClientFunction] = CLIENT_FUNCTIONS,
    *,
    queues: bool = False,
) -> Verdict:
    """Run every check and merge the problems into one verdict.

    The per-user ordering checks only apply to runs with queues enabled.
    """
    verdict = check_serializable(history, final_dump, initial_dump, registry)
    verdict.problems.extend(check_modes(history))
    verdict.problems.extend(check_wait_cycles(history))
    if queues:
        verdict.problems.extend(check_user_order(history))
        verdict.problems.extend(check_queued_unlocked(history))
    if workload is not None:
        verdict.problems.extend(check_conservation(initial_dump, final_dump, workload))
    return verdict


__all__ = (
    "PERMUTATION_LIMIT",
    "CommittedCall",
    "Replay",
    "Verdict",
    "check_conservation",
    "check_history",
    "check_modes",
    "check_queued_unlocked",
    "check_serializable",
    "check_user_order",
    "check_wait_cycles",
    "client_state",
    "count_outcomes",
    "witness_order",
)
