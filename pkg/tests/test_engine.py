from __future__ import annotations

from typing import TYPE_CHECKING, cast

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtxn_lab import DistributedTransactions, EGStore, Entity, Key
from dtxn_lab.context import ReadFlags
from dtxn_lab.engine import LockOutcome, describe_call
from dtxn_lab.errors import FlavorViolation, IllegalTransition
from dtxn_lab.history import EventType
from dtxn_lab.records import (
    SHADOW_DELETE_KIND,
    SHADOW_KIND,
    TXN_KIND,
    Mode,
    is_reserved_key,
    pmd_key,
)
from dtxn_lab.scheduler import Scheduler, Worker
from dtxn_lab.sim import Runtime
from dtxn_lab.workloads import audit, churn, open_accounts, transfer
from tests.conftest import result_of, run

if TYPE_CHECKING:
    from dtxn_lab.context import DTContext


def balances(store: EGStore, keys: list[Key]) -> list[int]:
    return [store.get(key).props["balance"] for key in keys]  # type: ignore[misc, union-attr]


def leftovers(store: EGStore) -> list[Entity]:
    return [
        entity
        for entity in store.scan()
        if entity.key.kind in (SHADOW_KIND, SHADOW_DELETE_KIND) or entity.write_lock is not None
    ]


def test_transfer_commits(dtxn: DistributedTransactions, store: EGStore, accounts: list[Key]):
    source, target = accounts
    record = run(dtxn, dtxn.run_in_transaction("alice", transfer, source, target, 30))
    assert record is not None
    assert record.mode is Mode.DONE4
    assert result_of(record) == [70, 80]
    assert balances(store, accounts) == [70, 80]
    assert store.get(source).version == record.key  # type: ignore[union-attr]
    assert leftovers(store) == []

    history = dtxn.runtime.history
    modes = [
        event.detail for event in history.of_type(EventType.MODE) if event.dt == str(record.key)
    ]
    assert modes == [
        "NEW->INIT0",
        "INIT0->READY1",
        "READY1->LOCKED2",
        "LOCKED2->CHECKED3",
        "CHECKED3->DONE4",
    ]
    assert [event.dt for event in history.of_type(EventType.COMMIT)][-1] == str(record.key)


def test_client_error_aborts_without_effects(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    record = run(dtxn, dtxn.run_in_transaction("alice", transfer, source, target, 500))
    assert record is not None
    assert record.mode is Mode.ABORTED4
    assert record.result is not None
    assert record.result.startswith("ValueError")
    assert balances(store, accounts) == [100, 50]
    assert leftovers(store) == []


def slot_state(store: EGStore, slot: Key) -> tuple[object, ...]:
    entity = store.get(slot)
    meta = store.get(pmd_key(slot))
    return (
        entity.props if entity is not None else None,
        entity.version if entity is not None else None,
        meta.version if meta is not None else None,
        meta.write_lock if meta is not None else None,
    )


def test_named_key_creation_race(dtxn: DistributedTransactions, store: EGStore):
    engine = dtxn.engine
    slot = Key.of("Slot", "s0")

    first = run(dtxn, engine.begin_dt("alice", describe_call(churn, (slot, "create"))))
    run(dtxn, churn(first, slot, "create"))
    run(dtxn, engine.flush_cache(first))
    assert run(dtxn, engine.go_ready(first)) is Mode.READY1
    assert slot_state(store, slot) == (None, None, None, None)

    second = run(dtxn, dtxn.run_in_transaction("bob", churn, slot, "create"))
    assert second is not None
    assert second.mode is Mode.DONE4
    assert slot_state(store, slot) == ({"count": 1}, second.key, None, None)

    third = run(dtxn, dtxn.run_in_transaction("carol", churn, slot, "delete"))
    assert third is not None
    assert third.mode is Mode.DONE4
    assert slot_state(store, slot) == (None, None, third.key, None)

    # The first transaction saw the slot absent, and it is absent again.
    assert run(dtxn, engine.roll_forward(first.key)) is Mode.ABORTED4
    assert slot_state(store, slot) == (None, None, third.key, None)
    fails = dtxn.runtime.history.of_type(EventType.CHECK_FAIL)
    assert [(event.dt, event.detail) for event in fails] == [(str(first.key), "version")]
    assert leftovers(store) == []


async def bump(ctx: DTContext, key: Key) -> int:
    current = await ctx.get(key)
    count = cast(int, current.props["count"]) if current is not None else 0
    ctx.put(Entity(key, {"count": count + 1}))
    return count


def test_absent_numbered_key_is_locked_through_its_metadata(
    dtxn: DistributedTransactions,
    store: EGStore,
):
    engine = dtxn.engine
    key = Key.of("Counter", store.allocate_ids(Key.of("Counter")).start)
    first = run(dtxn, engine.begin_dt("alice", describe_call(bump, (key,))))
    second = run(dtxn, engine.begin_dt("bob", describe_call(bump, (key,))))
    assert run(dtxn, bump(first, key)) == 0
    assert run(dtxn, bump(second, key)) == 0
    for ctx in (first, second):
        run(dtxn, engine.flush_cache(ctx))
        assert run(dtxn, engine.go_ready(ctx)) is Mode.READY1

    record = run(dtxn, engine.load(first.key))
    assert record is not None
    assert run(dtxn, engine.lock_written_objects(record)) is LockOutcome.LOCKED
    assert store.get(key) is None
    assert store.get(pmd_key(key)).write_lock == first.key  # type: ignore[union-attr]

    assert run(dtxn, engine.roll_forward(second.key)) is Mode.ABORTED4
    assert run(dtxn, engine.load(first.key)).mode is Mode.DONE4  # type: ignore[union-attr]
    stored = store.get(key)
    assert stored is not None
    assert stored.props == {"count": 1}
    assert stored.version == first.key
    assert store.get(pmd_key(key)) is None
    assert leftovers(store) == []


def test_reader_rolls_lock_holder_forward(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    engine = dtxn.engine
    holder = run(dtxn, dtxn.async_run_in_transaction("alice", transfer, source, target, 30))
    assert holder is not None
    assert holder.mode is Mode.READY1
    assert run(dtxn, engine.lock_written_objects(holder)) is LockOutcome.LOCKED
    assert store.get(source).write_lock == holder.key  # type: ignore[union-attr]

    async def peek(ctx: DTContext) -> int:
        entity = await ctx.get(source, ReadFlags(in_lt=True))
        return entity.props["balance"] if entity else -1  # type: ignore[return-value]

    reader = run(dtxn, dtxn.run_in_transaction("bob", peek))
    assert result_of(reader) == 70
    assert run(dtxn, engine.load(holder.key)).mode is Mode.DONE4  # type: ignore[union-attr]
    waits = dtxn.runtime.history.of_type(EventType.WAIT_ON)
    assert [(event.dt, event.detail) for event in waits] == [
        (str(reader.key), str(holder.key)),  # type: ignore[union-attr]
    ]


def test_roll_forward_is_idempotent(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    record = run(dtxn, dtxn.async_run_in_transaction("alice", transfer, source, target, 10))
    assert record is not None
    for _ in range(3):
        assert run(dtxn, dtxn.engine.roll_forward(record.key)) is Mode.DONE4
    assert balances(store, accounts) == [90, 60]
    assert len(dtxn.runtime.history.of_type(EventType.COMMIT)) == 2


def test_transition_mode(dtxn: DistributedTransactions):
    engine = dtxn.engine
    ctx = run(dtxn, engine.begin_dt("alice"))
    with pytest.raises(IllegalTransition):
        run(dtxn, engine.transition_mode(ctx.key, Mode.INIT0, Mode.DONE4))
    assert run(dtxn, engine.transition_mode(ctx.key, Mode.READY1, Mode.LOCKED2)) is Mode.INIT0
    assert run(dtxn, engine.transition_mode(ctx.key, Mode.INIT0, Mode.ABORTING3)) is Mode.ABORTING3
    missing = Key.of("DT__User", "alice", TXN_KIND, 999)
    assert run(dtxn, engine.transition_mode(missing, Mode.INIT0, Mode.READY1)) is None


def test_complete_writes_requires_phase_three(dtxn: DistributedTransactions):
    ctx = run(dtxn, dtxn.engine.begin_dt("alice"))
    with pytest.raises(IllegalTransition):
        run(dtxn, dtxn.engine.complete_writes(ctx.record))


async def recreate_numbered(ctx: DTContext, key: Key) -> None:
    ctx.delete(key)
    ctx.put(Entity(key, {"balance": 0}))


async def recreate_named(ctx: DTContext, key: Key) -> None:
    ctx.delete(key)
    ctx.put(Entity(key, {"count": 7}))


def test_delete_then_put(dtxn: DistributedTransactions, store: EGStore, accounts: list[Key]):
    record = run(dtxn, dtxn.run_in_transaction("alice", recreate_numbered, accounts[0]))
    assert record is not None
    assert record.mode is Mode.ABORTED4
    assert record.result is not None
    assert "DeleteThenPutNumericId" in record.result

    slot = Key.of("Slot", "s1")
    record = run(dtxn, dtxn.run_in_transaction("alice", recreate_named, slot))
    assert record is not None
    assert record.mode is Mode.DONE4
    assert store.get(slot).props == {"count": 7}  # type: ignore[union-attr]


def test_delete_of_named_key_keeps_its_version(dtxn: DistributedTransactions, store: EGStore):
    slot = Key.of("Slot", "s2")
    run(dtxn, dtxn.run_in_transaction("alice", churn, slot, "create"))
    record = run(dtxn, dtxn.run_in_transaction("alice", churn, slot, "delete"))
    assert record is not None
    assert record.mode is Mode.DONE4
    assert store.get(slot) is None
    meta = store.get(pmd_key(slot))
    assert meta is not None
    assert meta.version == record.key


async def touch_reserved(ctx: DTContext) -> None:
    await ctx.get(Key.of("DT__User", "bob"))


async def read_plain(ctx: DTContext, key: Key) -> None:
    await ctx.get(key)


def test_flavor_violations_abort(dtxn: DistributedTransactions, store: EGStore):
    record = run(dtxn, dtxn.run_in_transaction("alice", touch_reserved))
    assert record is not None
    assert record.mode is Mode.ABORTED4

    plain = store.put(Entity(Key.of("Plain", 1), {"x": 1}))
    record = run(dtxn, dtxn.run_in_transaction("alice", read_plain, plain))
    assert record is not None
    assert record.mode is Mode.ABORTED4
    assert record.result is not None
    assert "FlavorViolation" in record.result


def test_put_of_reserved_property_is_refused(dtxn: DistributedTransactions):
    ctx = run(dtxn, dtxn.engine.begin_dt("alice"))
    with pytest.raises(FlavorViolation):
        ctx.put(Entity(Key.of("Item", 1), {"dt__mode": "x"}))


def test_submarine_failures_do_not_duplicate_effects(
    dtxn: DistributedTransactions,
    accounts: list[Key],
):
    store = dtxn.store
    source, target = accounts
    with store.override(p_submarine=0.5):
        record = run(dtxn, dtxn.run_in_transaction("alice", transfer, source, target, 25))
    assert record is not None
    assert record.mode is Mode.DONE4
    assert balances(store, accounts) == [75, 75]
    txns = [entity for entity in store.scan() if entity.key.kind == TXN_KIND]
    assert [entity.key for entity in txns] == [record.key]


OPS = st.lists(
    st.one_of(
        st.tuples(st.just("get"), st.integers(0, 3)),
        st.tuples(st.just("put"), st.integers(0, 3), st.integers(0, 100)),
        st.tuples(st.just("delete"), st.integers(0, 3)),
    ),
    max_size=12,
)


@settings(max_examples=1000, deadline=None)
@given(ops=OPS)
def test_read_your_writes(ops: list[tuple]):
    dtxn = DistributedTransactions(EGStore(), Runtime(), {})
    keys = [Key.of("Slot", f"k{index}") for index in range(4)]
    mismatches: list[tuple] = []

    async def scripted(ctx: DTContext) -> None:
        model: dict[int, int | None] = {}
        for op in ops:
            match op:
                case ("get", index):
                    entity = await ctx.get(keys[index])
                    seen = entity.props["v"] if entity is not None else None
                    if seen != model.get(index):
                        mismatches.append((op, seen, model.get(index)))
                case ("put", index, value):
                    ctx.put(Entity(keys[index], {"v": value}))
                    model[index] = value
                case ("delete", index):
                    ctx.delete(keys[index])
                    model[index] = None

    record = run(dtxn, dtxn.run_in_transaction("alice", scripted))
    assert mismatches == []
    assert record is not None
    assert record.mode is Mode.DONE4

    final: dict[int, int | None] = {}
    for op in ops:
        if op[0] == "put":
            final[op[1]] = op[2]
        elif op[0] == "delete":
            final[op[1]] = None
    for index, key in enumerate(keys):
        entity = dtxn.store.get(key)
        assert (entity.props["v"] if entity is not None else None) == final.get(index)
    assert leftovers(dtxn.store) == []


def test_read_only_transaction_writes_no_client_entity(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    versions = [store.get(key).version for key in accounts]  # type: ignore[union-attr]
    start = len(store.commit_log)
    record = run(dtxn, dtxn.run_in_transaction("alice", audit, accounts))
    assert result_of(record) == 150
    written = [key for commit in store.commit_log[start:] for key in commit.writes]
    assert written
    assert all(is_reserved_key(key) for key in written)
    assert [store.get(key).version for key in accounts] == versions  # type: ignore[union-attr]


def test_shadow_outlives_the_lock_on_its_target(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    start = len(store.snapshots(source.root)) - 1
    run(dtxn, dtxn.run_in_transaction("alice", transfer, source, target, 30))

    states: list[tuple[bool, bool]] = []
    for snapshot in store.snapshots(source.root)[start:]:
        shadowed = any(key.kind == SHADOW_KIND for key in snapshot)
        locked = snapshot[source].write_lock is not None
        if not states or states[-1] != (shadowed, locked):
            states.append((shadowed, locked))
    assert states == [(False, False), (True, False), (True, True), (False, False)]


@pytest.mark.parametrize("seed", range(6))
def test_concurrent_roll_forward_applies_once(seed: int):
    dtxn = DistributedTransactions(EGStore(), Runtime(), {})
    engine = dtxn.engine
    record = run(dtxn, dtxn.run_in_transaction("setup", open_accounts, [100, 50]))
    accounts = result_of(record)
    source, target = accounts
    record = run(dtxn, dtxn.async_run_in_transaction("alice", transfer, source, target, 30))
    assert record is not None
    assert run(dtxn, engine.lock_written_objects(record)) is LockOutcome.LOCKED
    assert run(dtxn, engine.check_read_objects(record)) is Mode.CHECKED3

    scheduler = Scheduler(dtxn.runtime, seed=seed)
    for name in ("w0", "w1"):
        scheduler.spawn(Worker.of(name, [lambda: engine.roll_forward(record.key)]))
    scheduler.run()

    assert [outcome.value for outcome in scheduler.outcomes] == [Mode.DONE4, Mode.DONE4]
    assert balances(dtxn.store, accounts) == [70, 80]
    assert leftovers(dtxn.store) == []
    history = dtxn.runtime.history
    dt = str(record.key)
    assert len([event for event in history.of_type(EventType.APPLY) if event.dt == dt]) == 2
    assert len([event for event in history.of_type(EventType.COMMIT) if event.dt == dt]) == 1
