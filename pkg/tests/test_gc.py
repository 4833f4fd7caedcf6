from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from dtxn_lab.errors import SoftTimeout
from dtxn_lab.gc import GCConfig
from dtxn_lab.history import EventType
from dtxn_lab.keys import Key
from dtxn_lab.records import SHADOW_KIND, TXN_KIND, Mode, ShadowRecord
from dtxn_lab.scheduler import Scheduler, Worker
from dtxn_lab.workloads import transfer
from tests.conftest import run

if TYPE_CHECKING:
    from dtxn_lab import DistributedTransactions, EGStore
    from dtxn_lab.context import DTContext

LATER = 100_000


def shadows(store: EGStore) -> list[Key]:
    return [entity.key for entity in store.scan() if entity.key.kind == SHADOW_KIND]


def test_config_rejects_non_positive_timeouts():
    with pytest.raises(ValueError, match="epsilon"):
        GCConfig(epsilon=0)
    assert GCConfig().timeout_garbage_collect_shadow == 1200


def test_sweep_of_an_empty_store(dtxn: DistributedTransactions):
    report = run(dtxn, dtxn.gc_sweep())
    assert report.total == 0
    details = [event.detail for event in dtxn.runtime.history.of_type(EventType.GC)]
    assert details == ["1 0", "2 0", "3 0", "4 0"]


def test_abandoned_ready_transaction_is_rolled_forward(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    record = run(dtxn, dtxn.async_run_in_transaction("alice", transfer, source, target, 40))
    assert record is not None
    assert record.mode is Mode.READY1

    assert run(dtxn, dtxn.gc_sweep()).rolled_forward == 0
    report = run(dtxn, dtxn.gc_sweep(LATER))
    assert report.rolled_forward == 1
    assert run(dtxn, dtxn.engine.load(record.key)).mode is Mode.DONE4  # type: ignore[union-attr]
    assert store.get(target).props["balance"] == 90  # type: ignore[union-attr]


def test_stillborn_transaction_takes_two_sweeps(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    engine = dtxn.engine
    ctx = run(dtxn, engine.begin_dt("alice"))
    run(dtxn, transfer(ctx, source, target, 10))
    run(dtxn, engine.flush_cache(ctx))
    assert len(shadows(store)) == 2

    first = run(dtxn, dtxn.gc_sweep(LATER))
    assert (first.half_timed_out, first.aborted) == (1, 0)
    stored = run(dtxn, engine.load(ctx.key))
    assert stored is not None
    assert stored.mode is Mode.INIT0
    assert stored.half_timed_out

    second = run(dtxn, dtxn.gc_sweep(LATER))
    assert (second.half_timed_out, second.aborted) == (0, 1)
    stored = run(dtxn, engine.load(ctx.key))
    assert stored is not None
    assert stored.mode is Mode.ABORTED4
    assert shadows(store) == []
    assert store.get(source).props["balance"] == 100  # type: ignore[union-attr]


def test_go_ready_after_abort_rolls_the_abort_forward(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    engine = dtxn.engine
    ctx = run(dtxn, engine.begin_dt("alice"))
    run(dtxn, transfer(ctx, source, target, 10))
    run(dtxn, engine.flush_cache(ctx))
    assert run(dtxn, dtxn.gc.handle_soft_timeout(ctx)) is Mode.ABORTING3

    assert run(dtxn, engine.go_ready(ctx)) is Mode.ABORTED4
    assert store.get(target).props["balance"] == 50  # type: ignore[union-attr]


def test_orphan_shadow_is_collected(dtxn: DistributedTransactions, store: EGStore):
    owner = Key.of("DT__User", "ghost", TXN_KIND, 1)
    orphan = ShadowRecord(Key.of("Item", 1), owner, created=0, payload={"value": 1})
    store.put(orphan.to_entity())
    assert len(shadows(store)) == 1

    assert run(dtxn, dtxn.gc_sweep(100)).shadows_collected == 0
    assert run(dtxn, dtxn.gc_sweep(LATER)).shadows_collected == 1
    assert shadows(store) == []
    assert store.get(Key.of("Item", 1)) is None


async def slow_transfer(ctx: DTContext, source: Key, target: Key, amount: int) -> None:
    await transfer(ctx, source, target, amount)
    await ctx.dtxn.runtime.sleep(100)


def test_soft_timeout_aborts_a_running_transaction(
    dtxn: DistributedTransactions,
    store: EGStore,
    accounts: list[Key],
):
    source, target = accounts
    scheduler = Scheduler(dtxn.runtime, seed=1, soft_timeout=50, hard_timeout=500)

    async def request() -> object:
        return await dtxn.run_in_transaction("alice", slow_transfer, source, target, 10)

    scheduler.spawn(Worker.of("w0", [request]))
    scheduler.run()

    (outcome,) = scheduler.outcomes
    assert isinstance(outcome.error, SoftTimeout)
    records = [entity for entity in store.scan() if entity.key.kind == TXN_KIND]
    assert [entity.props["dt__mode"] for entity in records] == [Mode.ABORTING3]

    run(dtxn, dtxn.gc_sweep(LATER))
    records = [entity for entity in store.scan() if entity.key.kind == TXN_KIND]
    assert [entity.props["dt__mode"] for entity in records] == [Mode.ABORTED4]
    assert store.get(source).props["balance"] == 100  # type: ignore[union-attr]
