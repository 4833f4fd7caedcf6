from __future__ import annotations

import pytest

from dtxn_lab import DistributedTransactions, EGStore, Key
from dtxn_lab.errors import NotHead, NotTerminal, QueueFull
from dtxn_lab.history import EventType
from dtxn_lab.records import Mode
from dtxn_lab.sim import Runtime
from dtxn_lab.workloads import churn
from tests.conftest import run

S0 = Key.of("Slot", "s0")
S1 = Key.of("Slot", "s1")


@pytest.fixture
def queued() -> DistributedTransactions:
    return DistributedTransactions(EGStore(), Runtime(), {"queues": True})


@pytest.fixture
def sync() -> DistributedTransactions:
    return DistributedTransactions(EGStore(), Runtime(), {"queues": True, "sync_mode": True})


def test_pending_transactions_commit_in_issue_order(queued: DistributedTransactions):
    first = run(queued, queued.async_run_in_transaction("alice", churn, S0, "create"))
    second = run(queued, queued.async_run_in_transaction("alice", churn, S1, "create"))
    assert first is not None
    assert second is not None
    queues = run(queued, queued.queues.snapshot("alice"))
    assert queues.pending == [first.key, second.key]
    assert queues.completed == []

    assert run(queued, queued.engine.roll_forward(second.key)) is Mode.DONE4
    commits = [event.dt for event in queued.runtime.history.of_type(EventType.COMMIT)]
    assert commits == [str(first.key), str(second.key)]
    queues = run(queued, queued.queues.snapshot("alice"))
    assert queues.pending == []
    assert queues.completed == [first.key, second.key]


def test_acknowledge_only_the_head(queued: DistributedTransactions):
    first = run(queued, queued.run_in_transaction("alice", churn, S0, "create"))
    second = run(queued, queued.run_in_transaction("alice", churn, S1, "create"))
    assert first is not None
    assert second is not None

    with pytest.raises(NotHead):
        run(queued, queued.acknowledge("alice", second.key))
    assert run(queued, queued.acknowledge("alice", first.key)) == first
    assert run(queued, queued.acknowledge("alice", second.key)) is not None
    assert run(queued, queued.queues.snapshot("alice")).completed == []


def test_acknowledge_twice_returns_none(queued: DistributedTransactions):
    record = run(queued, queued.run_in_transaction("alice", churn, S0, "create"))
    assert record is not None
    assert run(queued, queued.acknowledge("alice", record.key)) is not None
    assert run(queued, queued.acknowledge("alice", record.key)) is None


def test_acknowledge_requires_a_terminal_transaction(queued: DistributedTransactions):
    record = run(queued, queued.async_run_in_transaction("alice", churn, S0, "create"))
    assert record is not None
    with pytest.raises(NotTerminal):
        run(queued, queued.acknowledge("alice", record.key))


def test_acknowledge_checks_the_owner(queued: DistributedTransactions):
    record = run(queued, queued.run_in_transaction("alice", churn, S0, "create"))
    assert record is not None
    with pytest.raises(ValueError, match="does not belong"):
        run(queued, queued.acknowledge("bob", record.key))


def test_catch_up_drives_and_acknowledges(queued: DistributedTransactions):
    run(queued, queued.async_run_in_transaction("alice", churn, S0, "create"))
    run(queued, queued.async_run_in_transaction("alice", churn, S1, "create"))
    acknowledged = run(queued, queued.catch_up("alice"))
    assert [record.mode for record in acknowledged] == [Mode.DONE4, Mode.DONE4]
    queues = run(queued, queued.queues.snapshot("alice"))
    assert (queues.pending, queues.completed) == ([], [])
    assert queued.store.get(S0) is not None
    assert queued.store.get(S1) is not None


def test_sync_mode_allows_one_outstanding_transaction(sync: DistributedTransactions):
    record = run(sync, sync.run_in_transaction("alice", churn, S0, "create"))
    assert record is not None
    with pytest.raises(QueueFull):
        run(sync, sync.run_in_transaction("alice", churn, S1, "create"))
    run(sync, sync.run_in_transaction("bob", churn, S1, "create"))

    run(sync, sync.acknowledge("alice", record.key))
    again = run(sync, sync.run_in_transaction("alice", churn, S1, "bump"))
    assert again is not None
    assert again.mode is Mode.DONE4


def test_sync_mode_counts_a_starting_transaction(sync: DistributedTransactions):
    run(sync, sync.engine.begin_dt("alice"))
    with pytest.raises(QueueFull):
        run(sync, sync.engine.begin_dt("alice"))


def test_sync_mode_without_queues_warns():
    with pytest.warns(UserWarning, match="sync_mode"):
        DistributedTransactions(EGStore(), Runtime(), {"sync_mode": True})


def test_config_falls_back_to_the_store_config_map():
    store = EGStore(config_map={"DTXN": {"queues": True}})
    dtxn = DistributedTransactions(store)
    assert dtxn.queues.enabled
    assert store.extensions["dtxn"] is dtxn
