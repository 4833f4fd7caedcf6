from __future__ import annotations

import json
from typing import TYPE_CHECKING, Any, cast

import pytest

from dtxn_lab import DistributedTransactions, EGStore
from dtxn_lab.sim import Runtime, drive
from dtxn_lab.store import decode_value
from dtxn_lab.workloads import open_accounts

if TYPE_CHECKING:
    from collections.abc import Coroutine

    from dtxn_lab.keys import Key
    from dtxn_lab.records import DTRecord


def run[T](dtxn: DistributedTransactions, coro: Coroutine[Any, Any, T]) -> T:
    return drive(dtxn.runtime, coro)


def result_of(record: DTRecord | None) -> Any:  # noqa: ANN401
    assert record is not None
    assert record.result is not None
    return decode_value(json.loads(record.result))


@pytest.fixture
def store() -> EGStore:
    return EGStore()


@pytest.fixture
def runtime() -> Runtime:
    return Runtime()


@pytest.fixture
def dtxn(store: EGStore, runtime: Runtime) -> DistributedTransactions:
    return DistributedTransactions(store, runtime, {})


@pytest.fixture
def accounts(dtxn: DistributedTransactions) -> list[Key]:
    record = run(dtxn, dtxn.run_in_transaction("setup", open_accounts, [100, 50]))
    keys = cast(list["Key"], result_of(record))
    run(dtxn, dtxn.acknowledge("setup", record.key))  # type: ignore[union-attr]
    return keys
