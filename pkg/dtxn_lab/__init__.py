"""Module initializing the dtxn-lab package.

It makes the store, the distributed-transaction extension and the harness entry
points available when the package is imported.

Classes:
    EGStore: A simulated entity-group store with local transactions.
    DistributedTransactions: Optimistic transactions spanning entity groups.
    Key: An entity key.
    Entity: A key with its properties.

Functions:
    run_scenario: Run a scenario to quiescence.
    check_history: Check a finished run for serializability and protocol sanity.

__all__:
    A tuple that defines the public interface of the module.
"""

from .checker import check_history
from .extension import DistributedTransactions
from .keys import Key
from .runner import run_scenario
from .store import EGStore, Entity

__all__ = (
    "DistributedTransactions",
    "EGStore",
    "Entity",
    "Key",
    "check_history",
    "run_scenario",
)
