"""DistributedTransactions is an extension for EGStore that adds multi-group transactions."""

from __future__ import annotations

import warnings
from typing import TYPE_CHECKING, Any, TypedDict

from .engine import Engine
from .gc import GarbageCollector, GCConfig
from .guarded import GuardedLT, guarded_lt_write
from .queues import UserQueues
from .read_locks import ReadLocks
from .sim import Runtime

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable
    from typing import NotRequired

    from .gc import SweepReport
    from .keys import Key
    from .records import DTRecord
    from .store import EGStore
    from .typing import ClientFunction

DEFAULT_PHANTOM_LOCK_RETRIES = 3


class DTxnConfig(TypedDict):  # noqa: D101
    queues: NotRequired[bool]
    sync_mode: NotRequired[bool]
    read_locks: NotRequired[bool]
    read_lock_pad: NotRequired[int]
    phantom_lock_retries: NotRequired[int]
    gc: NotRequired[GCConfig]


class DistributedTransactions:
    """DistributedTransactions layers optimistic transactions over an EGStore.

    Attributes:
        config (DTxnConfig): Feature flags and timeouts.
        store (EGStore): The store the transactions run against.
        runtime (Runtime): Logical clock and history of the simulation.
        engine (Engine): The protocol steps.
        queues (UserQueues): Per-user pending and completed queues.
        read_locks (ReadLocks): Best-effort temporary read locks.
        gc (GarbageCollector): Timeout handling and the sweeper.

    Methods:
        __init__(store: EGStore | None = None, runtime: Runtime | None = None, config: DTxnConfig | None = None) -> None:
            Initializes the extension, and binds it when a store is given.
        init_store(store: EGStore) -> None:
            Binds the extension to a store.

    """  # noqa: E501

    store: EGStore

    def __init__(
        self,
        store: EGStore | None = None,
        runtime: Runtime | None = None,
        config: DTxnConfig | None = None,
    ) -> None:
        """Initialize the extension with the given parameters.

        :param store: the store to extend, defaults to None
        :type store: EGStore | None, optional
        :param runtime: the simulation runtime, defaults to a fresh one
        :type runtime: Runtime | None, optional
        :param config: some extension config, defaults to the store's ``DTXN`` entry
        :type config: DTxnConfig | None, optional
        """
        self.config: DTxnConfig = config or {}
        self.runtime = runtime if runtime is not None else Runtime()
        self.engine = Engine(self)
        self.queues = UserQueues(self)
        self.read_locks = ReadLocks(self)
        self.gc = GarbageCollector(self)

        if store is not None:
            self.init_store(store)

    def init_store(self, store: EGStore) -> None:
        """Bind the extension to ``store``.

        :param store: the store to extend
        :type store: EGStore
        """
        if not self.config:
            self.config = store.config_map.get("DTXN", {})
        if self.config.get("sync_mode") and not self.config.get("queues"):
            msg = "sync_mode needs queues enabled; it is ignored."
            warnings.warn(msg, stacklevel=2)
        self.store = store
        store.extensions["dtxn"] = self

    @property
    def gc_config(self) -> GCConfig:
        return self.config.get("gc") or GCConfig()

    @property
    def phantom_lock_retries(self) -> int:
        return self.config.get("phantom_lock_retries", DEFAULT_PHANTOM_LOCK_RETRIES)

    async def run_in_transaction(
        self,
        user: str,
        fn: ClientFunction,
        *args: Any,  # noqa: ANN401
        read_lock: Key | None = None,
    ) -> DTRecord | None:
        """Run ``fn`` as a distributed transaction and wait until it is terminal."""
        return await self.engine.distributed_run_in_transaction(
            user,
            fn,
            *args,
            read_lock=read_lock,
        )

    async def async_run_in_transaction(
        self,
        user: str,
        fn: ClientFunction,
        *args: Any,  # noqa: ANN401
        read_lock: Key | None = None,
    ) -> DTRecord | None:
        """Run ``fn`` and return once the transaction is READY1; others complete it."""
        return await self.engine.distributed_run_in_transaction(
            user,
            fn,
            *args,
            read_lock=read_lock,
            wait=False,
        )

    async def acknowledge(self, user: str, dt_key: Key) -> DTRecord | None:
        return await self.queues.acknowledge(user, dt_key)

    async def catch_up(self, user: str) -> list[DTRecord]:
        return await self.queues.catch_up(user)

    async def acquire_read_lock(
        self,
        user: str,
        keys: Iterable[Key],
        duration: int | None = None,
    ) -> DTRecord:
        return await self.read_locks.acquire_read_lock(user, keys, duration)

    async def gc_sweep(self, now: int | None = None) -> SweepReport:
        return await self.gc.gc_sweep(now)

    def guarded_lt_write[T](self, group: Key, body: Callable[[GuardedLT], T]) -> T:
        return guarded_lt_write(self, group, body)


__all__ = ("DistributedTransactions", "DTxnConfig")
