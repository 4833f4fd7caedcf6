"""Best-effort temporary read locks.

A read lock is a transaction parked in mode NONE whose get lists are filled in
up front. Writers that find such a transaction listing their target wait for it
to expire; the owner may later turn it into a real transaction that starts
from the pinned versions. Nothing here is needed for correctness: a missed or
ignored lock only costs the reader an abort.
"""

from __future__ import annotations

import logging
from functools import partial
from typing import TYPE_CHECKING

from .errors import DanglingLock, FlavorViolation, ReadLockExpired
from .history import EventType
from .records import NEW, TXN_KIND, DTRecord, Mode, pmd_key, user_key
from .store import NO_VERSION

if TYPE_CHECKING:
    from collections.abc import Iterable

    from .extension import DistributedTransactions
    from .keys import Key
    from .store import Entity, LTContext

logger = logging.getLogger(__name__)


class ReadLocks:
    """Read-lock transactions, bound to one :class:`DistributedTransactions`."""

    def __init__(self, dtxn: DistributedTransactions) -> None:  # noqa: D107
        self.dtxn = dtxn

    @property
    def enabled(self) -> bool:
        return bool(self.dtxn.config.get("read_locks", False))

    @property
    def pad(self) -> int:
        """Extra time a lock is honoured past its timeout, for clock skew."""
        return self.dtxn.config.get("read_lock_pad", self.dtxn.gc_config.epsilon)

    async def _current_version(self, dt: Key, key: Key) -> Key | None:
        engine = self.dtxn.engine
        meta_key = pmd_key(key)

        def body(lt: LTContext) -> tuple[Entity | None, Entity | None]:
            entity = lt.get(key)
            meta = lt.get(meta_key) if entity is None else None
            return entity, meta

        finished: dict[Key, None] = {}
        while True:
            entity, meta = await engine.lt("read_locks:acquire:read", key.root, body)
            if entity is not None and not entity.dt_flavored:
                msg = f"{key} is not DT-flavored"
                raise FlavorViolation(msg)
            holder = entity if entity is not None else meta
            lock = holder.write_lock if holder is not None else None
            if lock is None:
                return holder.version if holder is not None else None
            if lock in finished:
                msg = f"{key} is still locked by finished transaction {lock}"
                raise DanglingLock(msg)
            self.dtxn.runtime.record(EventType.WAIT_ON, dt, key, str(lock))
            mode = await engine.roll_forward(lock)
            if mode is None or mode.is_terminal:
                finished[lock] = None

    async def acquire_read_lock(
        self,
        user: str,
        keys: Iterable[Key],
        duration: int | None = None,
    ) -> DTRecord:
        """Create a NONE-mode transaction pinning the current versions of ``keys``.

        Args:
            user: Owner of the lock.
            keys: Client keys to protect; must not be empty.
            duration: Lifetime of the lock, defaults to ``timeout_read_lock_dt``.

        Returns:
            The stored read-lock record.

        """
        wanted = sorted(dict.fromkeys(keys))
        if not wanted:
            msg = "a read lock needs at least one key"
            raise ValueError(msg)
        if duration is None:
            duration = self.dtxn.gc_config.timeout_read_lock_dt
        if duration <= 0:
            msg = f"duration must be positive, got {duration}"
            raise ValueError(msg)
        store = self.dtxn.store
        runtime = self.dtxn.runtime
        root = user_key(user)
        dt_key = root.child(TXN_KIND, store.allocate_ids(root.child(TXN_KIND)).start)
        versions = [await self._current_version(dt_key, key) for key in wanted]
        now = runtime.now()
        record = DTRecord(
            dt_key,
            Mode.NONE,
            get_list_obj=wanted,
            get_list_version=versions,
            modified=now,
            read_lock=True,
            read_lock_timeout=now + duration,
        )

        def logged() -> None:
            runtime.record(EventType.MODE, dt_key, None, f"{NEW}->{Mode.NONE}")
            for key, version in record.reads:
                detail = str(version) if version is not None else NO_VERSION
                runtime.record(EventType.READ, dt_key, key, detail)

        def body(lt: LTContext) -> None:
            if lt.get(dt_key) is not None:
                return
            lt.put(record.to_entity())
            lt.after_commit(logged)

        await self.dtxn.engine.lt("read_locks:acquire:put", root, body)
        logger.debug(
            "read lock %s on %d key(s) until %s",
            dt_key,
            len(wanted),
            record.read_lock_timeout,
        )
        return record

    def _activate(  # noqa: PLR0913
        self,
        root: Key,
        key: Key,
        client_desc: str,
        now: int,
        lt: LTContext,
    ) -> DTRecord:
        entity = lt.get(key)
        if entity is None:
            msg = f"read lock {key} no longer exists"
            raise ReadLockExpired(msg)
        record = DTRecord.from_entity(entity)
        if record.mode is Mode.INIT0 and record.read_lock and record.client_desc == client_desc:
            # Our own activation, committed by a reported-failed LT.
            return record
        if record.mode is not Mode.NONE or not record.read_lock:
            msg = f"{key} is not an unused read lock (mode {record.mode})"
            raise ReadLockExpired(msg)
        if record.read_lock_timeout is None or record.read_lock_timeout <= now:
            msg = f"read lock {key} expired at {record.read_lock_timeout}"
            raise ReadLockExpired(msg)
        self.dtxn.queues.check_room(lt, root)
        self.dtxn.engine.apply_transition(
            lt,
            record,
            Mode.INIT0,
            mutate=partial(_set_desc, client_desc),
        )
        return record

    async def activate(self, user: str, key: Key, client_desc: str = "") -> DTRecord:
        """Turn the read lock ``key`` into a running transaction (NONE to INIT0).

        Raises:
            ReadLockExpired: If the lock is gone, used or past its timeout.

        """
        root = user_key(user)
        if key.root != root or key.kind != TXN_KIND:
            msg = f"{key} is not a read lock of user {user}"
            raise ReadLockExpired(msg)
        now = self.dtxn.runtime.now()
        try:
            return await self.dtxn.engine.lt(
                "read_locks:activate",
                root,
                partial(self._activate, root, key, client_desc, now),
            )
        except ReadLockExpired:
            logger.warning("refused to reuse read lock %s", key)
            raise

    async def holders(self, target: Key) -> list[DTRecord]:
        """Unexpired read locks listing ``target``; may miss some."""
        await self.dtxn.runtime.checkpoint("read_locks:query")
        where = f'dt__mode="{Mode.NONE}" & dt__read_lock=true & dt__get_list_obj#"{target}"'
        now = self.dtxn.runtime.now()
        found = [
            DTRecord.from_entity(entity)
            for entity in self.dtxn.store.general_query(TXN_KIND, where)
        ]
        return [
            record
            for record in found
            if record.read_lock_timeout is not None
            and record.read_lock_timeout + self.pad > now
        ]

    async def writer_respect_read_locks(self, dt: Key, target: Key) -> None:
        """Wait until no read lock covers ``target``, querying at most twice."""
        if not self.enabled:
            return
        runtime = self.dtxn.runtime
        holders = await self.holders(target)
        for round_ in range(2):
            if not holders:
                return
            earliest = min(holders, key=lambda record: (record.read_lock_timeout, record.key))
            until = (earliest.read_lock_timeout or 0) + self.pad
            runtime.record(EventType.WAIT_ON, dt, target, str(earliest.key))
            logger.debug("%s waits for read lock %s on %s", dt, earliest.key, target)
            await runtime.sleep(until - runtime.now(), "read_locks:wait")
            if round_ == 0:
                holders = await self.holders(target)


def _set_desc(client_desc: str, record: DTRecord) -> None:
    record.client_desc = client_desc


__all__ = ("ReadLocks",)
