"""Run-and-record phase of a distributed transaction.

A :class:`DTContext` is what the client function receives. Reads are served
from the per-transaction cache when possible and otherwise from the store,
recording the version seen; writes only touch the cache until the engine
flushes it into shadows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

from .errors import DeleteThenPutNumericId, DTAborted, FlavorViolation
from .history import EventType
from .records import check_client_entity, is_reserved_key, pmd_key
from .store import Entity, ReadMode, format_version

if TYPE_CHECKING:
    from .extension import DistributedTransactions
    from .keys import Key
    from .records import DTRecord
    from .store import LTContext

logger = logging.getLogger(__name__)


class Op(StrEnum):
    GET = "GET"
    PUT = "PUT"
    DELETE = "DELETE"


@dataclass(frozen=True, slots=True)
class ReadFlags:
    """Per-read options; they combine freely.

    Attributes:
        in_lt (bool): Read strongly, inside a local transaction, on a miss.
        read_through (bool): Always go to the store and abort fast if the
            version differs from the one already seen.
        dont_cache (bool): Record the version but keep no copy of the object.

    """

    in_lt: bool = False
    read_through: bool = False
    dont_cache: bool = False


DEFAULT_FLAGS = ReadFlags()


@dataclass(slots=True)
class TxnCache:
    """The optimistic cache; never shared between workers, never persisted.

    A key written without being read is in ``operation_cache`` but absent
    from ``version_cache``.
    """

    object_cache: dict[Key, Entity | None] = field(default_factory=dict)
    version_cache: dict[Key, Key | None] = field(default_factory=dict)
    operation_cache: dict[Key, Op] = field(default_factory=dict)
    created: dict[Key, None] = field(default_factory=dict)


def _holder(entity: Entity | None, meta: Entity | None) -> Entity | None:
    return entity if entity is not None else meta


class DTContext:
    """Client-facing handle of one distributed transaction.

    Attributes:
        record (DTRecord): The in-memory copy of the transaction record.
        cache (TxnCache): The optimistic cache.
        doomed (str | None): Abort reason once the transaction cannot commit.
        shadows (list[tuple[Key | None, Key]]): Shadows written so far by flush.
        preallocated (dict[tuple[Key | None, str], list[int]]): Ids to hand out,
            per (parent, kind), before asking the store for new ones.

    """

    def __init__(self, dtxn: DistributedTransactions, record: DTRecord) -> None:  # noqa: D107
        self.dtxn = dtxn
        self.record = record
        self.cache = TxnCache()
        self.doomed: str | None = None
        self.result: str | None = None
        self.shadows: list[tuple[Key | None, Key]] = []
        self.preallocated: dict[tuple[Key | None, str], list[int]] = {}
        for key, version in record.reads:
            self.cache.version_cache[key] = version
            self.cache.operation_cache[key] = Op.GET

    @property
    def key(self) -> Key:
        return self.record.key

    def doom(self, reason: str) -> DTAborted:
        """Mark the transaction as aborting and return the error to raise."""
        if self.doomed is None:
            self.doomed = reason
            logger.debug("%s doomed: %s", self.key, reason)
        return DTAborted(self.doomed)

    def _require_live(self) -> None:
        if self.doomed is not None:
            raise DTAborted(self.doomed)

    async def get(self, key: Key, flags: ReadFlags = DEFAULT_FLAGS) -> Entity | None:
        """Read ``key`` through the cache.

        Args:
            key: A complete client key.
            flags: Read options.

        Returns:
            The client's copy of the entity, or ``None`` if absent or deleted.

        Raises:
            FlavorViolation: If the key is reserved or the entity is not DT-flavored.
            DTAborted: If the read proves the transaction cannot commit.

        """
        self._require_live()
        if is_reserved_key(key):
            msg = f"{key} is in the reserved DT__ namespace"
            self.doom(f"FlavorViolation: {msg}")
            raise FlavorViolation(msg)
        cache = self.cache
        op = cache.operation_cache.get(key)
        if op in (Op.PUT, Op.DELETE) or (
            key in cache.object_cache and not flags.read_through
        ):
            cached = cache.object_cache[key]
            return cached.copy() if cached is not None else None

        entity, version = await self._read_store(key, flags)
        if key in cache.version_cache and cache.version_cache[key] != version:
            reason = f"version of {key} changed within the transaction"
            raise self.doom(reason)
        if key not in cache.version_cache:
            cache.version_cache[key] = version
            self.dtxn.runtime.record(EventType.READ, self.key, key, _version_text(version))
        cache.operation_cache.setdefault(key, Op.GET)
        if not flags.dont_cache:
            cache.object_cache[key] = entity
        return entity.copy() if entity is not None else None

    async def _read_store(
        self,
        key: Key,
        flags: ReadFlags,
    ) -> tuple[Entity | None, Key | None]:
        engine = self.dtxn.engine
        finished: dict[Key, None] = {}
        phantoms = 0
        while True:
            entity, meta = await self._fetch(key, flags)
            if entity is not None and not entity.dt_flavored:
                msg = f"{key} is not DT-flavored"
                self.doom(f"FlavorViolation: {msg}")
                raise FlavorViolation(msg)
            holder = _holder(entity, meta)
            lock = holder.write_lock if holder is not None else None
            if lock is None or lock == self.key:
                version = holder.version if holder is not None else None
                return _client_copy(entity), version
            if lock in finished:
                # A stale read can still show the lock of a finished transaction.
                phantoms += 1
                if phantoms > self.dtxn.phantom_lock_retries:
                    logger.warning("%s keeps seeing a released lock on %s", self.key, key)
                    reason = f"phantom lock by {lock} on {key}"
                    raise self.doom(reason)
                continue
            self.dtxn.runtime.record(EventType.WAIT_ON, self.key, key, str(lock))
            mode = await engine.roll_forward(lock)
            if mode is None or mode.is_terminal:
                finished[lock] = None

    async def _fetch(
        self,
        key: Key,
        flags: ReadFlags,
    ) -> tuple[Entity | None, Entity | None]:
        store = self.dtxn.store
        meta_key = pmd_key(key)
        if flags.in_lt or flags.read_through:

            def body(lt: LTContext) -> tuple[Entity | None, Entity | None]:
                entity = lt.get(key)
                meta = lt.get(meta_key) if entity is None else None
                return entity, meta

            return await self.dtxn.engine.lt("context:get:in_lt", key.root, body)
        await self.dtxn.runtime.checkpoint("context:get:eventual")
        entity = store.get(key, ReadMode.EVENTUAL)
        meta = None
        if entity is None:
            meta = store.get(meta_key, ReadMode.EVENTUAL)
        return entity, meta

    def put(self, entity: Entity) -> Key:
        """Cache a write. Incomplete keys get their id allocated right away.

        Returns:
            The complete key the entity will be stored under.

        Raises:
            FlavorViolation: For reserved kinds or ``dt__`` property names.
            DeleteThenPutNumericId: For a put after a delete of a numeric-id key.

        """
        self._require_live()
        check_client_entity(entity)
        key = entity.key
        if not key.is_complete:
            key = key.with_id(self._next_id(key))
            self.cache.created[key] = None
        elif self.cache.operation_cache.get(key) is Op.DELETE and not key.is_named:
            msg = f"{key} was deleted in this transaction and cannot be put again"
            raise DeleteThenPutNumericId(msg)
        self.cache.object_cache[key] = Entity(key, entity.copy().props, dt_flavored=True)
        self.cache.operation_cache[key] = Op.PUT
        return key

    def _next_id(self, key: Key) -> int:
        planned = self.preallocated.get((key.parent, key.kind))
        if planned:
            return planned.pop(0)
        return self.dtxn.store.allocate_ids(key, 1).start

    def delete(self, key: Key) -> None:
        self._require_live()
        if is_reserved_key(key):
            msg = f"{key} is in the reserved DT__ namespace"
            raise FlavorViolation(msg)
        self.cache.object_cache[key] = None
        self.cache.operation_cache[key] = Op.DELETE


def _client_copy(entity: Entity | None) -> Entity | None:
    if entity is None:
        return None
    return entity.copy(write_lock=None)


def _version_text(version: Key | None) -> str:
    return str(version) if version is not None else format_version(None)


__all__ = ("DEFAULT_FLAGS", "DTContext", "Op", "ReadFlags", "TxnCache")
