"""Simulated entity-group datastore.

The store offers exactly the local-transaction contract the distributed layer
builds on: serializable transactions confined to one entity group, reads that
always return a whole-entity snapshot, eventually consistent reads that may be
stale, general queries whose index may omit entities, and submarine writes that
commit while reporting a failure.

Each group keeps the list of every snapshot it ever committed. A committed
local transaction appends one snapshot and one entry to the commit log.

Classes:
    StoreConfig: Fault-injection knobs and the fault RNG seed.
    ReadMode: Strong or eventual reads.
    Entity: A stored entity with its transaction meta-data.
    LTContext: The handle a local-transaction body works through.
    CommitRecord: One committed local transaction.
    EGStore: The store itself.
"""

from __future__ import annotations

import json
import logging
import random
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import TYPE_CHECKING, Any

from .errors import CrossGroupAccess, QueryInsideLT, StoreError, TransientFailure
from .keys import Key
from .parsers import WhereParser

if TYPE_CHECKING:
    from collections.abc import Callable

    from .typing import LTBody, Predicate, Props, PropValue

logger = logging.getLogger(__name__)

NO_VERSION = "none"
NOT_FLAVORED = "-"
NO_LOCK = "-"


@dataclass(frozen=True, slots=True)
class StoreConfig:
    """Fault-injection settings of an :class:`EGStore`.

    Attributes:
        p_submarine (float): Chance that a committed writing LT reports failure.
        p_stale_eventual (float): Chance that an eventual read is served stale.
        p_stale_index (float): Chance, per matching entity, that a query omits it.
        lt_retry_limit (int): Retries of a failed LT per scheduling turn.
        rng_seed (int): Seed of the fault RNG.

    """

    p_submarine: float = 0.0
    p_stale_eventual: float = 0.0
    p_stale_index: float = 0.0
    lt_retry_limit: int = 3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        """Reject probabilities outside [0, 1] and non-positive retry limits."""
        for name in ("p_submarine", "p_stale_eventual", "p_stale_index"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                msg = f"{name} must be within [0, 1], got {value}"
                raise ValueError(msg)
        if self.lt_retry_limit < 1:
            msg = f"lt_retry_limit must be at least 1, got {self.lt_retry_limit}"
            raise ValueError(msg)
        if self.rng_seed < 0:
            msg = f"rng_seed must be unsigned, got {self.rng_seed}"
            raise ValueError(msg)


class ReadMode(StrEnum):
    STRONG = "strong"
    EVENTUAL = "eventual"


def _copy_value(value: PropValue) -> PropValue:
    return list(value) if isinstance(value, list) else value


@dataclass(slots=True)
class Entity:
    """A stored entity.

    ``version`` and ``write_lock`` hold keys of distributed transactions. They
    are only meaningful when ``dt_flavored`` is set, i.e. when the entity
    carries the version meta-field at all.
    """

    key: Key
    props: Props = field(default_factory=dict)
    dt_flavored: bool = False
    version: Key | None = None
    write_lock: Key | None = None

    def copy(self, **changes: Any) -> Entity:  # noqa: ANN401
        props = {name: _copy_value(value) for name, value in self.props.items()}
        return replace(self, props=props, **changes)


@dataclass(frozen=True, slots=True)
class CommitRecord:
    group: Key
    version: int
    writes: dict[Key, Entity | None]


@dataclass(slots=True)
class _Group:
    snapshots: list[dict[Key, Entity]]
    history: dict[Key, list[Entity | None]] = field(default_factory=dict)

    @property
    def latest(self) -> dict[Key, Entity]:
        return self.snapshots[-1]


class LTContext:
    """Handle passed to the body of a local transaction.

    Every key touched through it must belong to ``group``; writes are buffered
    and only reach the store when the body returns.
    """

    def __init__(self, store: EGStore, group: Key) -> None:  # noqa: D107
        self.store = store
        self.group = group
        self.read_set: dict[Key, None] = {}
        self.write_set: dict[Key, None] = {}
        self.active = True
        self._base = store.group_snapshot(group)
        self._writes: dict[Key, Entity | None] = {}
        self._after_commit: list[Callable[[], None]] = []

    def _check(self, key: Key) -> None:
        if not self.active:
            msg = f"local transaction on {self.group} is no longer active"
            raise StoreError(msg)
        if key.root != self.group:
            raise CrossGroupAccess(self.group, key)

    def _current(self, key: Key) -> Entity | None:
        if key in self._writes:
            return self._writes[key]
        return self._base.get(key)

    def get(self, key: Key) -> Entity | None:
        """Read the latest committed state of ``key`` (or this LT's own write)."""
        self._check(key)
        self.read_set[key] = None
        entity = self._current(key)
        return entity.copy() if entity is not None else None

    def put(self, entity: Entity) -> Key:
        """Buffer a write, allocating the leaf id of an incomplete key."""
        if entity.key.is_complete:
            self._check(entity.key)
            key = entity.key
        else:
            parent = entity.key.parent
            if parent is None:
                raise CrossGroupAccess(self.group, entity.key)
            self._check(parent)
            key = entity.key.with_id(self.store.allocate_ids(entity.key, 1).start)
        self.write_set[key] = None
        self._writes[key] = entity.copy(key=key)
        return key

    def delete(self, key: Key) -> None:
        self._check(key)
        self.write_set[key] = None
        self._writes[key] = None

    def ancestor_query(self, root: Key) -> list[Entity]:
        """Exact, transactional ancestor query within this LT's group."""
        self._check(root)
        keys = {**dict.fromkeys(self._base), **dict.fromkeys(self._writes)}
        found = []
        for key in sorted(k for k in keys if k.is_descendant_of(root)):
            entity = self._current(key)
            if entity is not None:
                found.append(entity.copy())
        return found

    def after_commit(self, callback: Callable[[], None]) -> None:
        """Run ``callback`` once the LT has committed."""
        self._after_commit.append(callback)


class EGStore:
    """The simulated entity-group store.

    Attributes:
        config (StoreConfig): Fault-injection settings.
        extensions (dict[str, Any]): Layers registered on this store.
        config_map (dict[str, Any]): Free-form settings read by extensions.
        commit_log (list[CommitRecord]): Every committed writing LT, in order.

    """

    def __init__(
        self,
        config: StoreConfig | None = None,
        config_map: dict[str, Any] | None = None,
    ) -> None:
        """Create an empty store.

        :param config: fault-injection settings, defaults to no faults
        :param config_map: settings read by extensions, defaults to empty
        """
        self.config = config or StoreConfig()
        self.config_map: dict[str, Any] = config_map or {}
        self.extensions: dict[str, Any] = {}
        self.commit_log: list[CommitRecord] = []
        self.rng = random.Random(self.config.rng_seed)
        self._groups: dict[Key, _Group] = {}
        self._initial: dict[Key, dict[Key, Entity]] = {}
        self._allocators: dict[tuple[str, str], int] = {}
        self._active: LTContext | None = None
        self._where = WhereParser()

    @contextmanager
    def override(self, **changes: Any) -> Iterator[StoreConfig]:  # noqa: ANN401
        """Temporarily replace fault-injection settings."""
        saved = self.config
        self.config = replace(saved, **changes)
        try:
            yield self.config
        finally:
            self.config = saved

    def _group(self, root: Key) -> _Group:
        group = self._groups.get(root)
        if group is None:
            group = _Group(snapshots=[{}])
            self._groups[root] = group
            self._initial[root] = {}
        return group

    def group_snapshot(self, group: Key) -> dict[Key, Entity]:
        found = self._groups.get(group)
        return found.latest if found is not None else {}

    def group_version(self, group: Key) -> int:
        """Number of committed writing LTs on ``group``."""
        found = self._groups.get(group)
        return len(found.snapshots) - 1 if found is not None else 0

    def snapshots(self, group: Key) -> list[dict[Key, Entity]]:
        found = self._groups.get(group)
        return list(found.snapshots) if found is not None else [{}]

    @staticmethod
    def _allocator_slot(prototype: Key) -> tuple[str, str]:
        root = "" if prototype.parent is None else str(prototype.root)
        return root, prototype.kind

    def allocate_ids(self, prototype: Key, count: int = 1) -> range:
        """Reserve ``count`` fresh numeric ids for ``prototype``'s (root, kind).

        Ids are never handed out twice, even after the entities are deleted.
        """
        if count < 1:
            msg = f"count must be positive, got {count}"
            raise ValueError(msg)
        slot = self._allocator_slot(prototype)
        start = self._allocators.get(slot, 0) + 1
        self._allocators[slot] = start + count - 1
        return range(start, start + count)

    def run_in_lt[T](self, group: Key, body: LTBody[T]) -> T:
        """Run ``body`` as one local transaction on ``group``.

        Args:
            group: Any key of the entity group; its root is used.
            body: Function of the :class:`LTContext`. Raising discards the LT.

        Returns:
            Whatever ``body`` returns.

        Raises:
            CrossGroupAccess: If the body touched a key outside the group.
            TransientFailure: If the commit was reported as failed. The write
                may nonetheless have committed.

        """
        if self._active is not None:
            msg = "local transactions do not nest"
            raise StoreError(msg)
        ctx = LTContext(self, group.root)
        self._active = ctx
        try:
            result = body(ctx)
        finally:
            ctx.active = False
            self._active = None
        if not ctx._writes:  # noqa: SLF001
            return result
        self._commit(ctx.group, ctx._writes)  # noqa: SLF001
        for callback in ctx._after_commit:  # noqa: SLF001
            callback()
        if self.rng.random() < self.config.p_submarine:
            logger.debug("submarine write on %s", ctx.group)
            msg = f"commit on {ctx.group} reported as failed"
            raise TransientFailure(msg)
        return result

    def _commit(self, root: Key, writes: dict[Key, Entity | None]) -> None:
        group = self._group(root)
        snapshot = dict(group.latest)
        for key, entity in writes.items():
            if entity is None:
                snapshot.pop(key, None)
            else:
                snapshot[key] = entity
            states = group.history.setdefault(key, [self._initial[root].get(key)])
            states.append(entity)
        group.snapshots.append(snapshot)
        self.commit_log.append(
            CommitRecord(root, len(group.snapshots) - 1, dict(writes)),
        )

    def get(self, key: Key, mode: ReadMode = ReadMode.STRONG) -> Entity | None:
        """Read ``key`` outside any local transaction.

        Eventual reads are served, with probability ``p_stale_eventual``, from
        some earlier committed state of the entity, never a mix of states.
        """
        group = self._groups.get(key.root)
        if group is None:
            return None
        entity = group.latest.get(key)
        if mode is ReadMode.EVENTUAL:
            states = group.history.get(key, [])
            if len(states) > 1 and self.rng.random() < self.config.p_stale_eventual:
                entity = self.rng.choice(states[:-1])
        return entity.copy() if entity is not None else None

    def put(self, entity: Entity) -> Key:
        """Write ``entity`` in an implicit single-entity local transaction."""
        if not entity.key.is_complete and entity.key.parent is None:
            entity = entity.copy(
                key=entity.key.with_id(self.allocate_ids(entity.key, 1).start),
            )
        group = entity.key.root if entity.key.is_complete else entity.key.parent.root  # type: ignore[union-attr]
        return self.run_in_lt(group, lambda lt: lt.put(entity))

    def delete(self, key: Key) -> None:
        """Delete ``key`` in an implicit single-entity local transaction."""
        self.run_in_lt(key.root, lambda lt: lt.delete(key))

    def _omit(self, entities: list[Entity]) -> list[Entity]:
        p = self.config.p_stale_index
        if p <= 0.0:
            return entities
        return [entity for entity in entities if self.rng.random() >= p]

    def ancestor_query(
        self,
        root: Key,
        inside: LTContext | None = None,
    ) -> list[Entity]:
        """Entities at or below ``root``.

        Inside an LT the answer is exact; outside it may omit entities.
        """
        if inside is not None:
            return inside.ancestor_query(root)
        snapshot = self.group_snapshot(root.root)
        found = [snapshot[k].copy() for k in sorted(snapshot) if k.is_descendant_of(root)]
        return self._omit(found)

    def general_query(
        self,
        kind: str | None = None,
        where: str | None = None,
        predicate: Predicate | None = None,
    ) -> list[Entity]:
        """Query every group by kind and property predicate.

        Args:
            kind: Only entities whose leaf kind matches.
            where: A predicate in the ``where`` language, e.g. ``mode="INIT0"``.
            predicate: An already built predicate, combined with ``where``.

        Raises:
            QueryInsideLT: If called from inside a local transaction.

        """
        if self._active is not None:
            msg = "general queries are not allowed inside a local transaction"
            raise QueryInsideLT(msg)
        tests = [p for p in (predicate,) if p is not None]
        if where:
            tests.append(self._where.parse(where))
        found = [
            entity.copy()
            for entity in self.scan()
            if (kind is None or entity.key.kind == kind)
            and all(test(entity) for test in tests)
        ]
        return self._omit(found)

    def scan(self) -> list[Entity]:
        """Every stored entity, exact and sorted; for harness checks only."""
        found = [entity for group in self._groups.values() for entity in group.latest.values()]
        return sorted(found, key=lambda entity: entity.key)

    def replay_commit_log(self) -> dict[Key, list[dict[Key, Entity]]]:
        """Rebuild every group's snapshot list from its initial state."""
        rebuilt = {root: [dict(initial)] for root, initial in self._initial.items()}
        for record in self.commit_log:
            snapshot = dict(rebuilt[record.group][-1])
            for key, entity in record.writes.items():
                if entity is None:
                    snapshot.pop(key, None)
                else:
                    snapshot[key] = entity
            rebuilt[record.group].append(snapshot)
        return rebuilt

    def dump(self) -> str:
        """Serialize the latest state, one entity per line."""
        return "".join(f"{format_entity(entity)}\n" for entity in self.scan())

    @classmethod
    def from_dump(
        cls,
        text: str,
        config: StoreConfig | None = None,
        config_map: dict[str, Any] | None = None,
    ) -> EGStore:
        """Build a store whose initial state is the dumped one."""
        store = cls(config, config_map)
        for line in text.splitlines():
            if not line.strip():
                continue
            entity = parse_entity(line)
            group = store._group(entity.key.root)  # noqa: SLF001
            group.latest[entity.key] = entity
            store._initial[entity.key.root][entity.key] = entity  # noqa: SLF001
            if entity.key.id is not None:
                slot = store._allocator_slot(entity.key)  # noqa: SLF001
                current = store._allocators.get(slot, 0)  # noqa: SLF001
                store._allocators[slot] = max(current, entity.key.id)  # noqa: SLF001
        return store


def encode_value(value: PropValue) -> Any:  # noqa: ANN401
    if isinstance(value, Key):
        return {"$key": str(value)}
    if isinstance(value, list):
        return [encode_value(item) for item in value]
    return value


def decode_value(value: Any) -> PropValue:  # noqa: ANN401
    if isinstance(value, dict):
        return Key.parse(value["$key"])
    if isinstance(value, list):
        return [decode_value(item) for item in value]  # type: ignore[misc]
    return value


def format_props(props: Props) -> str:
    """Canonical JSON text of a property map."""
    encoded = {name: encode_value(value) for name, value in props.items()}
    return json.dumps(encoded, sort_keys=True, separators=(",", ":"))


def format_version(entity: Entity | None) -> str:
    """Version column of a dump line, also used in history READ events."""
    if entity is None or not entity.dt_flavored:
        return NOT_FLAVORED if entity is not None else NO_VERSION
    return str(entity.version) if entity.version is not None else NO_VERSION


def format_entity(entity: Entity) -> str:
    lock = str(entity.write_lock) if entity.write_lock is not None else NO_LOCK
    return "\t".join(
        (str(entity.key), format_version(entity), lock, format_props(entity.props)),
    )


def parse_entity(line: str) -> Entity:
    """Parse one dump line back into an :class:`Entity`."""
    try:
        key_text, version_text, lock_text, props_text = line.split("\t", 3)
    except ValueError:
        msg = f"malformed dump line: {line!r}"
        raise StoreError(msg) from None
    props = {name: decode_value(value) for name, value in json.loads(props_text).items()}
    flavored = version_text != NOT_FLAVORED
    version = None if version_text in (NOT_FLAVORED, NO_VERSION) else Key.parse(version_text)
    lock = None if lock_text == NO_LOCK else Key.parse(lock_text)
    return Entity(Key.parse(key_text), props, flavored, version, lock)


__all__ = (
    "CommitRecord",
    "EGStore",
    "Entity",
    "LTContext",
    "ReadMode",
    "StoreConfig",
    "decode_value",
    "encode_value",
    "format_entity",
    "format_props",
    "format_version",
    "parse_entity",
)
