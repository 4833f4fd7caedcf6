"""The distributed transaction protocol.

A transaction runs the client function against a private cache, flushes its
writes into shadow entities, and becomes READY1. From there any worker may
drive it to completion: lock every written object in key order, re-check every
read version, then copy the shadows over their targets one entity group at a
time. Every store-visible step re-reads what it depends on inside a local
transaction, so any number of workers can roll the same transaction forward.

Classes:
    LockOutcome: Result of a lock pass.
    Engine: The protocol steps, bound to one :class:`DistributedTransactions`.
"""

from __future__ import annotations

import json
import logging
from enum import StrEnum
from functools import partial
from typing import TYPE_CHECKING, Any

from .context import DTContext, Op
from .errors import DanglingLock, DTxnError, IllegalTransition, SoftTimeout, TransientFailure
from .history import EventType
from .records import (
    DELETED,
    NEW,
    SHADOW_DELETE_KIND,
    TXN_KIND,
    DTRecord,
    Mode,
    ShadowRecord,
    is_legal,
    pmd_key,
    release_lock,
    user_key,
)
from .store import Entity, encode_value

if TYPE_CHECKING:
    from collections.abc import Callable

    from .extension import DistributedTransactions
    from .keys import Key
    from .sim import Runtime
    from .store import EGStore, LTContext
    from .typing import ClientFunction, LTBody

logger = logging.getLogger(__name__)

_NOT_READ = object()


class LockOutcome(StrEnum):
    LOCKED = "locked"
    AHEAD = "ahead"
    ABORTED = "aborted"


class _Step(StrEnum):
    LOCKED = "locked"
    AHEAD = "ahead"
    BLOCKED = "blocked"
    FLAVOR = "flavor"
    VERSION = "version"


def describe_call(fn: ClientFunction, args: tuple[Any, ...]) -> str:
    """Opaque description of a client call, stored on the transaction."""
    name = getattr(fn, "__name__", repr(fn))
    return json.dumps(
        {"fn": name, "args": encode_value(list(args))},
        sort_keys=True,
        separators=(",", ":"),
    )


def encode_result(value: Any) -> str:  # noqa: ANN401
    return json.dumps(encode_value(value), sort_keys=True, default=str)


class Engine:
    """Protocol steps of distributed transactions."""

    def __init__(self, dtxn: DistributedTransactions) -> None:  # noqa: D107
        self.dtxn = dtxn

    @property
    def store(self) -> EGStore:
        return self.dtxn.store

    @property
    def runtime(self) -> Runtime:
        return self.dtxn.runtime

    async def lt[T](self, point: str, group: Key, body: LTBody[T]) -> T:
        """Run a local transaction, retrying reported failures.

        Up to ``lt_retry_limit`` attempts are made per scheduling turn; then the
        worker yields and tries again. The body must tolerate re-execution
        after a submarine commit.
        """
        limit = self.store.config.lt_retry_limit
        while True:
            await self.runtime.checkpoint(point)
            for attempt in range(limit):
                try:
                    return self.store.run_in_lt(group, body)
                except TransientFailure:
                    logger.debug("%s: transient failure on %s (try %d)", point, group, attempt + 1)

    async def load(self, key: Key) -> DTRecord | None:
        """Strongly read a transaction record."""
        entity = await self.lt("engine:load", key.root, lambda lt: lt.get(key))
        return DTRecord.from_entity(entity) if entity is not None else None

    async def begin_dt(
        self,
        user: str,
        client_desc: str = "",
        *,
        read_lock: Key | None = None,
        dt_key: Key | None = None,
    ) -> DTContext:
        """Create the transaction record in INIT0 and return a fresh context.

        The record id is allocated before the first put, so retrying the put
        never creates a second record. A caller may pass that id as ``dt_key``.

        Raises:
            QueueFull: If the user is in synchronous mode and has an
                outstanding transaction.
            ReadLockExpired: If ``read_lock`` names an unusable read lock.

        """
        if read_lock is not None:
            record = await self.dtxn.read_locks.activate(user, read_lock, client_desc)
            return DTContext(self.dtxn, record)
        root = user_key(user)
        key = dt_key
        if key is None:
            key = root.child(TXN_KIND, self.store.allocate_ids(root.child(TXN_KIND)).start)
        record = DTRecord(key, Mode.INIT0, modified=self.runtime.now(), client_desc=client_desc)

        def body(lt: LTContext) -> None:
            if lt.get(record.key) is not None:
                return
            self.dtxn.queues.check_room(lt, root)
            lt.put(record.to_entity())
            lt.after_commit(partial(self._log_modes, record.key, [(NEW, Mode.INIT0)]))

        await self.lt("engine:begin:put", root, body)
        return DTContext(self.dtxn, record)

    async def _create_shadow(self, shadow: ShadowRecord) -> Key:
        # Each attempt allocates a new id; only the acknowledged one is kept.
        entity = shadow.to_entity()
        limit = self.store.config.lt_retry_limit
        while True:
            await self.runtime.checkpoint("engine:flush:shadow")
            for _ in range(limit):
                try:
                    return self.store.put(entity)
                except TransientFailure:
                    logger.debug("shadow put for %s failed, retrying", shadow.target)

    async def flush_cache(self, ctx: DTContext) -> None:
        """Turn the cache into the record's lists and write one shadow per write."""
        cache = ctx.cache
        record = ctx.record
        reads = sorted(cache.version_cache.items(), key=lambda item: item[0])
        record.get_list_obj = [key for key, _ in reads]
        record.get_list_version = [version for _, version in reads]

        writes = [
            (key, op)
            for key, op in cache.operation_cache.items()
            if op is not Op.GET and not (op is Op.DELETE and key in cache.created)
        ]
        writes.sort(key=lambda item: (item[0].root, item[0] in cache.created, item[0]))
        record.put_list_obj = []
        record.put_list_shadow = []
        for key, op in writes:
            cached = cache.object_cache.get(key)
            payload = cached.props if op is Op.PUT and cached is not None else None
            shadow = ShadowRecord(key, record.key, self.runtime.now(), payload)
            shadow_key = await self._create_shadow(shadow)
            obj = None if key in cache.created else key
            ctx.shadows.append((obj, shadow_key))
            record.put_list_obj.append(obj)
            record.put_list_shadow.append(shadow_key)

    async def go_ready(self, ctx: DTContext) -> Mode | None:
        """Persist the lists and move INIT0 to READY1.

        If the transaction was aborted meanwhile, the abort is rolled forward
        instead.
        """
        flushed = ctx.record

        def mutate(stored: DTRecord) -> None:
            stored.get_list_obj = list(flushed.get_list_obj)
            stored.get_list_version = list(flushed.get_list_version)
            stored.put_list_obj = list(flushed.put_list_obj)
            stored.put_list_shadow = list(flushed.put_list_shadow)
            stored.half_timed_out = None
            stored.result = ctx.result

        mode = await self.transition_mode(ctx.key, Mode.INIT0, Mode.READY1, mutate=mutate)
        if mode is Mode.READY1:
            flushed.mode = Mode.READY1
        elif mode is Mode.ABORTING3:
            return await self.dispatch(ctx.key)
        return mode

    def _lock_step(
        self,
        dt: Key,
        obj: Key,
        shadow: Key,
        expected: object,
        lt: LTContext,
    ) -> tuple[_Step, Key | None]:
        if lt.get(shadow) is None:
            return _Step.AHEAD, None
        target = lt.get(obj)
        if target is not None and not target.dt_flavored:
            return _Step.FLAVOR, None
        holder = target
        if target is None:
            holder = lt.get(pmd_key(obj))
            if holder is None:
                # Creating the meta-data already locked is the idempotency guard.
                holder = Entity(pmd_key(obj), {}, dt_flavored=True, write_lock=dt)
                lt.put(holder)
                lt.after_commit(partial(self.runtime.record, EventType.LOCK, dt, obj))
        if holder is not None:
            if holder.write_lock is None:
                lt.put(holder.copy(write_lock=dt))
                lt.after_commit(partial(self.runtime.record, EventType.LOCK, dt, obj))
            elif holder.write_lock != dt:
                return _Step.BLOCKED, holder.write_lock
        version = holder.version if holder is not None else None
        if expected is not _NOT_READ and version != expected:
            return _Step.VERSION, None
        return _Step.LOCKED, None

    async def lock_written_objects(self, record: DTRecord) -> LockOutcome:
        """Take the write lock of every written object, in key order.

        Written objects that were also read have their version checked as
        soon as the lock is held. A lock held by another transaction makes
        this worker roll that transaction forward and retry.
        """
        dt = record.key
        read_versions = dict(record.reads)
        for obj, shadow in record.writes:
            if obj is None:
                continue
            await self.dtxn.read_locks.writer_respect_read_locks(dt, obj)
            expected = read_versions.get(obj, _NOT_READ)
            finished: dict[Key, None] = {}
            while True:
                step, blocker = await self.lt(
                    "engine:lock:acquire",
                    obj.root,
                    partial(self._lock_step, dt, obj, shadow, expected),
                )
                if step is _Step.LOCKED:
                    break
                if step is _Step.AHEAD:
                    return LockOutcome.AHEAD
                if step is not _Step.BLOCKED:
                    reason = f"{step} check failed on {obj} while locking"
                    self.runtime.record(EventType.CHECK_FAIL, dt, obj, str(step))
                    await self._abort_locked(dt, reason)
                    return LockOutcome.ABORTED
                assert blocker is not None  # noqa: S101
                if blocker in finished:
                    msg = f"{obj} is still locked by finished transaction {blocker}"
                    raise DanglingLock(msg)
                self.runtime.record(EventType.WAIT_ON, dt, obj, str(blocker))
                mode = await self.roll_forward(blocker)
                if mode is None or mode.is_terminal:
                    finished[blocker] = None
        self.runtime.record(EventType.ENTER_2LOCKED, dt)
        return LockOutcome.LOCKED

    async def _abort_locked(self, dt: Key, reason: str) -> Mode | None:
        return await self.transition_mode(
            dt,
            Mode.LOCKED2,
            Mode.ABORTING3,
            mutate=partial(_set_result, reason),
        )

    def _check_step(
        self,
        dt: Key,
        pairs: list[tuple[Key, Key | None]],
        lt: LTContext,
    ) -> tuple[Key, str] | None:
        for key, recorded in pairs:
            target = lt.get(key)
            if target is not None and not target.dt_flavored:
                return key, "flavor"
            holder = target
            if target is None:
                holder = lt.get(pmd_key(key))
            if holder is not None and holder.write_lock not in (None, dt):
                return key, "locked"
            version = holder.version if holder is not None else None
            if version != recorded:
                return key, "version"
        return None

    async def check_read_objects(self, record: DTRecord) -> Mode | None:
        """Re-check, one group at a time, that nothing read has changed.

        Keys that are also written were checked under their lock and are
        skipped. A foreign lock or a different version aborts.
        """
        dt = record.key
        written = {obj for obj in record.put_list_obj if obj is not None}
        groups: dict[Key, list[tuple[Key, Key | None]]] = {}
        for key, version in record.reads:
            if key not in written:
                groups.setdefault(key.root, []).append((key, version))
        for root, pairs in groups.items():
            step = partial(self._check_step, dt, pairs)
            failure = await self.lt("engine:check:group", root, step)
            if failure is not None:
                key, why = failure
                self.runtime.record(EventType.CHECK_FAIL, dt, key, why)
                return await self._abort_locked(dt, f"{why} check failed on {key}")
        self.runtime.record(EventType.CHECK_PASS, dt)
        return await self.transition_mode(dt, Mode.LOCKED2, Mode.CHECKED3)

    def _complete_step(
        self,
        dt: Key,
        mode: Mode,
        pairs: list[tuple[Key | None, Key]],
        lt: LTContext,
    ) -> None:
        for obj, shadow_key in pairs:
            stored = lt.get(shadow_key)
            if stored is None:
                continue
            shadow = ShadowRecord.from_entity(stored)
            lt.delete(shadow_key)
            if mode is Mode.ABORTING3:
                self._release(dt, obj, lt)
                continue
            target_key = obj or shadow.target
            target = lt.get(target_key)
            meta_key = pmd_key(target_key)
            if stored.key.kind == SHADOW_DELETE_KIND:
                if target_key.is_named:
                    lt.put(Entity(meta_key, {}, dt_flavored=True, version=dt))
                elif lt.get(meta_key) is not None:
                    lt.delete(meta_key)
                lt.delete(target_key)
                action = "delete"
            else:
                if lt.get(meta_key) is not None:
                    lt.delete(meta_key)
                lt.put(Entity(target_key, shadow.payload or {}, dt_flavored=True, version=dt))
                if obj is None:
                    action = "allocate"
                else:
                    action = "update" if target is not None else "create"
            lt.after_commit(partial(self.runtime.record, EventType.APPLY, dt, target_key, action))
            if obj is not None:
                lt.after_commit(partial(self.runtime.record, EventType.RELEASE, dt, obj))

    def _release(self, dt: Key, obj: Key | None, lt: LTContext) -> None:
        if obj is None:
            return
        if release_lock(lt, obj, dt):
            lt.after_commit(partial(self.runtime.record, EventType.RELEASE, dt, obj))

    async def complete_writes(self, record: DTRecord) -> Mode | None:
        """Apply (CHECKED3) or discard (ABORTING3) every shadow, group by group.

        A missing shadow means that pair was already handled.
        """
        mode = record.mode
        if mode not in (Mode.CHECKED3, Mode.ABORTING3):
            msg = f"cannot complete writes of {record.key} in mode {mode}"
            raise IllegalTransition(msg)
        groups: dict[Key, list[tuple[Key | None, Key]]] = {}
        for obj, shadow in record.writes:
            groups.setdefault(shadow.root, []).append((obj, shadow))
        for root, pairs in groups.items():
            await self.lt(
                "engine:complete:group",
                root,
                partial(self._complete_step, record.key, mode, pairs),
            )
        final = Mode.DONE4 if mode is Mode.CHECKED3 else Mode.ABORTED4
        return await self.transition_mode(record.key, mode, final)

    async def transition_mode(
        self,
        key: Key,
        current: Mode,
        new: Mode | None,
        *,
        mutate: Callable[[DTRecord], None] | None = None,
        guard: Callable[[DTRecord], bool] | None = None,
    ) -> Mode | None:
        """Move ``key`` from ``current`` to ``new`` (``None`` deletes it).

        LOCKED2 is never stored: a stored READY1 is accepted for it.

        Returns:
            The mode after the LT: ``new`` on success, the stored mode if it
            differs from ``current`` (or ``guard`` refuses), ``None`` if the
            record is gone.

        Raises:
            IllegalTransition: If ``current`` to ``new`` is not a legal edge.

        """
        target = DELETED if new is None else new
        if not is_legal(current, target):
            msg = f"illegal transition {current} -> {target} for {key}"
            raise IllegalTransition(msg)

        def body(lt: LTContext) -> Mode | None:
            entity = lt.get(key)
            if entity is None:
                return None
            record = DTRecord.from_entity(entity)
            elided = current is Mode.LOCKED2 and record.mode is Mode.READY1
            if record.mode is not current and not elided:
                return record.mode
            if guard is not None and not guard(record):
                return record.mode
            self.apply_transition(lt, record, new, mutate=mutate, elided=elided)
            return new

        return await self.lt(f"engine:transition:{target}", key.root, body)

    def apply_transition(
        self,
        lt: LTContext,
        record: DTRecord,
        new: Mode | None,
        *,
        mutate: Callable[[DTRecord], None] | None = None,
        elided: bool = False,
    ) -> None:
        """Write a mode change inside ``lt``, maintaining the user's queues."""
        old = record.mode
        if new is None:
            lt.delete(record.key)
        else:
            record.mode = new
            record.modified = self.runtime.now()
            if mutate is not None:
                mutate(record)
            lt.put(record.to_entity())
        self.dtxn.queues.on_transition(lt, record, old, new)
        edges: list[tuple[str, str]] = []
        if elided:
            edges.append((Mode.READY1, Mode.LOCKED2))
        edges.append((Mode.LOCKED2 if elided else old, DELETED if new is None else new))
        lt.after_commit(partial(self._log_modes, record.key, edges, record))

    def _log_modes(
        self,
        key: Key,
        edges: list[tuple[str, str]],
        record: DTRecord | None = None,
    ) -> None:
        for old, new in edges:
            self.runtime.record(EventType.MODE, key, None, f"{old}->{new}")
        if record is None:
            return
        if record.mode is Mode.DONE4 and edges[-1][1] == Mode.DONE4:
            self.runtime.record(EventType.COMMIT, key, None, record.client_desc)
        elif record.mode is Mode.ABORTED4 and edges[-1][1] == Mode.ABORTED4:
            self.runtime.record(EventType.ABORT, key, None, record.result or "aborted")

    async def dispatch(self, key: Key) -> Mode | None:
        """Drive a transaction that reached READY1 until it is terminal.

        Returns:
            The terminal mode, ``None`` if the record is gone, or the stored
            mode if it never left NONE/INIT0.

        """
        record = await self.load(key)
        stuck = False
        while record is not None:
            match record.mode:
                case Mode.READY1 | Mode.LOCKED2:
                    outcome = await self.lock_written_objects(record)
                    if outcome is LockOutcome.LOCKED:
                        await self.check_read_objects(record)
                    elif outcome is LockOutcome.AHEAD:
                        if stuck:
                            msg = f"shadows of {key} vanished before it left READY1"
                            raise DanglingLock(msg)
                        stuck = True
                case Mode.CHECKED3 | Mode.ABORTING3:
                    await self.complete_writes(record)
                case _:
                    return record.mode
            previous = record.mode
            record = await self.load(key)
            if record is not None and record.mode is not previous:
                stuck = False
        return None

    async def roll_forward(self, key: Key) -> Mode | None:
        """Dispatch ``key``, after every DT queued ahead of it for its user."""
        for ahead in await self.dtxn.queues.predecessors(key):
            await self.dispatch(ahead)
        return await self.dispatch(key)

    async def abort_init(self, ctx: DTContext, reason: str) -> Mode | None:
        """Abort a transaction still in INIT0, installing the shadows it wrote."""

        def mutate(stored: DTRecord) -> None:
            install_shadows(stored, ctx.shadows)
            stored.result = reason

        mode = await self.transition_mode(ctx.key, Mode.INIT0, Mode.ABORTING3, mutate=mutate)
        if mode is None or mode in (Mode.INIT0, Mode.NONE):
            return mode
        return await self.roll_forward(ctx.key)

    async def distributed_run_in_transaction(
        self,
        user: str,
        fn: ClientFunction,
        *args: Any,  # noqa: ANN401
        read_lock: Key | None = None,
        wait: bool = True,
    ) -> DTRecord | None:
        """Run ``fn(ctx, *args)`` as one distributed transaction.

        Args:
            user: The requesting user; the record lives in its group.
            fn: Async client function; it may only touch data through ``ctx``.
            *args: Arguments passed to ``fn``.
            read_lock: Key of a NONE-mode read-lock transaction to reuse.
            wait: When false, return as soon as the transaction is READY1.

        Returns:
            The stored record: terminal when ``wait`` is set.

        Raises:
            SoftTimeout: Re-raised after the timeout has been handled.
            QueueFull: If the user may not start another transaction yet.

        """
        ctx = await self.begin_dt(user, describe_call(fn, args), read_lock=read_lock)
        return await self.execute(ctx, fn, args, wait=wait)

    async def execute(
        self,
        ctx: DTContext,
        fn: ClientFunction,
        args: tuple[Any, ...],
        *,
        wait: bool = True,
    ) -> DTRecord | None:
        """Run, flush and commit the transaction behind an already begun ``ctx``."""
        try:
            if not await self._run_client(ctx, fn, args):
                return await self.load(ctx.key)
            await self.flush_cache(ctx)
            mode = await self.go_ready(ctx)
            if wait and mode is Mode.READY1:
                await self.roll_forward(ctx.key)
        except SoftTimeout:
            logger.warning("soft timeout in %s", ctx.key)
            await self.dtxn.gc.handle_soft_timeout(ctx)
            raise
        return await self.load(ctx.key)

    async def _run_client(
        self,
        ctx: DTContext,
        fn: ClientFunction,
        args: tuple[Any, ...],
    ) -> bool:
        try:
            value = await fn(ctx, *args)
        except SoftTimeout:
            raise
        except Exception as exc:  # noqa: BLE001
            reason = ctx.doomed or f"{type(exc).__name__}: {exc}"
            if not isinstance(exc, DTxnError):
                logger.debug("client function of %s raised %r", ctx.key, exc)
            await self.abort_init(ctx, reason)
            return False
        if ctx.doomed is not None:
            await self.abort_init(ctx, ctx.doomed)
            return False
        ctx.result = encode_result(value)
        return True


def _set_result(reason: str, record: DTRecord) -> None:
    record.result = reason


def install_shadows(record: DTRecord, shadows: list[tuple[Key | None, Key]]) -> None:
    known = dict.fromkeys(record.put_list_shadow)
    for _, shadow in shadows:
        if shadow not in known:
            record.put_list_obj.append(None)
            record.put_list_shadow.append(shadow)
            known[shadow] = None


__all__ = ("Engine", "LockOutcome", "describe_call", "encode_result", "install_shadows")
