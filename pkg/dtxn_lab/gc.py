"""Timeout handling and the background sweeper.

Classes:
    GCConfig: Timeout durations, in logical ticks.
    SweepReport: What one sweep did, per query.
    GarbageCollector: Soft-timeout handler and :meth:`~GarbageCollector.gc_sweep`.

Every destructive action re-reads its precondition inside an LT, so queries
that are stale or clocks that are skewed only delay the sweep, never make it
wrong.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from functools import partial
from typing import TYPE_CHECKING

from .engine import install_shadows
from .history import EventType
from .records import (
    PENDING_MODES,
    SHADOW_DELETE_KIND,
    SHADOW_KIND,
    TXN_KIND,
    DTRecord,
    Mode,
    ShadowRecord,
    release_lock,
)
from .store import ReadMode

if TYPE_CHECKING:
    from .context import DTContext
    from .extension import DistributedTransactions
    from .keys import Key
    from .store import Entity, LTContext

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class GCConfig:
    """Timeouts of the distributed layer; heuristics only.

    Attributes:
        timeout_gae (int): Hard limit of one worker request.
        timeout_roll_forward_dt (int): Age after which a READY1+ DT is rolled forward.
        timeout_garbage_collect_dt (int): Age after which an INIT0 DT is a candidate for abort.
        timeout_garbage_collect_shadow (int): Age after which an orphan shadow is collected.
        timeout_read_lock_dt (int): Default lifetime of a read lock.
        epsilon (int): Small safety margin added to waits.

    """

    timeout_gae: int = 300
    timeout_roll_forward_dt: int = 600
    timeout_garbage_collect_dt: int = 600
    timeout_garbage_collect_shadow: int = 1200
    timeout_read_lock_dt: int = 300
    epsilon: int = 1

    def __post_init__(self) -> None:
        """Reject non-positive durations."""
        for item in fields(self):
            value = getattr(self, item.name)
            if value <= 0:
                msg = f"{item.name} must be strictly positive, got {value}"
                raise ValueError(msg)


@dataclass(slots=True)
class SweepReport:
    rolled_forward: int = 0
    half_timed_out: int = 0
    aborted: int = 0
    shadows_collected: int = 0
    read_locks_expired: int = 0

    @property
    def total(self) -> int:
        return (
            self.rolled_forward
            + self.half_timed_out
            + self.aborted
            + self.shadows_collected
            + self.read_locks_expired
        )


def _abort_reason(reason: str, shadows: list[tuple[Key | None, Key]], record: DTRecord) -> None:
    install_shadows(record, shadows)
    record.result = reason


def _has_expired(deadline: int, record: DTRecord) -> bool:
    return record.read_lock_timeout is not None and record.read_lock_timeout <= deadline


class GarbageCollector:
    """Recovers abandoned transactions and their garbage."""

    def __init__(self, dtxn: DistributedTransactions) -> None:  # noqa: D107
        self.dtxn = dtxn

    @property
    def config(self) -> GCConfig:
        return self.dtxn.gc_config

    async def handle_soft_timeout(self, ctx: DTContext) -> Mode | None:
        """Abort the timed-out transaction if it is still in INIT0.

        Past INIT0 nothing is done: whoever finds the record rolls it forward.
        """
        reason = f"SoftTimeout: {ctx.key} ran out of time"
        mode = await self.dtxn.engine.transition_mode(
            ctx.key,
            Mode.INIT0,
            Mode.ABORTING3,
            mutate=partial(_abort_reason, reason, list(ctx.shadows)),
        )
        logger.warning("soft timeout of %s left it in %s", ctx.key, mode)
        return mode

    async def _query(self, point: str, kind: str, where: str) -> list[Entity]:
        await self.dtxn.runtime.checkpoint(point)
        return self.dtxn.store.general_query(kind, where)

    async def gc_sweep(self, now: int | None = None) -> SweepReport:
        """Run the four sweep queries once.

        Args:
            now: Reference time, defaults to the current worker's clock.

        """
        if now is None:
            now = self.dtxn.runtime.now()
        report = SweepReport()
        report.rolled_forward = await self._roll_forward_abandoned(now)
        self._log(1, report.rolled_forward)
        report.half_timed_out, report.aborted = await self._stillborn(now)
        self._log(2, report.half_timed_out + report.aborted)
        report.shadows_collected = await self._orphan_shadows(now)
        self._log(3, report.shadows_collected)
        report.read_locks_expired = await self._expired_read_locks(now)
        self._log(4, report.read_locks_expired)
        if report.total:
            logger.info("sweep at %d: %s", now, report)
        return report

    def _log(self, query: int, count: int) -> None:
        self.dtxn.runtime.record(EventType.GC, None, None, f"{query} {count}")

    async def _roll_forward_abandoned(self, now: int) -> int:
        modes = ",".join(f'"{mode}"' for mode in sorted(PENDING_MODES))
        where = f"dt__mode@[{modes}] & dt__modified<{now - self.config.timeout_roll_forward_dt}"
        count = 0
        for entity in await self._query("gc:query:roll_forward", TXN_KIND, where):
            logger.debug("rolling forward abandoned %s", entity.key)
            await self.dtxn.engine.roll_forward(entity.key)
            count += 1
        return count

    def _mark_half(self, key: Key, lt: LTContext) -> bool:
        entity = lt.get(key)
        if entity is None:
            return False
        record = DTRecord.from_entity(entity)
        if record.mode is not Mode.INIT0 or record.half_timed_out:
            return False
        record.half_timed_out = True
        lt.put(record.to_entity())
        return True

    async def _shadows_of(self, dt: Key) -> list[tuple[Key | None, Key]]:
        where = f'dt__dist_txn="{dt}"'
        found: list[tuple[Key | None, Key]] = []
        for kind in (SHADOW_KIND, SHADOW_DELETE_KIND):
            entities = await self._query("gc:query:shadows", kind, where)
            found.extend((None, entity.key) for entity in entities)
        return found

    async def _stillborn(self, now: int) -> tuple[int, int]:
        """Double-half timeout on INIT0 transactions; returns (marked, aborted)."""
        config = self.config
        runtime = self.dtxn.runtime
        engine = self.dtxn.engine
        where = f'dt__mode="{Mode.INIT0}" & dt__modified<{now - config.timeout_garbage_collect_dt}'
        candidates = [
            DTRecord.from_entity(entity)
            for entity in await self._query("gc:query:stillborn", TXN_KIND, where)
        ]
        first = [record.key for record in candidates if not record.half_timed_out]
        second = [record.key for record in candidates if record.half_timed_out]

        marked = 0
        if first:
            await runtime.sleep(config.timeout_gae // 2 + config.epsilon, "gc:half:wait")
            for key in first:
                if await engine.lt("gc:half:mark", key.root, partial(self._mark_half, key)):
                    marked += 1

        aborted = 0
        if second:
            deadline = runtime.clock + config.timeout_gae // 2
            found = {key: await self._shadows_of(key) for key in second}
            if deadline > runtime.clock:
                await runtime.sleep(deadline - runtime.clock, "gc:half:timer")
            for key, shadows in found.items():
                reason = f"stillborn: {key} collected after a double-half timeout"
                mode = await engine.transition_mode(
                    key,
                    Mode.INIT0,
                    Mode.ABORTING3,
                    mutate=partial(_abort_reason, reason, shadows),
                )
                if mode is Mode.ABORTING3:
                    aborted += 1
                    logger.debug("aborted stillborn %s", key)
                    await engine.roll_forward(key)
        return marked, aborted

    def _collect_shadow(self, shadow_key: Key, owner: Key, lt: LTContext) -> bool:
        stored = lt.get(shadow_key)
        if stored is None:
            return False
        shadow = ShadowRecord.from_entity(stored)
        lt.delete(shadow_key)
        target = shadow.target
        if release_lock(lt, target, owner):
            lt.after_commit(partial(self.dtxn.runtime.record, EventType.RELEASE, owner, target))
        return True

    async def _orphan_shadows(self, now: int) -> int:
        store = self.dtxn.store
        where = f"dt__created<{now - self.config.timeout_garbage_collect_shadow}"
        found = [
            entity
            for kind in (SHADOW_KIND, SHADOW_DELETE_KIND)
            for entity in await self._query("gc:query:shadow", kind, where)
        ]
        count = 0
        for entity in sorted(found, key=lambda item: item.key):
            owner = ShadowRecord.from_entity(entity).dist_txn
            await self.dtxn.runtime.checkpoint("gc:shadow:owner")
            stored = store.get(owner, ReadMode.STRONG)
            if stored is not None and not DTRecord.from_entity(stored).mode.is_terminal:
                continue
            collected = await self.dtxn.engine.lt(
                "gc:shadow:delete",
                entity.key.root,
                partial(self._collect_shadow, entity.key, owner),
            )
            if collected:
                count += 1
        return count

    async def _expired_read_locks(self, now: int) -> int:
        engine = self.dtxn.engine
        deadline = now - self.dtxn.read_locks.pad
        where = f'dt__mode="{Mode.NONE}" & dt__read_lock=true & dt__read_lock_timeout<={deadline}'
        count = 0
        for entity in await self._query("gc:query:read_lock", TXN_KIND, where):
            mode = await engine.transition_mode(
                entity.key,
                Mode.NONE,
                Mode.ABORTING3,
                mutate=partial(_abort_reason, "read lock expired", []),
                guard=partial(_has_expired, deadline),
            )
            if mode is Mode.ABORTING3:
                count += 1
                await engine.roll_forward(entity.key)
        return count


__all__ = ("GCConfig", "GarbageCollector", "SweepReport")
