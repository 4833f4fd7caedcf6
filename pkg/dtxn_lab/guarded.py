"""Local transactions for applications that also use distributed transactions.

:func:`guarded_lt_write` is the only way application code should run its own
LTs once the distributed layer is installed: it refuses to write anything the
distributed layer owns, and it deletes finished transaction records the way
acknowledgment does.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import FlavorViolation
from .records import (
    RESERVED_PROP_PREFIX,
    TXN_KIND,
    USER_KIND,
    DTRecord,
    Mode,
    is_dt_named,
    is_reserved_key,
    pmd_key,
)

if TYPE_CHECKING:
    from collections.abc import Callable

    from .extension import DistributedTransactions
    from .keys import Key
    from .store import Entity, LTContext


class GuardedLT:
    """Wraps an :class:`~dtxn_lab.store.LTContext`; reads pass straight through."""

    def __init__(self, dtxn: DistributedTransactions, lt: LTContext) -> None:  # noqa: D107
        self.dtxn = dtxn
        self.lt = lt

    @property
    def group(self) -> Key:
        return self.lt.group

    def get(self, key: Key) -> Entity | None:
        return self.lt.get(key)

    def ancestor_query(self, root: Key) -> list[Entity]:
        return self.lt.ancestor_query(root)

    def _refuse(self, key: Key, why: str) -> FlavorViolation:
        return FlavorViolation(f"LT write to {key} refused: {why}")

    def _check_target(self, key: Key) -> None:
        if is_reserved_key(key):
            raise self._refuse(key, "reserved DT__ namespace")
        if is_dt_named(key):
            raise self._refuse(key, "name marks it DT-flavored")
        if not key.is_complete:
            return
        existing = self.lt.get(key)
        if existing is not None and existing.dt_flavored:
            raise self._refuse(key, "entity is DT-flavored")
        if self.lt.get(pmd_key(key)) is not None:
            raise self._refuse(key, "key is tracked by distributed transactions")

    def put(self, entity: Entity) -> Key:
        self._check_target(entity.key)
        if entity.dt_flavored:
            raise self._refuse(entity.key, "entity carries a version")
        for name in entity.props:
            if name.startswith(RESERVED_PROP_PREFIX):
                raise self._refuse(entity.key, f"property {name!r} is reserved")
        return self.lt.put(entity.copy(version=None, write_lock=None))

    def delete(self, key: Key) -> None:
        """Delete ``key``; finished transaction records of the group's user are allowed."""
        parent = key.parent
        if key.kind == TXN_KIND and parent is not None and parent.kind == USER_KIND:
            self._delete_record(key)
            return
        self._check_target(key)
        self.lt.delete(key)

    def _delete_record(self, key: Key) -> None:
        entity = self.lt.get(key)
        if entity is None:
            return
        record = DTRecord.from_entity(entity)
        if record.mode is Mode.NONE:
            now = self.dtxn.runtime.now()
            if record.read_lock_timeout is None or record.read_lock_timeout > now:
                raise self._refuse(key, "read lock still in force")
        elif record.mode.is_terminal:
            self.dtxn.queues.require_head(self.lt, record)
        else:
            raise self._refuse(key, f"transaction is in mode {record.mode}")
        self.dtxn.engine.apply_transition(self.lt, record, None)


def guarded_lt_write[T](
    dtxn: DistributedTransactions,
    group: Key,
    body: Callable[[GuardedLT], T],
) -> T:
    """Run ``body`` in one LT on ``group`` with distributed-layer writes refused.

    Raises:
        FlavorViolation: Before any effect, if the body writes a DT-flavored
            entity or the reserved namespace.
        NotHead: If queues are enabled and a finished record is not first in
            its user's completed queue.

    """
    return dtxn.store.run_in_lt(group, lambda lt: body(GuardedLT(dtxn, lt)))


__all__ = ("GuardedLT", "guarded_lt_write")
