"""Per-user pending and completed queues.

When enabled, every transaction of a user enters the user's pending queue in
the LT that makes it READY1 (or ABORTING3), moves to the completed queue in the
LT that makes it terminal, and leaves it when acknowledged. Rolling a
transaction forward first drives every transaction ahead of it, so a user's
transactions commit in issue order. Queue changes only ever happen inside the
mode-transition LT on the user's group.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from .errors import NotHead, NotTerminal, QueueFull
from .records import TXN_KIND, DTRecord, DTUser, Mode, user_key

if TYPE_CHECKING:
    from .extension import DistributedTransactions
    from .keys import Key
    from .store import LTContext

logger = logging.getLogger(__name__)


class UserQueues:
    """Queue maintenance, bound to one :class:`DistributedTransactions`."""

    def __init__(self, dtxn: DistributedTransactions) -> None:  # noqa: D107
        self.dtxn = dtxn

    @property
    def enabled(self) -> bool:
        return bool(self.dtxn.config.get("queues", False))

    @property
    def sync_mode(self) -> bool:
        return self.enabled and bool(self.dtxn.config.get("sync_mode", False))

    def _user(self, lt: LTContext, root: Key) -> DTUser:
        entity = lt.get(root)
        if entity is None:
            return DTUser(root, sync_mode=self.sync_mode)
        return DTUser.from_entity(entity)

    def check_room(self, lt: LTContext, root: Key) -> None:
        """Refuse a new transaction while a synchronous user has one outstanding.

        Raises:
            QueueFull: If pending, completed or any INIT0 record is non-empty.

        """
        if not self.sync_mode:
            return
        queues = self._user(lt, root)
        starting = [
            entity.key
            for entity in lt.ancestor_query(root)
            if entity.key.kind == TXN_KIND and entity.props.get("dt__mode") == Mode.INIT0
        ]
        outstanding = len(queues.pending) + len(queues.completed) + len(starting)
        if outstanding:
            msg = f"user {root} has {outstanding} outstanding transaction(s)"
            raise QueueFull(msg)

    def on_transition(
        self,
        lt: LTContext,
        record: DTRecord,
        old: Mode,
        new: Mode | None,
    ) -> None:
        """Keep the queues in step with a mode change written in ``lt``."""
        if not self.enabled:
            return
        queues = self._user(lt, record.user)
        key = record.key
        if new is None:
            if key not in queues.completed:
                return
            queues.completed.remove(key)
        elif new.is_pending and not old.is_pending:
            queues.pending.append(key)
        elif new.is_terminal:
            if key in queues.pending:
                queues.pending.remove(key)
            queues.completed.append(key)
        else:
            return
        lt.put(queues.to_entity())

    async def snapshot(self, user: str) -> DTUser:
        root = user_key(user)
        return await self.dtxn.engine.lt("queues:read", root, lambda lt: self._user(lt, root))

    async def predecessors(self, key: Key) -> list[Key]:
        """Transactions queued ahead of ``key`` for the same user."""
        if not self.enabled:
            return []
        root = key.root
        queues = await self.dtxn.engine.lt("queues:pending", root, lambda lt: self._user(lt, root))
        if key not in queues.pending:
            return []
        return queues.pending[: queues.pending.index(key)]

    async def acknowledge(self, user: str, dt_key: Key) -> DTRecord | None:
        """Delete a terminal transaction and hand its record back.

        Returns:
            The deleted record, or ``None`` if it was already gone.

        Raises:
            NotTerminal: If the transaction has not finished.
            NotHead: If queues are enabled and it is not first in ``completed``.

        """
        root = user_key(user)
        if dt_key.root != root:
            msg = f"{dt_key} does not belong to user {user}"
            raise ValueError(msg)

        def body(lt: LTContext) -> DTRecord | None:
            entity = lt.get(dt_key)
            if entity is None:
                return None
            record = DTRecord.from_entity(entity)
            if not record.mode.is_terminal:
                msg = f"{dt_key} is in mode {record.mode}"
                raise NotTerminal(msg)
            self.require_head(lt, record)
            self.dtxn.engine.apply_transition(lt, record, None)
            return record

        return await self.dtxn.engine.lt("queues:acknowledge", root, body)

    def require_head(self, lt: LTContext, record: DTRecord) -> None:
        if not self.enabled:
            return
        completed = self._user(lt, record.user).completed
        if not completed or completed[0] != record.key:
            msg = f"{record.key} is not at the head of the completed queue"
            raise NotHead(msg)

    async def catch_up(self, user: str) -> list[DTRecord]:
        """Drive every pending transaction, then acknowledge the completed queue."""
        engine = self.dtxn.engine
        for key in (await self.snapshot(user)).pending:
            await engine.dispatch(key)
        acknowledged = []
        while completed := (await self.snapshot(user)).completed:
            record = await self.acknowledge(user, completed[0])
            if record is not None:
                acknowledged.append(record)
        logger.debug("user %s caught up, %d acknowledged", user, len(acknowledged))
        return acknowledged


__all__ = ("UserQueues",)
