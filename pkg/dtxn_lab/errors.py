"""Exceptions raised by the store, the transaction engine and the harness."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .keys import Key


class DTxnError(Exception):
    """Base class for every error raised by dtxn-lab."""


class StoreError(DTxnError):
    """Raised by the entity-group store."""


class InvalidKey(StoreError, ValueError):
    """A key was constructed with an illegal kind, id or name."""


class CrossGroupAccess(StoreError):
    """A local transaction touched a key outside its entity group."""

    def __init__(self, group: Key, key: Key) -> None:  # noqa: D107
        self.group = group
        self.key = key
        super().__init__(f"{key} is outside entity group {group}")


class TransientFailure(StoreError):
    """The store reported a failure; the write may or may not have committed."""


class QueryInsideLT(StoreError):
    """A general query was issued inside a local transaction."""


class DeleteThenPutNumericId(StoreError):
    """An entity with a generated numeric id was put again after being deleted."""


class FlavorViolation(DTxnError):
    """An entity was accessed through the wrong transaction flavor."""


class DTAborted(DTxnError):
    """The distributed transaction is doomed and will abort."""


class IllegalTransition(DTxnError):
    """A mode transition outside the legal transition graph was requested."""


class DanglingLock(DTxnError):
    """A write lock is held by a transaction that can no longer release it."""


class QueueError(DTxnError):
    """Raised by the per-user pending/completed queues."""


class QueueFull(QueueError):
    """A synchronous-mode user already has an outstanding transaction."""


class NotHead(QueueError):
    """Only the head of the completed queue may be acknowledged."""


class NotTerminal(QueueError):
    """Only a transaction in DONE4 or ABORTED4 may be acknowledged."""


class ReadLockExpired(DTxnError):
    """A read-lock transaction was reused after its timeout, or is gone."""


class NonQuiescent(DTxnError):
    """Garbage collection could not bring the store to a quiescent state."""


class MalformedHistory(DTxnError):
    """A history log could not be parsed or is internally inconsistent."""


class SoftTimeout(DTxnError):
    """Delivered to a worker whose request ran past its soft deadline."""


__all__ = (
    "CrossGroupAccess",
    "DTAborted",
    "DTxnError",
    "DanglingLock",
    "DeleteThenPutNumericId",
    "FlavorViolation",
    "IllegalTransition",
    "InvalidKey",
    "MalformedHistory",
    "NonQuiescent",
    "NotHead",
    "NotTerminal",
    "QueryInsideLT",
    "QueueError",
    "QueueFull",
    "ReadLockExpired",
    "SoftTimeout",
    "StoreError",
    "TransientFailure",
)
