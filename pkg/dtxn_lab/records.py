"""Protocol records kept in the store, and the reserved namespace they live in.

Classes:
    Mode: Durable phase of a distributed transaction.
    DTRecord: The transaction object, a child of its user's ``DT__User`` root.
    ShadowRecord: Buffered new state (or delete marker) of one client object.
    DTUser: Per-user pending and completed queues.

Functions:
    pmd_key, release_lock, is_reserved_key, is_dt_named, check_client_entity
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING, cast

from .errors import FlavorViolation
from .keys import Key
from .store import Entity

if TYPE_CHECKING:
    from .store import LTContext
    from .typing import Props

USER_KIND = "DT__User"
TXN_KIND = "DT__Txn"
SHADOW_KIND = "DT__Shadow"
SHADOW_DELETE_KIND = "DT__ShadowDelete"
PMD_KIND = "DT__PureMetaData"
PMD_NAME = "pmd"

RESERVED_KIND_PREFIX = "DT__"
RESERVED_NAME_PREFIX = "DT__"
RESERVED_PROP_PREFIX = "dt__"

# Stored mode of no record; only used in history and transition tables.
NEW = "NEW"
DELETED = "DELETED"


class Mode(StrEnum):
    NONE = "NONE"
    INIT0 = "INIT0"
    READY1 = "READY1"
    LOCKED2 = "LOCKED2"
    CHECKED3 = "CHECKED3"
    ABORTING3 = "ABORTING3"
    DONE4 = "DONE4"
    ABORTED4 = "ABORTED4"

    @property
    def is_terminal(self) -> bool:
        return self in (Mode.DONE4, Mode.ABORTED4)

    @property
    def is_pending(self) -> bool:
        """Modes a transaction waits in on its user's pending queue."""
        return self in PENDING_MODES


PENDING_MODES = frozenset({Mode.READY1, Mode.LOCKED2, Mode.CHECKED3, Mode.ABORTING3})

LEGAL_TRANSITIONS: dict[str, frozenset[str]] = {
    NEW: frozenset({Mode.NONE, Mode.INIT0}),
    Mode.NONE: frozenset({Mode.INIT0, Mode.ABORTING3, DELETED}),
    Mode.INIT0: frozenset({Mode.READY1, Mode.ABORTING3}),
    Mode.READY1: frozenset({Mode.LOCKED2}),
    Mode.LOCKED2: frozenset({Mode.CHECKED3, Mode.ABORTING3}),
    Mode.CHECKED3: frozenset({Mode.DONE4}),
    Mode.ABORTING3: frozenset({Mode.ABORTED4}),
    Mode.DONE4: frozenset({DELETED}),
    Mode.ABORTED4: frozenset({DELETED}),
}


def is_legal(old: str, new: str) -> bool:
    return new in LEGAL_TRANSITIONS.get(old, frozenset())


def user_key(user: str) -> Key:
    return Key.of(USER_KIND, user)


def pmd_key(key: Key) -> Key:
    """Key of the pure meta-data entity standing in for an absent client key.

    It carries the write lock while a transaction creates the key, and keeps
    the version of a deleted named key.
    """
    return key.child(PMD_KIND, PMD_NAME)


def release_lock(lt: LTContext, target: Key, dt: Key) -> bool:
    """Drop the write lock ``dt`` holds on ``target``, inside ``lt``.

    A pure meta-data entity that only carried the lock is removed.
    """
    holder = lt.get(target)
    if holder is None:
        holder = lt.get(pmd_key(target))
    if holder is None or holder.write_lock != dt:
        return False
    if holder.key.kind == PMD_KIND and holder.version is None:
        lt.delete(holder.key)
    else:
        lt.put(holder.copy(write_lock=None))
    return True


def is_reserved_key(key: Key) -> bool:
    return any(kind.startswith(RESERVED_KIND_PREFIX) for kind, _ in key.path)


def is_dt_named(key: Key) -> bool:
    """Client keys whose name marks them DT-flavored even before they exist."""
    return key.is_named and cast(str, key.name).startswith(RESERVED_NAME_PREFIX)


def check_client_entity(entity: Entity) -> None:
    """Reject client writes to the reserved namespace."""
    if is_reserved_key(entity.key):
        msg = f"{entity.key} is in the reserved DT__ namespace"
        raise FlavorViolation(msg)
    for name in entity.props:
        if name.startswith(RESERVED_PROP_PREFIX):
            msg = f"property {name!r} of {entity.key} uses the reserved dt__ prefix"
            raise FlavorViolation(msg)


def _key(props: Props, name: str) -> Key | None:
    return cast(Key | None, props.get(name))


def _keys(props: Props, name: str) -> list[Key | None]:
    return list(cast(list[Key | None], props.get(name) or []))


@dataclass(slots=True)
class DTRecord:
    """Durable state of one distributed transaction.

    The get and put lists are written once, in the READY1 transition, and
    never change afterwards.
    """

    key: Key
    mode: Mode = Mode.INIT0
    get_list_obj: list[Key] = field(default_factory=list)
    get_list_version: list[Key | None] = field(default_factory=list)
    put_list_obj: list[Key | None] = field(default_factory=list)
    put_list_shadow: list[Key] = field(default_factory=list)
    modified: int = 0
    half_timed_out: bool | None = None
    read_lock: bool = False
    read_lock_timeout: int | None = None
    client_desc: str = ""
    result: str | None = None

    @property
    def user(self) -> Key:
        return self.key.root

    @property
    def reads(self) -> list[tuple[Key, Key | None]]:
        return list(zip(self.get_list_obj, self.get_list_version, strict=True))

    @property
    def writes(self) -> list[tuple[Key | None, Key]]:
        return list(zip(self.put_list_obj, self.put_list_shadow, strict=True))

    def to_entity(self) -> Entity:
        props: Props = {
            "dt__mode": str(self.mode),
            "dt__get_list_obj": list(self.get_list_obj),
            "dt__get_list_version": list(self.get_list_version),  # type: ignore[arg-type]
            "dt__put_list_obj": list(self.put_list_obj),  # type: ignore[arg-type]
            "dt__put_list_shadow": list(self.put_list_shadow),
            "dt__modified": self.modified,
            "dt__half_timed_out": self.half_timed_out,
            "dt__read_lock": self.read_lock,
            "dt__read_lock_timeout": self.read_lock_timeout,
            "dt__client_desc": self.client_desc,
            "dt__result": self.result,
        }
        return Entity(self.key, props)

    @classmethod
    def from_entity(cls, entity: Entity) -> DTRecord:
        props = entity.props
        return cls(
            key=entity.key,
            mode=Mode(cast(str, props["dt__mode"])),
            get_list_obj=cast(list[Key], _keys(props, "dt__get_list_obj")),
            get_list_version=_keys(props, "dt__get_list_version"),
            put_list_obj=_keys(props, "dt__put_list_obj"),
            put_list_shadow=cast(list[Key], _keys(props, "dt__put_list_shadow")),
            modified=cast(int, props.get("dt__modified", 0)),
            half_timed_out=cast(bool | None, props.get("dt__half_timed_out")),
            read_lock=bool(props.get("dt__read_lock")),
            read_lock_timeout=cast(int | None, props.get("dt__read_lock_timeout")),
            client_desc=cast(str, props.get("dt__client_desc", "")),
            result=cast(str | None, props.get("dt__result")),
        )


@dataclass(slots=True)
class ShadowRecord:
    """Buffered write of one client object, stored in that object's group.

    ``payload`` is ``None`` for a delete marker. Fields holding an empty list
    are left out of the stored payload and named in ``dt__empty_lists``.
    """

    target: Key
    dist_txn: Key
    created: int
    payload: Props | None
    key: Key | None = None

    @property
    def is_delete(self) -> bool:
        return self.payload is None

    def to_entity(self) -> Entity:
        kind = SHADOW_DELETE_KIND if self.payload is None else SHADOW_KIND
        props: Props = {
            "dt__dist_txn": self.dist_txn,
            "dt__created": self.created,
            "dt__target": self.target,
        }
        if self.payload is not None:
            empty = sorted(name for name, value in self.payload.items() if value == [])
            props.update({n: v for n, v in self.payload.items() if v != []})
            props["dt__empty_lists"] = empty  # type: ignore[assignment]
        key = self.key or self.target.root.child(kind)
        return Entity(key, props)

    @classmethod
    def from_entity(cls, entity: Entity) -> ShadowRecord:
        props = entity.props
        payload: Props | None = None
        if entity.key.kind == SHADOW_KIND:
            payload = {
                name: value
                for name, value in props.items()
                if not name.startswith(RESERVED_PROP_PREFIX)
            }
            for name in cast(list[str], props.get("dt__empty_lists") or []):
                payload[name] = []
        return cls(
            target=cast(Key, _key(props, "dt__target")),
            dist_txn=cast(Key, _key(props, "dt__dist_txn")),
            created=cast(int, props.get("dt__created", 0)),
            payload=payload,
            key=entity.key,
        )


def is_shadow(key: Key) -> bool:
    return key.kind in (SHADOW_KIND, SHADOW_DELETE_KIND)


@dataclass(slots=True)
class DTUser:
    """Per-user queues: DTs waiting to complete, and completed DTs awaiting ack."""

    key: Key
    pending: list[Key] = field(default_factory=list)
    completed: list[Key] = field(default_factory=list)
    sync_mode: bool = False

    def to_entity(self) -> Entity:
        return Entity(
            self.key,
            {
                "dt__pending": list(self.pending),
                "dt__completed": list(self.completed),
                "dt__sync_mode": self.sync_mode,
            },
        )

    @classmethod
    def from_entity(cls, entity: Entity) -> DTUser:
        return cls(
            key=entity.key,
            pending=cast(list[Key], _keys(entity.props, "dt__pending")),
            completed=cast(list[Key], _keys(entity.props, "dt__completed")),
            sync_mode=bool(entity.props.get("dt__sync_mode")),
        )


__all__ = (
    "DELETED",
    "LEGAL_TRANSITIONS",
    "NEW",
    "PENDING_MODES",
    "DTRecord",
    "DTUser",
    "Mode",
    "ShadowRecord",
    "check_client_entity",
    "is_dt_named",
    "is_legal",
    "is_reserved_key",
    "is_shadow",
    "pmd_key",
    "release_lock",
    "user_key",
)
