"""Keys of the entity-group store.

A key is a path of ``(kind, id_or_name)`` pairs. Its first pair is the root of
the entity group the key lives in. Keys are totally ordered: paths compare
element-wise, and within an element by kind, then numeric ids before names,
then by value. Sorting a set of keys therefore groups it by entity group.

Classes:
    Key: An immutable, totally ordered store key.

__all__:
    - "Key"
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import total_ordering
from typing import Self

from .errors import InvalidKey

type IdOrName = int | str
type PathElement = tuple[str, IdOrName | None]

_FORBIDDEN = frozenset("/:*\"\\ \t\n")


def _check_kind(kind: str) -> None:
    if not isinstance(kind, str) or not kind:
        msg = f"kind must be a non-empty string, got {kind!r}"
        raise InvalidKey(msg)
    if _FORBIDDEN & set(kind):
        msg = f"kind {kind!r} may not contain '/', ':', '*', quotes or whitespace"
        raise InvalidKey(msg)


def _check_id_or_name(value: IdOrName | None, *, last: bool) -> None:
    if value is None:
        if not last:
            msg = "only the leaf element of a key may be incomplete"
            raise InvalidKey(msg)
        return
    if isinstance(value, bool):
        msg = f"booleans are not ids: {value!r}"
        raise InvalidKey(msg)
    if isinstance(value, int):
        if value < 1:
            msg = f"numeric ids start at 1, got {value}"
            raise InvalidKey(msg)
        return
    if not isinstance(value, str) or not value:
        msg = f"name must be a non-empty string, got {value!r}"
        raise InvalidKey(msg)
    if value[0].isdigit():
        msg = f"name {value!r} may not start with a digit"
        raise InvalidKey(msg)
    if _FORBIDDEN & set(value):
        msg = f"name {value!r} may not contain '/', ':', '*', quotes or whitespace"
        raise InvalidKey(msg)
    if value.startswith("__") and value.endswith("__"):
        msg = f"name {value!r} is reserved by the store"
        raise InvalidKey(msg)


@total_ordering
@dataclass(frozen=True, slots=True)
class Key:
    """An entity key.

    Attributes:
        path (tuple[PathElement, ...]): The ``(kind, id_or_name)`` pairs from the
            entity-group root down to the entity. The leaf id may be ``None`` for
            an incomplete key whose id the store will allocate.

    """

    path: tuple[PathElement, ...]

    def __post_init__(self) -> None:
        """Validate every path element."""
        if not self.path:
            msg = "a key needs at least one path element"
            raise InvalidKey(msg)
        last = len(self.path) - 1
        for index, (kind, value) in enumerate(self.path):
            _check_kind(kind)
            _check_id_or_name(value, last=index == last)

    @classmethod
    def of(cls, *flat: str | IdOrName | None) -> Self:
        """Build a key from a flat ``kind, id_or_name, kind, id_or_name...`` list.

        An odd-length list ends with a kind and yields an incomplete key.
        """
        items = list(flat)
        if len(items) % 2:
            items.append(None)
        kinds = items[::2]
        values = items[1::2]
        path = tuple((str(kind), value) for kind, value in zip(kinds, values, strict=True))
        return cls(path)  # type: ignore[arg-type]

    @classmethod
    def parse(cls, text: str) -> Self:
        """Parse a canonical key string such as ``/Account:7/Entry:first``."""
        if not text.startswith("/"):
            msg = f"canonical keys start with '/': {text!r}"
            raise InvalidKey(msg)
        path: list[PathElement] = []
        for part in text[1:].split("/"):
            kind, sep, raw = part.partition(":")
            if not sep:
                msg = f"malformed key element {part!r} in {text!r}"
                raise InvalidKey(msg)
            value: IdOrName | None
            if raw == "*":
                value = None
            elif raw.isdigit():
                value = int(raw)
            else:
                value = raw
            path.append((kind, value))
        return cls(tuple(path))

    @property
    def kind(self) -> str:
        """Kind of the leaf element."""
        return self.path[-1][0]

    @property
    def id_or_name(self) -> IdOrName | None:
        """Id or name of the leaf element, ``None`` while incomplete."""
        return self.path[-1][1]

    @property
    def id(self) -> int | None:
        """Numeric id of the leaf, if it has one."""
        value = self.id_or_name
        return value if isinstance(value, int) else None

    @property
    def name(self) -> str | None:
        """Name of the leaf, if it has one."""
        value = self.id_or_name
        return value if isinstance(value, str) else None

    @property
    def is_complete(self) -> bool:
        return self.id_or_name is not None

    @property
    def is_named(self) -> bool:
        return isinstance(self.id_or_name, str)

    @property
    def root(self) -> Key:
        """Root key of the entity group."""
        return Key(self.path[:1])

    @property
    def parent(self) -> Key | None:
        return Key(self.path[:-1]) if len(self.path) > 1 else None

    def child(self, kind: str, id_or_name: IdOrName | None = None) -> Key:
        """Return the key of a child entity, incomplete when no id is given."""
        self._require_complete()
        return Key((*self.path, (kind, id_or_name)))

    def with_id(self, new_id: int) -> Key:
        """Complete an incomplete key with an allocated id."""
        if self.is_complete:
            msg = f"{self} is already complete"
            raise InvalidKey(msg)
        return Key((*self.path[:-1], (self.kind, new_id)))

    def is_descendant_of(self, ancestor: Key) -> bool:
        return self.path[: len(ancestor.path)] == ancestor.path

    def sort_key(self) -> tuple[tuple[str, int, int | str], ...]:
        """Ordering tuple: kind, then numeric before named, then value."""
        self._require_complete()
        return tuple(
            (kind, 0, value) if isinstance(value, int) else (kind, 1, value)  # type: ignore[misc]
            for kind, value in self.path
        )

    def _require_complete(self) -> None:
        if not self.is_complete:
            msg = f"{self} is incomplete"
            raise InvalidKey(msg)

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Key):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return "".join(
            f"/{kind}:{'*' if value is None else value}" for kind, value in self.path
        )

    def __repr__(self) -> str:
        return f"Key({str(self)!r})"


__all__ = ("Key",)
