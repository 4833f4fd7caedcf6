# noqa: D100
# ruff: noqa: D102
# ruff: noqa: N802

from __future__ import annotations

import operator
from typing import TYPE_CHECKING, Any

from lark import Token, Transformer

from .keys import Key

if TYPE_CHECKING:
    from collections.abc import Callable

    from .store import Entity
    from .typing import Predicate

type Value = None | bool | float | int | str | list[Value] | dict[str, Value]

_MISSING = object()


def _plain(value: Any) -> Any:  # noqa: ANN401
    if isinstance(value, Key):
        return str(value)
    if isinstance(value, list):
        return [_plain(item) for item in value]
    return value


def _field(entity: Entity, name: str) -> Any:  # noqa: ANN401
    if name not in entity.props:
        return _MISSING
    return _plain(entity.props[name])


def _same(left: Any, right: Any) -> bool:  # noqa: ANN401
    # Booleans never equal numbers.
    if isinstance(left, bool) != isinstance(right, bool):
        return False
    if isinstance(left, list) and isinstance(right, list):
        return len(left) == len(right) and all(map(_same, left, right))
    return bool(left == right)


def _compare(name: str, value: Value, op: Callable[[Any, Any], bool]) -> Predicate:
    def predicate(entity: Entity) -> bool:
        current = _field(entity, name)
        if current is _MISSING or current is None or value is None:
            return False
        if isinstance(current, bool) != isinstance(value, bool):
            return False
        try:
            return bool(op(current, value))
        except TypeError:
            return False

    return predicate


class WhereTransformer(Transformer[Token, "Predicate"]):
    """Transformer for turning a 'where' string into a predicate over entities."""

    def NAME(self, name: Token) -> str:
        return str(name)

    def NULL(self, _: Token) -> None:
        return None

    def TRUE(self, _: Token) -> bool:
        return True

    def FALSE(self, _: Token) -> bool:
        return False

    def NUMBER(self, number: Token) -> float:
        try:
            return int(number)
        except ValueError:
            return float(number)

    def STRING(self, string: Token) -> str:
        return string[1:-1]

    def array(self, args: list[Value]) -> list[Value]:
        return [*args]

    def pair(self, args: tuple[str, Value]) -> tuple[str, Value]:
        return args[0], args[1]

    def object(self, args: list[tuple[str, Value]]) -> dict[str, Value]:
        return dict(args)

    def or_(self, clauses: list[Predicate]) -> Predicate:
        return lambda entity: any(clause(entity) for clause in clauses)

    def and_(self, clauses: list[Predicate]) -> Predicate:
        return lambda entity: all(clause(entity) for clause in clauses)

    def not_(self, args: list[Predicate]) -> Predicate:
        (clause,) = args
        return lambda entity: not clause(entity)

    def eq(self, args: tuple[str, Value]) -> Predicate:
        name, value = args
        if value is None:
            return lambda entity: _field(entity, name) in (None, _MISSING)
        return lambda entity: _same(_field(entity, name), value)

    def ne(self, args: tuple[str, Value]) -> Predicate:
        eq = self.eq(args)
        return lambda entity: not eq(entity)

    def gt(self, args: tuple[str, Value]) -> Predicate:
        return _compare(*args, operator.gt)

    def ge(self, args: tuple[str, Value]) -> Predicate:
        return _compare(*args, operator.ge)

    def lt(self, args: tuple[str, Value]) -> Predicate:
        return _compare(*args, operator.lt)

    def le(self, args: tuple[str, Value]) -> Predicate:
        return _compare(*args, operator.le)

    def contains(self, args: tuple[str, Value]) -> Predicate:
        name, value = args

        def predicate(entity: Entity) -> bool:
            current = _field(entity, name)
            return isinstance(current, list) and any(_same(item, value) for item in current)

        return predicate

    def in_(self, args: tuple[str, list[Value]]) -> Predicate:
        name, values = args
        return lambda entity: any(_same(_field(entity, name), item) for item in values)
