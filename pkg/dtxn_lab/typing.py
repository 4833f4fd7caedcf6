"""Module defining type annotations for the dtxn-lab project.

Types:
    Scalar: A property scalar, an int, str, bool or a Key reference.
    PropValue: A scalar, a homogeneous list of scalars, or None.
    Props: A property map, as stored on an entity.
    Predicate: A boolean test over an entity, as produced by the where parser.
    ClientFunction: An async client function run inside a distributed transaction.
    LTBody: A function run inside a local transaction.

Exports:
    Scalar, PropValue, Props, Predicate, ClientFunction, LTBody
"""

from __future__ import annotations

from collections.abc import Awaitable, Callable
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .keys import Key
    from .store import Entity, LTContext

type Scalar = int | str | bool | Key
type PropValue = Scalar | list[Scalar] | None
type Props = dict[str, PropValue]
type Predicate = Callable[[Entity], bool]
type ClientFunction = Callable[..., Awaitable[Any]]
type LTBody[T] = Callable[[LTContext], T]

__all__ = (
    "ClientFunction",
    "LTBody",
    "Predicate",
    "PropValue",
    "Props",
    "Scalar",
)
