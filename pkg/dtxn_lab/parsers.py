# noqa: D100
# ruff: noqa: D101
# ruff: noqa: D102
# ruff: noqa: D107
from __future__ import annotations

from functools import cache, lru_cache
from pathlib import Path
from typing import TYPE_CHECKING

from lark import Lark

from .transformers import WhereTransformer

if TYPE_CHECKING:
    from .typing import Predicate

GRAMMARS_DIR = Path(__file__).parent / "grammars"
PARSE_CACHE_SIZE = 256


@cache
def _where_lark() -> Lark:
    with Path.open(GRAMMARS_DIR / "where.lark") as f:
        grammar = f.read()
    return Lark(  # type: ignore[partially-unknown]
        grammar,
        parser="lalr",
        start="where",
        transformer=WhereTransformer(),
    )


@lru_cache(maxsize=PARSE_CACHE_SIZE)
def _parse(where: str) -> Predicate:
    return _where_lark().parse(where)  # type: ignore[not-assignable-to-return-type]


class WhereParser:
    def __init__(self) -> None:
        self.lark = _where_lark()

    def parse(self, where: str) -> Predicate:
        return _parse(where)
