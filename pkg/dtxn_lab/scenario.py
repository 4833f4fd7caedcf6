"""Scenario files: everything that determines one simulated run.

A scenario file is flat ``key=value`` text; blank lines and ``#`` comments are
ignored, list values are comma separated::

    seed=7
    workload=bank
    workers=8
    ops=200
    p_submarine=0.2
    skews=0,5,-3
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

from marshmallow import RAISE, Schema, ValidationError, fields, post_load, validate

from .gc import GCConfig
from .store import StoreConfig

if TYPE_CHECKING:
    from collections.abc import Mapping

    from .extension import DTxnConfig

WORKLOAD_NAMES = ("bank", "random-readwrite", "named-key-churn")

_GC_FIELDS = (
    "timeout_gae",
    "timeout_roll_forward_dt",
    "timeout_garbage_collect_dt",
    "timeout_garbage_collect_shadow",
    "timeout_read_lock_dt",
    "epsilon",
)


@dataclass(frozen=True, slots=True)
class Scenario:
    """One fully determined run."""

    seed: int = 1
    workload: str = "bank"
    workers: int = 1
    ops: int = 10
    accounts: int = 4
    p_submarine: float = 0.0
    p_stale_eventual: float = 0.0
    p_stale_index: float = 0.0
    lt_retry_limit: int = 3
    p_crash: float = 0.0
    crash_points: tuple[str, ...] = ()
    skews: tuple[int, ...] = ()
    queues: bool = False
    sync_mode: bool = False
    read_locks: bool = False
    soft_timeouts: bool = False
    gc_interval: int = 50
    max_steps: int = 1_000_000
    gc: dict[str, int] = field(default_factory=dict)

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)

    def store_config(self) -> StoreConfig:
        return StoreConfig(
            p_submarine=self.p_submarine,
            p_stale_eventual=self.p_stale_eventual,
            p_stale_index=self.p_stale_index,
            lt_retry_limit=self.lt_retry_limit,
            rng_seed=self.seed,
        )

    def gc_config(self) -> GCConfig:
        return GCConfig(**self.gc)

    def dtxn_config(self) -> DTxnConfig:
        return {
            "queues": self.queues,
            "sync_mode": self.sync_mode,
            "read_locks": self.read_locks,
            "gc": self.gc_config(),
        }

    def skew_of(self, index: int) -> int:
        return self.skews[index % len(self.skews)] if self.skews else 0

    def dump(self) -> str:
        """Render back to scenario-file text."""
        lines = []
        for name, value in asdict(self).items():
            if name == "gc":
                lines.extend(f"{key}={value[key]}" for key in sorted(value))
                continue
            if isinstance(value, tuple):
                text = ",".join(str(item) for item in value)
            elif isinstance(value, bool):
                text = str(value).lower()
            else:
                text = str(value)
            lines.append(f"{name}={text}")
        return "".join(f"{line}\n" for line in lines)


class CommaSeparated(fields.Field):
    """A list written as ``a,b,c``; an empty value is an empty list."""

    def __init__(self, inner: fields.Field, **kwargs: Any) -> None:  # noqa: ANN401, D107
        super().__init__(**kwargs)
        self.inner = inner

    def _deserialize(
        self,
        value: Any,  # noqa: ANN401
        attr: str | None,
        data: Mapping[str, Any] | None,
        **kwargs: Any,  # noqa: ANN401
    ) -> tuple[Any, ...]:
        if not isinstance(value, str):
            msg = "Not a comma-separated list."
            raise ValidationError(msg)
        items = [item.strip() for item in value.split(",") if item.strip()]
        return tuple(self.inner.deserialize(item) for item in items)

    def _serialize(self, value: Any, attr: str | None, obj: Any, **kwargs: Any) -> str:  # noqa: ANN401
        return ",".join(str(item) for item in value or ())


_probability = validate.Range(min=0.0, max=1.0)
_positive = validate.Range(min=1)


class ScenarioSchema(Schema):
    class Meta:  # noqa: D106
        unknown = RAISE

    seed = fields.Integer(validate=validate.Range(min=0))
    workload = fields.String(validate=validate.OneOf(WORKLOAD_NAMES))
    workers = fields.Integer(validate=_positive)
    ops = fields.Integer(validate=validate.Range(min=0))
    accounts = fields.Integer(validate=validate.Range(min=2))
    p_submarine = fields.Float(validate=_probability)
    p_stale_eventual = fields.Float(validate=_probability)
    p_stale_index = fields.Float(validate=_probability)
    lt_retry_limit = fields.Integer(validate=_positive)
    p_crash = fields.Float(validate=_probability)
    crash_points = CommaSeparated(fields.String())
    skews = CommaSeparated(fields.Integer())
    queues = fields.Boolean()
    sync_mode = fields.Boolean()
    read_locks = fields.Boolean()
    soft_timeouts = fields.Boolean()
    gc_interval = fields.Integer(validate=_positive)
    max_steps = fields.Integer(validate=_positive)
    timeout_gae = fields.Integer(validate=_positive)
    timeout_roll_forward_dt = fields.Integer(validate=_positive)
    timeout_garbage_collect_dt = fields.Integer(validate=_positive)
    timeout_garbage_collect_shadow = fields.Integer(validate=_positive)
    timeout_read_lock_dt = fields.Integer(validate=_positive)
    epsilon = fields.Integer(validate=_positive)

    @post_load
    def make_scenario(self, data: dict[str, Any], **_: Any) -> Scenario:  # noqa: ANN401
        gc = {name: data.pop(name) for name in _GC_FIELDS if name in data}
        return Scenario(**data, gc=gc)


def parse_pairs(text: str) -> dict[str, str]:
    """Split scenario text into its raw ``key=value`` pairs."""
    pairs: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError({"_line": [f"line {number}: expected key=value, got {raw!r}"]})
        pairs[key.strip()] = value.strip()
    return pairs


def parse_scenario(text: str) -> Scenario:
    """Validate scenario text.

    Raises:
        ValidationError: On unknown keys, bad values or malformed lines.

    """
    return ScenarioSchema().load(parse_pairs(text))


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


__all__ = (
    "WORKLOAD_NAMES",
    "Scenario",
    "ScenarioSchema",
    "load_scenario",
    "parse_pairs",
    "parse_scenario",
)
