"""Client functions and the workloads that issue them.

Client functions are registered by name in :data:`CLIENT_FUNCTIONS`; the
transaction record stores only that name and the arguments, which is all the
serializability checker needs to replay a run.

Classes:
    ClientCall: One transaction a worker will issue.
    Workload: Base class: set up initial data, plan calls, check invariants.
    BankWorkload, RandomReadWriteWorkload, NamedKeyChurnWorkload
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, ClassVar, cast

from .keys import Key
from .records import is_reserved_key
from .store import Entity, decode_value

if TYPE_CHECKING:
    import random

    from .context import DTContext
    from .extension import DistributedTransactions
    from .typing import ClientFunction

ACCOUNT_KIND = "Account"
ITEM_KIND = "Item"
SLOT_KIND = "Slot"

CLIENT_FUNCTIONS: dict[str, ClientFunction] = {}


def client_function(fn: ClientFunction) -> ClientFunction:
    """Register ``fn`` under its name so recorded transactions can be replayed."""
    CLIENT_FUNCTIONS[fn.__name__] = fn
    return fn


def _int(entity: Entity | None, name: str) -> int:
    if entity is None:
        return 0
    return cast(int, entity.props.get(name, 0))


@client_function
async def open_accounts(ctx: DTContext, balances: list[int]) -> list[Key]:
    """Create one account per balance, each in its own entity group."""
    return [ctx.put(Entity(Key.of(ACCOUNT_KIND), {"balance": amount})) for amount in balances]


@client_function
async def transfer(ctx: DTContext, source: Key, target: Key, amount: int) -> list[int]:
    """Move ``amount`` between two accounts; refuses to overdraw."""
    src = await ctx.get(source)
    dst = await ctx.get(target)
    if src is None or dst is None:
        msg = f"no such account: {source if src is None else target}"
        raise LookupError(msg)
    balance = _int(src, "balance")
    if balance < amount:
        msg = f"{source} holds {balance}, cannot transfer {amount}"
        raise ValueError(msg)
    src.props["balance"] = balance - amount
    dst.props["balance"] = _int(dst, "balance") + amount
    ctx.put(src)
    ctx.put(dst)
    return [_int(src, "balance"), _int(dst, "balance")]


@client_function
async def audit(ctx: DTContext, accounts: list[Key]) -> int:
    """Read-only sum of balances."""
    return sum([_int(await ctx.get(key), "balance") for key in accounts])


@client_function
async def create_items(ctx: DTContext, count: int) -> list[Key]:
    return [ctx.put(Entity(Key.of(ITEM_KIND), {"value": 0, "history": []})) for _ in range(count)]


@client_function
async def read_write(ctx: DTContext, reads: list[Key], writes: list[Key], tag: int) -> int:
    """Write ``sum(reads) + tag`` into every written item, appending ``tag`` to its history."""
    total = sum([_int(await ctx.get(key), "value") for key in reads])
    for key in writes:
        current = await ctx.get(key)
        history = cast(list[int], current.props.get("history", [])) if current else []
        ctx.put(Entity(key, {"value": total + tag, "history": [*history, tag]}))
    return total


@client_function
async def churn(ctx: DTContext, key: Key, action: str) -> bool:
    """Create, bump or delete a client-named entity; returns whether it existed."""
    current = await ctx.get(key)
    match action:
        case "create":
            if current is None:
                ctx.put(Entity(key, {"count": 1}))
        case "bump":
            if current is not None:
                ctx.put(Entity(key, {"count": _int(current, "count") + 1}))
        case "delete":
            if current is not None:
                ctx.delete(key)
        case _:
            msg = f"unknown churn action {action!r}"
            raise ValueError(msg)
    return current is not None


@dataclass(frozen=True, slots=True)
class ClientCall:
    """One transaction to issue.

    ``read_keys`` are the keys a read lock would cover when read locks are on.
    """

    fn: str
    args: tuple[Any, ...]
    read_keys: tuple[Key, ...] = ()

    @property
    def function(self) -> ClientFunction:
        return CLIENT_FUNCTIONS[self.fn]


def client_entities(entities: list[Entity]) -> list[Entity]:
    return [entity for entity in entities if not is_reserved_key(entity.key)]


class Workload:
    """A generator of client calls over some initial data.

    Attributes:
        name (str): Name used in scenario files.
        setup_user (str): User that creates the initial data.

    """

    name: ClassVar[str]
    setup_user: ClassVar[str] = "setup"

    def __init__(self, size: int) -> None:  # noqa: D107
        self.size = size
        self.keys: list[Key] = []

    async def setup(self, dtxn: DistributedTransactions) -> None:
        """Create the initial data; runs before the history starts."""

    def plan(self, rng: random.Random, ops: int) -> list[ClientCall]:
        raise NotImplementedError

    def invariant(self, entities: list[Entity]) -> int | None:
        """A quantity every committed state must preserve, if the workload has one."""
        return None


class BankWorkload(Workload):
    name = "bank"
    initial_balance = 100

    async def setup(self, dtxn: DistributedTransactions) -> None:
        balances = [self.initial_balance] * self.size
        record = await dtxn.run_in_transaction(self.setup_user, open_accounts, balances)
        self.keys = _created_keys(record.result if record else None)

    def plan(self, rng: random.Random, ops: int) -> list[ClientCall]:
        calls = []
        for _ in range(ops):
            source, target = rng.sample(self.keys, 2)
            amount = rng.randint(1, self.initial_balance // 2)
            calls.append(ClientCall("transfer", (source, target, amount), (source, target)))
        return calls

    def invariant(self, entities: list[Entity]) -> int | None:
        return sum(
            _int(entity, "balance")
            for entity in client_entities(entities)
            if entity.key.kind == ACCOUNT_KIND
        )


class RandomReadWriteWorkload(Workload):
    name = "random-readwrite"

    async def setup(self, dtxn: DistributedTransactions) -> None:
        record = await dtxn.run_in_transaction(self.setup_user, create_items, self.size)
        self.keys = _created_keys(record.result if record else None)

    def plan(self, rng: random.Random, ops: int) -> list[ClientCall]:
        calls = []
        for tag in range(1, ops + 1):
            reads = sorted(rng.sample(self.keys, rng.randint(1, min(3, len(self.keys)))))
            writes = sorted(rng.sample(self.keys, rng.randint(1, min(2, len(self.keys)))))
            calls.append(ClientCall("read_write", (reads, writes, tag), tuple(reads)))
        return calls


class NamedKeyChurnWorkload(Workload):
    name = "named-key-churn"
    actions = ("create", "create", "bump", "delete")

    async def setup(self, dtxn: DistributedTransactions) -> None:  # noqa: ARG002
        self.keys = [Key.of(SLOT_KIND, f"s{index}") for index in range(self.size)]

    def plan(self, rng: random.Random, ops: int) -> list[ClientCall]:
        return [
            ClientCall("churn", (key, rng.choice(self.actions)), (key,))
            for key in (rng.choice(self.keys) for _ in range(ops))
        ]


WORKLOADS: dict[str, type[Workload]] = {
    workload.name: workload
    for workload in (BankWorkload, RandomReadWriteWorkload, NamedKeyChurnWorkload)
}


def _created_keys(result: str | None) -> list[Key]:
    if result is None:
        msg = "setup transaction did not commit"
        raise RuntimeError(msg)
    return cast(list[Key], decode_value(json.loads(result)))


__all__ = (
    "CLIENT_FUNCTIONS",
    "WORKLOADS",
    "BankWorkload",
    "ClientCall",
    "NamedKeyChurnWorkload",
    "RandomReadWriteWorkload",
    "Workload",
    "audit",
    "churn",
    "client_function",
    "client_entities",
    "create_items",
    "open_accounts",
    "read_write",
    "transfer",
)
