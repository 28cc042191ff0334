"""Transaction simulation (the "execute" step of execute-order-validate)."""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Callable, Iterable, Protocol

from ..amounts import Number, decode_amount, encode_amount, to_amount
from ..errors import IntentFailed
from .compositekey import CompositeKeyRecord, partial_key_range
from .state import Snapshot

ABSENT = None  # observed version for a key that did not exist


@dataclass(frozen=True)
class ReadWriteSet:
    reads: tuple[tuple[str, int | None], ...] = ()
    writes: tuple[tuple[str, bytes | None], ...] = ()

    def read_keys(self) -> list[str]:
        return [k for k, _ in self.reads]

    def write_keys(self) -> list[str]:
        return [k for k, _ in self.writes]


class TxIntent(Protocol):
    def __call__(self, ctx: "TxContext") -> Any: ...


class TxContext:
    """Chaincode-facing view of a snapshot that records reads and buffers writes.

    Reads of keys this transaction already wrote return the pending value and
    are not recorded; every other read records the version it observed.
    """

    def __init__(self, snapshot: Snapshot):
        self.snapshot = snapshot
        self._reads: dict[str, int | None] = {}
        self._writes: dict[str, bytes | None] = {}

    def get_state(self, key: str) -> bytes | None:
        if key in self._writes:
            return self._writes[key]
        entry = self.snapshot.get(key)
        if key not in self._reads:
            self._reads[key] = entry.version if entry is not None else ABSENT
        return entry.value if entry is not None else None

    def put_state(self, key: str, value: bytes) -> None:
        if value is None:
            raise ValueError("use del_state to delete")
        self._writes[key] = value

    def del_state(self, key: str) -> None:
        self._writes[key] = None

    def get_amount(self, key: str) -> Decimal:
        return decode_amount(self.get_state(key))

    def put_amount(self, key: str, value: Number) -> None:
        self.put_state(key, encode_amount(value))

    def exists(self, key: str) -> bool:
        return self.get_state(key) is not None

    def get_state_by_partial_composite_key(
        self, prefix: str, leading_attrs: Iterable[str] = ()
    ) -> list[CompositeKeyRecord]:
        attrs = list(leading_attrs)
        found = {r.rendered: r for r in self.snapshot.partial_composite(prefix, attrs)}
        for rec in found.values():
            if rec.rendered not in self._reads and rec.rendered not in self._writes:
                self._reads[rec.rendered] = self.snapshot.get(rec.rendered).version
        lo, hi = partial_key_range(prefix, attrs)
        for key, value in self._writes.items():
            if lo <= key < hi:
                if value is None:
                    found.pop(key, None)
                else:
                    found.setdefault(key, CompositeKeyRecord.from_rendered(key))
        return [found[k] for k in sorted(found)]

    def rwset(self) -> ReadWriteSet:
        return ReadWriteSet(tuple(self._reads.items()), tuple(self._writes.items()))


def simulate(proposal: TxIntent, snapshot: Snapshot) -> tuple[ReadWriteSet, Any]:
    ctx = TxContext(snapshot)
    result = proposal(ctx)
    return ctx.rwset(), result


def simulate_tx(proposal: TxIntent, snapshot: Snapshot) -> ReadWriteSet:
    """Run ``proposal`` against ``snapshot``; raises :class:`IntentFailed` on rejection."""
    return simulate(proposal, snapshot)[0]


@dataclass(frozen=True)
class Transfer:
    """Move ``amount`` from ``src`` to ``dst`` on one shard."""

    src: str
    dst: str
    amount: Decimal

    def __post_init__(self):
        object.__setattr__(self, "amount", to_amount(self.amount))

    def __call__(self, ctx: TxContext) -> None:
        if self.amount <= 0:
            raise IntentFailed("NEGATIVE_AMOUNT")
        raw = ctx.get_state(self.src)
        if raw is None:
            raise IntentFailed("UNKNOWN_ACCOUNT", f"no account {self.src}")
        balance = decode_amount(raw)
        if balance < self.amount:
            raise IntentFailed("INSUFFICIENT_BALANCE", f"{self.src} holds {balance} < {self.amount}")
        dst_balance = ctx.get_amount(self.dst)
        ctx.put_amount(self.src, balance - self.amount)
        ctx.put_amount(self.dst, dst_balance + self.amount)


@dataclass(frozen=True)
class Write:
    """Blind-ish write used by tests: reads each key then overwrites it."""

    values: tuple[tuple[str, bytes], ...] = field(default_factory=tuple)

    def __call__(self, ctx: TxContext) -> None:
        for key, value in self.values:
            ctx.get_state(key)
            ctx.put_state(key, value)


@dataclass(frozen=True)
class Apply:
    """Adapter turning a plain function ``fn(ctx)`` into an intent."""

    fn: Callable[[TxContext], Any]
    label: str = ""

    def __call__(self, ctx: TxContext) -> Any:
        return self.fn(ctx)

