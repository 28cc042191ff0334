"""Pieces shared by the baseline coordinators."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, localcontext

from ..amounts import EXACT, to_amount
from ..ledger import Transfer


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 5
    backoff_ms: float = 2000.0

    def __post_init__(self):
        if self.max_retries < 0 or self.backoff_ms < 0:
            raise ValueError("retry policy values must be non-negative")

    def allows(self, retries_so_far: int) -> bool:
        """Whether another attempt is permitted after ``retries_so_far`` retries."""
        return retries_so_far < self.max_retries


@dataclass(frozen=True)
class BaselineTx:
    tx_id: str
    initiator: str
    receiver: str
    intermediary: str
    amount: Decimal
    source: str
    target: str

    def __post_init__(self):
        object.__setattr__(self, "amount", to_amount(self.amount))


def scaled(amount: Decimal, rate: Decimal) -> Decimal:
    with localcontext(EXACT):
        return to_amount(amount * rate)


def source_leg(tx: BaselineTx) -> Transfer:
    """Initiator pays the intermediary's single source-side account."""
    return Transfer(tx.initiator, tx.intermediary, tx.amount)


def target_leg(tx: BaselineTx, rate: Decimal) -> Transfer:
    """The intermediary's target-side account pays the receiver."""
    return Transfer(tx.intermediary, tx.receiver, scaled(tx.amount, rate))


def refund_leg(tx: BaselineTx) -> Transfer:
    return Transfer(tx.intermediary, tx.initiator, tx.amount)


def lock_keys(tx: BaselineTx) -> list[str]:
    """Shard-qualified account keys touched by ``tx``, in global acquisition order."""
    return sorted({
        f"{tx.source}/{tx.initiator}",
        f"{tx.source}/{tx.intermediary}",
        f"{tx.target}/{tx.intermediary}",
        f"{tx.target}/{tx.receiver}",
    })
