"""Cross-shard transaction records, wire message, and settlement results."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any

from ..crypto.he import CipherVector
from ..crypto.transport import AmountCipher
from ..errors import InvalidTransition


class CSTxStatus(str, enum.Enum):
    INITIATED = "INITIATED"
    POOLED = "POOLED"
    ACCUMULATED = "ACCUMULATED"
    COMPLETED = "COMPLETED"
    ROLLED_BACK = "ROLLED_BACK"

    @property
    def terminal(self) -> bool:
        return self in (CSTxStatus.COMPLETED, CSTxStatus.ROLLED_BACK)


_NEXT = {
    CSTxStatus.INITIATED: {CSTxStatus.POOLED, CSTxStatus.ROLLED_BACK},
    CSTxStatus.POOLED: {CSTxStatus.ACCUMULATED, CSTxStatus.ROLLED_BACK},
    CSTxStatus.ACCUMULATED: {CSTxStatus.COMPLETED, CSTxStatus.ROLLED_BACK},
    CSTxStatus.COMPLETED: set(),
    CSTxStatus.ROLLED_BACK: set(),
}


def transition_allowed(old: CSTxStatus, new: CSTxStatus) -> bool:
    return new in _NEXT[old]


@dataclass(frozen=True)
class CSTxMessage:
    """What the initiator hands to the intermediary: no plaintext amount."""

    initiator: str
    receiver: str
    intermediary: str
    cipher: AmountCipher

    @property
    def ts(self) -> int:
        return self.cipher.tx_timestamp

    def to_json(self) -> str:
        return json.dumps(
            {
                "initiator": self.initiator,
                "receiver": self.receiver,
                "intermediary": self.intermediary,
                "v_cipher_hex": self.cipher.hex,
                "ts": self.ts,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CSTxMessage":
        obj = json.loads(text)
        cipher = AmountCipher(bytes.fromhex(obj["v_cipher_hex"]), int(obj["ts"]), f"skey:{obj['initiator']}")
        return cls(obj["initiator"], obj["receiver"], obj["intermediary"], cipher)


@dataclass
class CrossShardTx:
    tx_id: str
    message: CSTxMessage
    source: str
    target: str
    amount: Decimal  # client-side only; engine code paths never read it
    initiated_at: float
    status: CSTxStatus = CSTxStatus.INITIATED
    composite_key: str | None = None
    depends_on: tuple[str, ...] = ()
    terminal_at: float | None = None
    failure: str | None = None
    history: list[tuple[str, float]] = field(default_factory=list)

    @property
    def initiator(self) -> str:
        return self.message.initiator

    @property
    def receiver(self) -> str:
        return self.message.receiver

    @property
    def intermediary(self) -> str:
        return self.message.intermediary

    @property
    def cipher(self) -> AmountCipher:
        return self.message.cipher

    @property
    def ts(self) -> int:
        return self.message.ts

    def move(self, new: CSTxStatus, now: float) -> None:
        if not transition_allowed(self.status, new):
            raise InvalidTransition(f"{self.tx_id}: {self.status.value} -> {new.value}")
        self.status = new
        self.history.append((new.value, now))
        if new.terminal:
            self.terminal_at = now


@dataclass(frozen=True)
class PendingItem:
    receiver: str
    cipher: AmountCipher
    tx_id: str


@dataclass
class PendingTransferSet:
    intermediary: str
    items: list[PendingItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SettlementResult:
    intermediary: str
    source: str
    target: str
    rate: Decimal
    c_sum: CipherVector | None
    c_final_sum: CipherVector | None
    pending: PendingTransferSet
    consumed_keys: list[str]
    tx_ids: list[str]
    out_amount: Decimal | None = None
    in_amount: Decimal | None = None
    attempts: int = 0
    period: int = 0

    @property
    def empty(self) -> bool:
        return not self.tx_ids

    def audit(self) -> dict[str, Any]:
        return {
            "intermediary": self.intermediary,
            "period": self.period,
            "out_amount": None if self.out_amount is None else format(self.out_amount, "f"),
            "in_amount": None if self.in_amount is None else format(self.in_amount, "f"),
            "rate": format(self.rate, "f"),
            "n_txs": len(self.tx_ids),
        }
