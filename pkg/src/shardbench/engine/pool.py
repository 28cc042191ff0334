"""Index of pooled composite-key entries on one source shard.

The world state is authoritative for which keys exist; the pool mirrors it
with the bookkeeping the engine needs (owning transaction, merged payload
ciphers, consumption marks) and counts its own mutations so a summarizer
can tell whether the pool moved under it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..crypto.he import CipherVector

RAW_PREFIX = "cstx"
MERGED_PREFIX = "cstxm"


@dataclass
class MergedEntry:
    """One ``g ~ O`` record: receiver -> HE-summed amount, plus the txs it covers."""

    key: str
    intermediary: str
    initiator: str
    payload: dict[str, CipherVector] = field(default_factory=dict)
    covered: dict[str, list[str]] = field(default_factory=dict)

    @property
    def tx_ids(self) -> list[str]:
        return [t for d in sorted(self.covered) for t in self.covered[d]]


class ComKeyPool:
    def __init__(self, shard: str, settle_period_ms: float = 2000.0):
        self.shard = shard
        self.settle_period_ms = settle_period_ms
        self.raw: dict[str, str] = {}  # rendered key -> tx id
        self.merged: dict[str, MergedEntry] = {}
        self.consumed: set[str] = set()
        self.version = 0
        self._bytes: dict[str, int] = {}
        self._owner: dict[str, str] = {}
        self._per_owner: dict[str, int] = {}
        self._total = 0

    def __len__(self) -> int:
        return len(self.raw) + len(self.merged)

    def __contains__(self, key: str) -> bool:
        return key in self.raw or key in self.merged

    @property
    def nbytes(self) -> int:
        return self._total

    def _own(self, key: str, intermediary: str, size: int) -> None:
        if key not in self._owner:
            self._owner[key] = intermediary
            self._per_owner[intermediary] = self._per_owner.get(intermediary, 0) + 1
        self._total += size - self._bytes.get(key, 0)
        self._bytes[key] = size
        self.version += 1

    def add_raw(self, key: str, tx_id: str, intermediary: str, size: int) -> None:
        self.raw[key] = tx_id
        self._own(key, intermediary, size)

    def put_merged(self, entry: MergedEntry, size: int) -> None:
        self.merged[entry.key] = entry
        self._own(entry.key, entry.intermediary, size)

    def remove(self, key: str) -> None:
        self.raw.pop(key, None)
        self.merged.pop(key, None)
        self._total -= self._bytes.pop(key, 0)
        self.consumed.discard(key)
        owner = self._owner.pop(key, None)
        if owner is not None:
            self._per_owner[owner] -= 1
        self.version += 1

    def count_for(self, intermediary: str) -> int:
        """Entries under ``intermediary`` (raw and merged), for early-settle triggers."""
        return self._per_owner.get(intermediary, 0)
