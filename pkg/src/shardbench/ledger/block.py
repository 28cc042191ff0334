"""Ordering into blocks and MVCC validation (the "order" and "validate" steps)."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .state import VersionedWorldState
from .tx import ReadWriteSet

MB = 1 << 20


class Verdict(str, enum.Enum):
    VALID = "VALID"
    MVCC_CONFLICT = "MVCC_CONFLICT"


@dataclass
class EndorsedTx:
    """An endorsed transaction waiting to be ordered."""

    tx_id: str
    rwset: ReadWriteSet
    size: int = MB
    arrival: float = 0
    payload: Any = None


@dataclass
class Block:
    height: int
    txs: list[EndorsedTx]
    byte_size: int
    formation_deadline: float
    emitted_at: float = 0


class BlockCutter:
    """Incremental batcher: cut on overflow or when the batch timer expires.

    The timer starts at the first transaction of a batch. A transaction that
    would push the batch past ``block_size_limit`` closes the current batch
    immediately and opens the next one. Time units are whatever the caller
    uses for ``arrival``; ``batch_timeout`` must share them.
    """

    def __init__(self, block_size_limit: int, batch_timeout: float):
        if block_size_limit <= 0 or batch_timeout <= 0:
            raise ValueError("block size limit and batch timeout must be positive")
        self.block_size_limit = block_size_limit
        self.batch_timeout = batch_timeout
        self._batch: list[EndorsedTx] = []
        self._bytes = 0
        self.deadline: float | None = None
        self._seq = 0

    @property
    def pending(self) -> int:
        return len(self._batch)

    def offer(self, tx: EndorsedTx, now: float) -> Block | None:
        """Add ``tx`` arriving at ``now``; returns a block if this overflowed the batch."""
        if tx.size > self.block_size_limit:
            raise ValueError(f"transaction {tx.tx_id} ({tx.size} B) exceeds the block size limit")
        cut = None
        if self._batch and self._bytes + tx.size > self.block_size_limit:
            cut = self._cut(now)
        if not self._batch:
            self.deadline = now + self.batch_timeout
        self._batch.append(tx)
        self._bytes += tx.size
        return cut

    def expire(self, now: float) -> Block | None:
        """Cut the batch if its timer has run out by ``now``."""
        if self._batch and self.deadline is not None and now >= self.deadline:
            return self._cut(now)
        return None

    def flush(self, now: float) -> Block | None:
        return self._cut(now) if self._batch else None

    def _cut(self, now: float) -> Block:
        block = Block(self._seq, self._batch, self._bytes, self.deadline, emitted_at=now)
        self._seq += 1
        self._batch, self._bytes, self.deadline = [], 0, None
        return block


def cut_blocks(queue: Iterable[EndorsedTx], block_size_limit: int, batch_timeout: float) -> list[Block]:
    """Batch a finite, arrival-ordered stream into every block it produces."""
    cutter = BlockCutter(block_size_limit, batch_timeout)
    blocks: list[Block] = []
    for tx in sorted(queue, key=lambda t: t.arrival):
        if cutter.deadline is not None and tx.arrival >= cutter.deadline:
            blocks.append(cutter.expire(cutter.deadline))
        block = cutter.offer(tx, tx.arrival)
        if block is not None:
            blocks.append(block)
    if cutter.pending:
        blocks.append(cutter.expire(cutter.deadline))
    return blocks


def order_and_batch(queue: list[EndorsedTx], block_size_limit: int, batch_timeout: float) -> Block | None:
    """Cut the next block off the front of ``queue`` (consumed in place).

    Returns ``None`` when the queue is empty: an empty window emits nothing.
    """
    blocks = cut_blocks(queue, block_size_limit, batch_timeout)
    if not blocks:
        return None
    first = blocks[0]
    taken = {id(tx) for tx in first.txs}
    queue[:] = [tx for tx in queue if id(tx) not in taken]
    return first


def check_reads(state: VersionedWorldState, rwset: ReadWriteSet) -> bool:
    for key, observed in rwset.reads:
        entry = state.get(key)
        current = entry.version if entry is not None else None
        if current != observed:
            return False
    return True


def apply_writes(state: VersionedWorldState, rwset: ReadWriteSet) -> None:
    for key, value in rwset.writes:
        state.put(key, value)


def validate_and_commit(
    block: Block | Sequence[EndorsedTx] | Sequence[ReadWriteSet], state: VersionedWorldState
) -> list[Verdict]:
    """Validate transactions in block order, applying each valid write set at once.

    A transaction is valid iff every version in its read set still matches
    the state at its turn, so a later transaction sees the versions bumped
    by earlier valid ones in the same block.
    """
    txs = block.txs if isinstance(block, Block) else block
    state.next_height()
    verdicts = []
    for tx in txs:
        rwset = tx if isinstance(tx, ReadWriteSet) else tx.rwset
        if check_reads(state, rwset):
            apply_writes(state, rwset)
            verdicts.append(Verdict.VALID)
        else:
            verdicts.append(Verdict.MVCC_CONFLICT)
    return verdicts

