"""A shard's ordering and commit pipeline on the event loop."""
from __future__ import annotations

from collections import deque
from typing import Callable

from ..ledger import MB, Block, BlockCutter, EndorsedTx, Verdict, VersionedWorldState, validate_and_commit
from .des import EventLoop

Validator = Callable[[Block], list[Verdict]]


class ShardNode:
    """Batches endorsed transactions into blocks and commits them one at a time.

    Committing a block takes ``commit_ms + per_tx_ms * len(block)``;
    validation happens when that service time ends, so a transaction's read
    versions are checked against everything committed up to then.
    ``charge`` lets directly committed system transactions occupy the
    committer too.
    """

    def __init__(
        self,
        loop: EventLoop,
        name: str,
        state: VersionedWorldState | None,
        block_mb: float,
        batch_timeout_ms: float,
        commit_ms: float,
        per_tx_ms: float,
        on_commit: Callable[[Block, list[Verdict]], None],
        validator: Validator | None = None,
    ):
        self.loop = loop
        self.name = name
        self.state = state
        self.cutter = BlockCutter(int(block_mb * MB), batch_timeout_ms)
        self.commit_ms = commit_ms
        self.per_tx_ms = per_tx_ms
        self.on_commit = on_commit
        self.validator = validator or (lambda block: validate_and_commit(block, self.state))
        self.busy_until = 0.0
        self._queue: deque[Block] = deque()
        self._committing = False
        self.blocks_committed = 0

    def deliver(self, tx: EndorsedTx) -> None:
        """An endorsed transaction reaches the orderer now."""
        opened = self.cutter.pending == 0
        block = self.cutter.offer(tx, self.loop.now)
        if block is not None:
            self._enqueue(block)
            opened = True
        if opened and self.cutter.deadline is not None:
            deadline = self.cutter.deadline
            self.loop.at(deadline, lambda: self._expire(deadline))

    def _expire(self, deadline: float) -> None:
        if self.cutter.deadline == deadline:
            block = self.cutter.expire(self.loop.now)
            if block is not None:
                self._enqueue(block)

    def _enqueue(self, block: Block) -> None:
        self._queue.append(block)
        if not self._committing:
            self._start()

    def _start(self) -> None:
        block = self._queue.popleft()
        self._committing = True
        begin = max(self.loop.now, self.busy_until)
        self.busy_until = begin + self.commit_ms + self.per_tx_ms * len(block.txs)
        self.loop.at(self.busy_until, lambda: self._finish(block))

    def _finish(self, block: Block) -> None:
        verdicts = self.validator(block)
        self.blocks_committed += 1
        self._committing = False
        self.on_commit(block, verdicts)
        if self._queue and not self._committing:
            self._start()

    def charge(self, ms: float) -> None:
        """Occupy the committer for ``ms`` more (system work committed out of band)."""
        self.busy_until = max(self.busy_until, self.loop.now) + ms

    @property
    def backlog(self) -> int:
        return len(self._queue) + self.cutter.pending
