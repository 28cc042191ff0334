"""Pessimistic cross-shard coordinator: ordered two-phase locking.

A transfer locks its four account keys (initiator, both sides of the
intermediary, receiver) in global key order, holds them for the
cross-shard round trips and commits, applies both shard updates, and only
then releases everything. Ordered acquisition rules out deadlock; a waiter
that does not get its lock within ``lock_timeout_ms`` gives up all locks.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal
from typing import TYPE_CHECKING, Callable, Mapping

from ..errors import IntentFailed
from ..ledger import VersionedWorldState, apply_writes, simulate_tx
from .common import BaselineTx, lock_keys, source_leg, target_leg

if TYPE_CHECKING:
    from ..sim.des import EventLoop


@dataclass
class LockState:
    holder: str | None = None
    waiters: deque = field(default_factory=deque)
    acquired_at: float = 0.0


class LockTable:
    """One holder per key, FIFO waiters."""

    def __init__(self):
        self._locks: dict[str, LockState] = {}
        self._held: dict[str, list[str]] = {}
        self._waiting: dict[str, str] = {}

    def request(self, tx_id: str, key: str, now: float) -> bool:
        """Grant ``key`` now (True) or enqueue ``tx_id`` behind the holder (False)."""
        lock = self._locks.setdefault(key, LockState())
        if lock.holder is None:
            lock.holder, lock.acquired_at = tx_id, now
            self._held.setdefault(tx_id, []).append(key)
            return True
        if lock.holder == tx_id:
            return True
        lock.waiters.append(tx_id)
        self._waiting[tx_id] = key
        return False

    def release_all(self, tx_id: str, now: float) -> list[tuple[str, str]]:
        """Drop every lock and queue slot of ``tx_id``; returns ``(tx, key)`` grants made."""
        waiting = self._waiting.pop(tx_id, None)
        if waiting is not None:
            self._locks[waiting].waiters.remove(tx_id)
        grants = []
        for key in self._held.pop(tx_id, []):
            lock = self._locks[key]
            lock.holder = None
            if lock.waiters:
                nxt = lock.waiters.popleft()
                del self._waiting[nxt]
                lock.holder, lock.acquired_at = nxt, now
                self._held.setdefault(nxt, []).append(key)
                grants.append((nxt, key))
            else:
                del self._locks[key]
        return grants

    def holder(self, key: str) -> str | None:
        lock = self._locks.get(key)
        return lock.holder if lock else None

    def waiters(self, key: str) -> list[str]:
        lock = self._locks.get(key)
        return list(lock.waiters) if lock else []

    def held_by(self, tx_id: str) -> list[str]:
        return list(self._held.get(tx_id, []))

    def waiting_for(self, tx_id: str) -> str | None:
        return self._waiting.get(tx_id)

    def waits_for(self) -> dict[str, set[str]]:
        """Edges waiter -> holder of the key it waits on."""
        return {tx: {self._locks[key].holder} for tx, key in self._waiting.items()}

    def __len__(self) -> int:
        return len(self._locks)


@dataclass
class _Attempt:
    tx: BaselineTx
    keys: list[str]
    next_index: int = 0
    started: float = 0.0
    timer_token: int = 0
    done: bool = False


class TwoPLCoordinator:
    """Drives transfers through a shared :class:`LockTable` on an event loop.

    ``on_done(tx, status, now)`` receives ``"COMMITTED"``, ``"LOCK_TIMEOUT"``
    or an intent-failure reason. Conflicts are prevented, never detected,
    so there is no MVCC verdict to report.
    """

    def __init__(
        self,
        loop: EventLoop,
        states: Mapping[str, VersionedWorldState],
        on_done: Callable[[BaselineTx, str, float], None],
        hold_ms: float,
        lock_timeout_ms: float,
        rate: Decimal = Decimal(1),
        rates: Mapping[str, Decimal] | None = None,
        on_commit: Callable[[BaselineTx], None] | None = None,
    ):
        self.loop = loop
        self.states = states
        self.on_done = on_done
        self.hold_ms = hold_ms
        self.lock_timeout_ms = lock_timeout_ms
        self.rate = rate
        self.rates = rates or {}
        self.on_commit = on_commit
        self.table = LockTable()
        self._active: dict[str, _Attempt] = {}
        self.max_waiters_seen = 0

    def start(self, tx: BaselineTx) -> None:
        attempt = _Attempt(tx, lock_keys(tx), started=self.loop.now)
        self._active[tx.tx_id] = attempt
        self._advance(attempt)

    def _advance(self, a: _Attempt) -> None:
        while a.next_index < len(a.keys):
            key = a.keys[a.next_index]
            if not self.table.request(a.tx.tx_id, key, self.loop.now):
                self.max_waiters_seen = max(self.max_waiters_seen, len(self.table.waiters(key)))
                a.timer_token += 1
                token = a.timer_token
                self.loop.after(self.lock_timeout_ms, lambda a=a, token=token: self._timeout(a, token))
                return
            a.next_index += 1
        self.loop.after(self.hold_ms, lambda a=a: self._commit(a))

    def _timeout(self, a: _Attempt, token: int) -> None:
        if a.done or token != a.timer_token or self.table.waiting_for(a.tx.tx_id) is None:
            return
        self._finish(a, "LOCK_TIMEOUT")

    def _commit(self, a: _Attempt) -> None:
        tx = a.tx
        rate = self.rates.get(tx.source, self.rate)
        try:
            src = simulate_tx(source_leg(tx), self.states[tx.source].snapshot())
            tgt = simulate_tx(target_leg(tx, rate), self.states[tx.target].snapshot())
        except IntentFailed as exc:
            self._finish(a, exc.reason)
            return
        for shard, rwset in ((tx.source, src), (tx.target, tgt)):
            state = self.states[shard]
            state.next_height()
            apply_writes(state, rwset)
        if self.on_commit is not None:
            self.on_commit(tx)
        self._finish(a, "COMMITTED")

    def _finish(self, a: _Attempt, status: str) -> None:
        a.done = True
        self._active.pop(a.tx.tx_id, None)
        for tx_id, _key in self.table.release_all(a.tx.tx_id, self.loop.now):
            nxt = self._active[tx_id]
            nxt.next_index += 1
            nxt.timer_token += 1  # the pending timeout no longer applies
            self._advance(nxt)
        self.on_done(a.tx, status, self.loop.now)

    @property
    def active(self) -> int:
        return len(self._active)
