"""Optimistic cross-shard coordinator.

A transfer is executed against snapshots of both shards, then validated at
commit: it commits only if every version it read on either shard is still
current, in which case both write sets are applied together. Transfers
that lose the race are re-executed on fresh snapshots, up to the retry
budget.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

from ..errors import IntentFailed
from ..ledger import ReadWriteSet, Verdict, VersionedWorldState, apply_writes, check_reads, simulate_tx
from .common import BaselineTx, RetryPolicy, source_leg, target_leg

CrossRWSet = dict[str, ReadWriteSet]


def occ_execute(states: Mapping[str, VersionedWorldState], tx: BaselineTx, rate: Decimal) -> CrossRWSet:
    """Run both legs against current snapshots; raises :class:`IntentFailed`."""
    return {
        tx.source: simulate_tx(source_leg(tx), states[tx.source].snapshot()),
        tx.target: simulate_tx(target_leg(tx, rate), states[tx.target].snapshot()),
    }


def occ_validate_and_commit(
    states: Mapping[str, VersionedWorldState], batch: Sequence[CrossRWSet]
) -> list[Verdict]:
    """Validate cross-shard read sets in order, applying each valid one on every shard."""
    touched = sorted({shard for rw in batch for shard in rw})
    for shard in touched:
        states[shard].next_height()
    verdicts = []
    for rw in batch:
        if all(check_reads(states[shard], rwset) for shard, rwset in rw.items()):
            for shard in sorted(rw):
                apply_writes(states[shard], rw[shard])
            verdicts.append(Verdict.VALID)
        else:
            verdicts.append(Verdict.MVCC_CONFLICT)
    return verdicts


@dataclass
class OCCResult:
    tx_id: str
    status: str  # COMMITTED, ABORT_EXHAUSTED, or an intent-failure reason
    retries: int


def run_occ(
    states: Mapping[str, VersionedWorldState], txs: Sequence[BaselineTx],
    policy: RetryPolicy | None = None, rate: Decimal = Decimal(1),
) -> list[OCCResult]:
    """Concurrent rounds: every live transfer executes on the same snapshots,
    the round validates as one batch, losers retry in the next round."""
    policy = policy or RetryPolicy()
    results: dict[str, OCCResult] = {}
    retries = {tx.tx_id: 0 for tx in txs}
    live = list(txs)
    while live:
        batch, members = [], []
        for tx in live:
            try:
                batch.append(occ_execute(states, tx, rate))
                members.append(tx)
            except IntentFailed as exc:
                results[tx.tx_id] = OCCResult(tx.tx_id, exc.reason, retries[tx.tx_id])
        verdicts = occ_validate_and_commit(states, batch)
        live = []
        for tx, verdict in zip(members, verdicts):
            if verdict is Verdict.VALID:
                results[tx.tx_id] = OCCResult(tx.tx_id, "COMMITTED", retries[tx.tx_id])
            elif policy.allows(retries[tx.tx_id]):
                retries[tx.tx_id] += 1
                live.append(tx)
            else:
                results[tx.tx_id] = OCCResult(tx.tx_id, "ABORT_EXHAUSTED", retries[tx.tx_id])
    return [results[tx.tx_id] for tx in txs]
