"""Single-broker scheme: two ordinary MVCC transfers through ``g``'s account keys.

Every transfer through one intermediary reads and writes the same account
key on each shard, so transfers that share a block contend: the first one
validated wins and the rest fail the version check.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

from ..errors import IntentFailed
from ..ledger import Verdict, VersionedWorldState, simulate_tx, validate_and_commit
from .common import BaselineTx, refund_leg, source_leg, target_leg


class Outcome(str, enum.Enum):
    COMPLETED = "COMPLETED"
    ROLLED_BACK = "ROLLED_BACK"


@dataclass
class VanillaResult:
    outcome: Outcome
    reason: str | None = None
    retries: int = 0
    conflicts: int = 0


def vanilla_block(states: Mapping[str, VersionedWorldState], txs: Sequence[BaselineTx]) -> list[Verdict]:
    """Source legs of ``txs`` endorsed on one snapshot and validated as one block."""
    if not txs:
        return []
    source = txs[0].source
    snap = states[source].snapshot()
    rwsets = [simulate_tx(source_leg(tx), snap) for tx in txs]
    return validate_and_commit(rwsets, states[source])


def _commit_alone(state: VersionedWorldState, intent) -> Verdict:
    rwset = simulate_tx(intent, state.snapshot())
    return validate_and_commit([rwset], state)[0]


def run_vanilla(
    states: Mapping[str, VersionedWorldState], tx: BaselineTx, rate: Decimal = Decimal(1)
) -> VanillaResult:
    """Run one transfer alone, each leg in its own block.

    A target-leg failure triggers a compensating refund of the source leg.
    """
    try:
        _commit_alone(states[tx.source], source_leg(tx))
    except IntentFailed as exc:
        return VanillaResult(Outcome.ROLLED_BACK, exc.reason)
    try:
        _commit_alone(states[tx.target], target_leg(tx, rate))
    except IntentFailed as exc:
        _commit_alone(states[tx.source], refund_leg(tx))
        return VanillaResult(Outcome.ROLLED_BACK, exc.reason)
    return VanillaResult(Outcome.COMPLETED)
