"""Composite-key reuse: fold pooled entries sharing ``(g, O)`` into one merged key.

An elected intermediary summarizes the pool of a source shard: entries are
grouped by (intermediary, initiator) and, within a group, amounts for the
same receiver are added in the HE domain. The other intermediaries check the
summary by recomputing a digest of its structure from the same snapshot.
Regeneration then swaps the summarized entries for the merged ones in one
source-shard transaction.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

from ..crypto.keystore import intermediary_principal
from ..errors import DigestMismatch, EmptyGroup, StaleSnapshot
from ..ledger import TxContext, create_composite_key
from .hicocs import HiCoCSEngine, cipher_from_value, merged_value
from .model import CSTxStatus
from .pool import MERGED_PREFIX, RAW_PREFIX, MergedEntry

Structure = dict[tuple[str, str], dict[str, list[str]]]


@dataclass
class TempComKeyPool:
    source: str
    epoch: int
    pool_version: int
    merged: list[MergedEntry] = field(default_factory=list)
    replaced: list[str] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return structure_digest({(m.intermediary, m.initiator): m.covered for m in self.merged})


def elect_reuse_intermediary(group: Sequence[str], epoch: int, seed: int) -> str:
    """Deterministic, uniform choice over ``group`` for a given (epoch, seed)."""
    if not group:
        raise EmptyGroup("no intermediaries to elect from")
    members = sorted(group)
    h = hashlib.sha256(f"{seed}:{epoch}".encode()).digest()
    return members[int.from_bytes(h, "big") % len(members)]


def structure_digest(structure: Structure) -> str:
    canon = [
        [g, o, [[d, sorted(ids)] for d, ids in sorted(per_d.items())]]
        for (g, o), per_d in sorted(structure.items())
    ]
    return hashlib.sha256(json.dumps(canon, separators=(",", ":")).encode()).hexdigest()


def _snapshot_structure(engine: HiCoCSEngine, source: str, group: Sequence[str]):
    """Group eligible entries by (g, O) and receiver; reads the committed pool."""
    state = engine.states[source]
    pool = engine.pools[source]
    structure: Structure = {}
    singles: dict[tuple[str, str], list[tuple[str, str, str]]] = {}  # (g,O) -> [(D, tx, key)]
    existing: dict[tuple[str, str], MergedEntry] = {}
    replaced: list[str] = []
    for g in sorted(group):
        for rec in state.partial_composite(MERGED_PREFIX, [g]):
            if rec.rendered in pool.consumed:
                continue
            entry = pool.merged[rec.rendered]
            gk = (entry.intermediary, entry.initiator)
            existing[gk] = entry
            per_d = structure.setdefault(gk, {})
            for d, ids in entry.covered.items():
                per_d.setdefault(d, []).extend(ids)
            replaced.append(rec.rendered)
        for rec in state.partial_composite(RAW_PREFIX, [g]):
            if rec.rendered in pool.consumed:
                continue
            tx = engine.txs[pool.raw[rec.rendered]]
            if tx.status is not CSTxStatus.POOLED or not engine.eligible(tx):
                continue
            _, o, d, _ = rec.attributes
            structure.setdefault((g, o), {}).setdefault(d, []).append(tx.tx_id)
            singles.setdefault((g, o), []).append((d, tx.tx_id, rec.rendered))
            replaced.append(rec.rendered)
    return structure, singles, existing, replaced


def ckpoe_summarize(engine: HiCoCSEngine, source: str, group: Sequence[str], epoch: int = 0,
                    elected: str | None = None) -> TempComKeyPool:
    """Build the merged records for ``source``'s pool without touching the ledger."""
    pool = engine.pools[source]
    state = engine.states[source]
    ctx = engine.contexts[source]
    backend = engine.backend
    me = intermediary_principal(elected or (sorted(group)[0] if group else ""))
    structure, singles, existing, replaced = _snapshot_structure(engine, source, group)
    temp = TempComKeyPool(source, epoch, pool.version, replaced=replaced)
    for (g, o) in sorted(structure):
        old = existing.get((g, o))
        entry = MergedEntry(create_composite_key(MERGED_PREFIX, [g, o]), g, o)
        if old is not None:
            entry.payload = dict(old.payload)
            entry.covered = {d: list(ids) for d, ids in old.covered.items()}
        for d, tx_id, key in singles.get((g, o), []):
            cipher = cipher_from_value(state.value(key))
            engine.monitor.observe(me, cipher, "reuse.collect")
            single = ctx.convert([cipher], engine.delta)
            entry.payload[d] = single if d not in entry.payload else backend.add(entry.payload[d], single)
            entry.covered.setdefault(d, []).append(tx_id)
        engine.monitor.observe(me, list(entry.payload.values()), "reuse.fold")
        temp.merged.append(entry)
    return temp


def ckpoe_validate(engine: HiCoCSEngine, temp: TempComKeyPool, group: Sequence[str], elected: str) -> str:
    """Every non-elected intermediary recomputes the structure digest from the snapshot."""
    claimed = temp.digest
    for g in sorted(group):
        if g == elected:
            continue
        mine = structure_digest(_snapshot_structure(engine, temp.source, group)[0])
        if mine != claimed:
            raise DigestMismatch(f"{g} computed {mine[:12]}, elected claimed {claimed[:12]}")
    return claimed


def ckpoe_regenerate(engine: HiCoCSEngine, temp: TempComKeyPool) -> None:
    """Replace the summarized entries with the merged ones in one transaction."""
    pool = engine.pools[temp.source]
    if pool.version != temp.pool_version:
        raise StaleSnapshot(f"pool changed since summarization (v{temp.pool_version} -> v{pool.version})")
    values = {m.key: merged_value(m.covered) for m in temp.merged}

    def run(ctx: TxContext) -> None:
        for key in temp.replaced:
            if key not in values:
                ctx.del_state(key)
        for key in sorted(values):
            ctx.put_state(key, values[key])

    if not temp.replaced and not values:
        return
    engine._commit(temp.source, run, f"reuse:{temp.epoch}")
    for key in temp.replaced:
        pool.remove(key)
    for m in temp.merged:
        pool.put_merged(m, len(m.key) + len(values[m.key]))
        for tx_id in m.tx_ids:
            engine.txs[tx_id].composite_key = m.key
    temp.merged = []  # the temporary pool is spent


def run_ckpoe(engine: HiCoCSEngine, source: str, group: Sequence[str], epoch: int, seed: int) -> dict:
    """One reuse round on ``source``; returns the audit record."""
    elected = elect_reuse_intermediary(group, epoch, seed)
    before = len(engine.pools[source])
    temp = ckpoe_summarize(engine, source, group, epoch, elected)
    digest = ckpoe_validate(engine, temp, group, elected)
    ckpoe_regenerate(engine, temp)
    return {
        "epoch": epoch,
        "elected": elected,
        "pool_before": before,
        "pool_after": len(engine.pools[source]),
        "digest": digest,
    }
