from __future__ import annotations

import random
from collections import Counter
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardbench.acceptance import fund, fund_intermediaries, reuse_pool, small_engine
from shardbench.amounts import decode_amount, to_amount
from shardbench.engine import (
    CSTxStatus,
    ckpoe_regenerate,
    ckpoe_summarize,
    ckpoe_validate,
    elect_reuse_intermediary,
    run_ckpoe,
)
from shardbench.errors import DigestMismatch, EmptyGroup, StaleSnapshot

CHI2_3DF_001 = 11.345  # upper 1% point of chi-square with 3 degrees of freedom


def engine_with(plan, backend="mock", rate=1):
    """``plan`` is a list of (g, O, D, amount) submitted in order."""
    engine, states = small_engine(backend, rate)
    gs = sorted({p[0] for p in plan} | {"g1"})
    fund_intermediaries(engine, gs)
    fund(engine, "s0", {o: 10**6 for o in sorted({p[1] for p in plan} | {"O1"})})
    fund(engine, "s1", {d: 0 for d in sorted({p[2] for p in plan} | {"D1"})}, client=False)
    txs = [engine.submit(o, d, g, a, i + 1) for i, (g, o, d, a) in enumerate(plan)]
    return engine, gs, txs


def merged_amounts(engine, entry) -> dict[str, Decimal]:
    ctx = engine.contexts["s0"]
    return {d: to_amount(ctx.decrypt_aggregate(c)[0]) for d, c in entry.payload.items()}


def target_balances(engine) -> dict[str, Decimal]:
    state = engine.states["s1"]
    return {k: decode_amount(state.value(k)) for k in state.keys() if "\x00" not in k}


# ---------------------------------------------------------------- election
def test_election_needs_a_group():
    with pytest.raises(EmptyGroup):
        elect_reuse_intermediary([], 1, 0)


def test_single_member_always_elected():
    assert {elect_reuse_intermediary(["g7"], e, 3) for e in range(50)} == {"g7"}


def test_election_is_deterministic_and_order_free():
    group = ["g3", "g1", "g4", "g2"]
    first = [elect_reuse_intermediary(group, e, 11) for e in range(1, 101)]
    again = [elect_reuse_intermediary(sorted(group), e, 11) for e in range(1, 101)]
    assert first == again


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_election_is_uniform(seed):
    group = ["g1", "g2", "g3", "g4"]
    counts = Counter(elect_reuse_intermediary(group, e, seed) for e in range(1, 101))
    chi2 = sum((counts[g] - 25) ** 2 / 25 for g in group)
    assert chi2 < CHI2_3DF_001


# ---------------------------------------------------------------- summarize / regenerate
def test_worked_example_folds_one_group():
    plan = [("g1", "O1", "D1", 5), ("g1", "O1", "D1", 10), ("g1", "O1", "D2", 3), ("g1", "O1", "D2", 4)]
    engine, gs, txs = engine_with(plan)
    audit = run_ckpoe(engine, "s0", gs, epoch=1, seed=0)
    assert (audit["pool_before"], audit["pool_after"]) == (4, 1)
    (entry,) = engine.pools["s0"].merged.values()
    assert merged_amounts(engine, entry) == {"D1": Decimal(15), "D2": Decimal(7)}
    assert {d: sorted(ids) for d, ids in entry.covered.items()} == {
        "D1": [txs[0].tx_id, txs[1].tx_id], "D2": [txs[2].tx_id, txs[3].tx_id]}
    assert all(t.composite_key == entry.key for t in txs)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["g1", "g2", "g3"]), st.sampled_from(["O1", "O2"]),
                          st.sampled_from(["D1", "D2", "D3"]), st.integers(1, 50)), max_size=25))
def test_summary_matches_group_by_oracle(plan):
    engine, gs, txs = engine_with(plan)
    temp = ckpoe_summarize(engine, "s0", gs, 1)
    oracle_ids: dict = {}
    oracle_sum: dict = {}
    for tx, (g, o, d, a) in zip(txs, plan):
        oracle_ids.setdefault((g, o), {}).setdefault(d, []).append(tx.tx_id)
        per = oracle_sum.setdefault((g, o), {})
        per[d] = per.get(d, Decimal(0)) + a
    got_ids = {(m.intermediary, m.initiator): {d: sorted(ids) for d, ids in m.covered.items()} for m in temp.merged}
    assert got_ids == oracle_ids
    assert {(m.intermediary, m.initiator): merged_amounts(engine, m) for m in temp.merged} == oracle_sum
    assert sorted(temp.replaced) == sorted(t.composite_key for t in txs)


def test_regenerate_after_pool_change_is_stale():
    engine, gs, _ = engine_with([("g1", "O1", "D1", 5), ("g1", "O1", "D1", 6)])
    temp = ckpoe_summarize(engine, "s0", gs, 1)
    engine.submit("O1", "D1", "g1", 1, 99)
    with pytest.raises(StaleSnapshot):
        ckpoe_regenerate(engine, temp)


def test_tampered_summary_fails_validation():
    engine, _, _ = engine_with([("g1", "O1", "D1", 5), ("g2", "O1", "D1", 6)])
    group = ["g1", "g2"]
    temp = ckpoe_summarize(engine, "s0", group, 1, "g1")
    temp.merged[0].covered["D1"].append("forged")
    with pytest.raises(DigestMismatch):
        ckpoe_validate(engine, temp, group, "g1")


def test_validation_accepts_honest_summary():
    engine, _, _ = engine_with([("g1", "O1", "D1", 5), ("g2", "O1", "D1", 6)])
    group = ["g1", "g2"]
    temp = ckpoe_summarize(engine, "s0", group, 1, "g2")
    assert ckpoe_validate(engine, temp, group, "g2") == temp.digest


def test_reuse_is_idempotent():
    engine, gs, _ = engine_with([("g1", "O1", "D1", 5), ("g1", "O1", "D2", 6), ("g1", "O2", "D1", 1)])
    run_ckpoe(engine, "s0", gs, epoch=1, seed=0)
    values = {k: v["value"] for k, v in engine.states["s0"].dump().items()}
    payloads = {k: merged_amounts(engine, m) for k, m in engine.pools["s0"].merged.items()}
    audit = run_ckpoe(engine, "s0", gs, epoch=2, seed=0)
    assert audit["pool_before"] == audit["pool_after"] == 2
    assert {k: v["value"] for k, v in engine.states["s0"].dump().items()} == values
    assert {k: merged_amounts(engine, m) for k, m in engine.pools["s0"].merged.items()} == payloads


def test_empty_pool_is_a_no_op():
    engine, gs, _ = engine_with([])
    before = engine.states["s0"].dump()
    audit = run_ckpoe(engine, "s0", gs, epoch=1, seed=0)
    assert audit["pool_before"] == audit["pool_after"] == 0
    assert engine.states["s0"].dump() == before


def test_new_entries_fold_into_existing_merged_key():
    engine, gs, _ = engine_with([("g1", "O1", "D1", 5), ("g1", "O1", "D1", 6)])
    run_ckpoe(engine, "s0", gs, epoch=1, seed=0)
    fund(engine, "s1", {"D2": 0}, client=False)
    engine.submit("O1", "D1", "g1", 4, 50)
    engine.submit("O1", "D2", "g1", 2, 51)
    run_ckpoe(engine, "s0", gs, epoch=2, seed=0)
    (entry,) = engine.pools["s0"].merged.values()
    assert merged_amounts(engine, entry) == {"D1": Decimal(15), "D2": Decimal(2)}
    engine.settle("g1", "s0")
    assert target_balances(engine)["D1"] == 15 and target_balances(engine)["D2"] == 2


def test_rollback_of_merged_member():
    engine, gs, txs = engine_with([("g1", "O1", "D1", 5), ("g1", "O1", "D1", 6), ("g1", "O1", "D2", 3)])
    run_ckpoe(engine, "s0", gs, epoch=1, seed=0)
    engine.rollback(txs[1])
    (entry,) = engine.pools["s0"].merged.values()
    assert merged_amounts(engine, entry) == {"D1": Decimal(5), "D2": Decimal(3)}
    assert decode_amount(engine.states["s0"].value("O1")) == 10**6 - 8
    engine.rollback(txs[2])
    assert set(entry.covered) == {"D1"}
    engine.settle("g1", "s0")
    assert txs[0].status is CSTxStatus.COMPLETED
    assert target_balances(engine)["D1"] == 5 and target_balances(engine).get("D2", 0) == 0


@pytest.mark.parametrize("backend,rate", [("mock", 1), ("mock", 2), ("approximate", 1.5)])
def test_settlement_with_and_without_reuse_agree(backend, rate):
    rng = random.Random(5)
    plan = [(f"g{rng.randint(1, 3)}", f"O{rng.randint(1, 4)}", f"D{rng.randint(1, 6)}",
             to_amount(round(rng.uniform(0.01, 50), 2))) for _ in range(200)]
    plain, gs, _ = engine_with(plan, backend, rate)
    reused, _, _ = engine_with(plan, backend, rate)
    run_ckpoe(reused, "s0", gs, epoch=1, seed=0)
    for g in gs:
        a = plain.settle(g, "s0")
        b = reused.settle(g, "s0")
        assert sorted(a.tx_ids) == sorted(b.tx_ids)
        if not a.empty:
            assert abs(a.in_amount - b.in_amount) <= Decimal("1e-5") * a.in_amount
    assert target_balances(plain) == target_balances(reused)


def test_reuse_cuts_pool_and_query_cost():
    engine, gs = reuse_pool(0, n=2000, groups=4, initiators=5, receivers=20)
    audit = run_ckpoe(engine, "s0", gs, epoch=1, seed=0)
    assert (audit["pool_before"], audit["pool_after"]) == (2000, 20)
    assert audit["elected"] in gs
