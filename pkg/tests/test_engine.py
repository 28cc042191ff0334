from __future__ import annotations

import json
import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardbench.acceptance import fund, fund_intermediaries, small_engine
from shardbench.amounts import decode_amount, encode_amount, to_amount
from shardbench.engine import CSTxMessage, CSTxStatus
from shardbench.errors import (
    AlreadyCompleted,
    InvalidTransition,
    LiquidityShortfall,
    NegativeAmount,
    UnknownAccount,
)
from shardbench.ledger import Verdict, simulate, validate_and_commit


def bal(engine, shard, account) -> Decimal:
    return decode_amount(engine.states[shard].value(account))


def pair(rate=1, backend="mock", **s0):
    engine, states = small_engine(backend, rate)
    fund_intermediaries(engine, ["g1", "g2", "g3"])
    fund(engine, "s0", s0 or {"O1": 10, "O2": 10})
    fund(engine, "s1", {"D1": 0, "D2": 0, "D3": 0}, client=False)
    return engine, states


# ---------------------------------------------------------------- initiation
def test_initiate_produces_block_cipher_and_no_plaintext_in_message():
    engine, _ = pair()
    tx = engine.initiate_cstx("O1", "D1", "g1", 5, 1)
    assert len(tx.cipher.ciphertext) == 16
    assert tx.status is CSTxStatus.INITIATED
    assert set(json.loads(tx.message.to_json())) == {"initiator", "receiver", "intermediary", "v_cipher_hex", "ts"}


def test_identical_transfers_get_distinct_ciphers():
    engine, _ = pair()
    a = engine.initiate_cstx("O1", "D1", "g1", 5, 1)
    b = engine.initiate_cstx("O1", "D1", "g1", 5, 1)
    assert a.cipher.ciphertext != b.cipher.ciphertext
    assert a.ts < b.ts


def test_non_positive_amount_rejected():
    engine, _ = pair()
    with pytest.raises(NegativeAmount):
        engine.initiate_cstx("O1", "D1", "g1", 0, 1)
    with pytest.raises(NegativeAmount):
        engine.initiate_cstx("O1", "D1", "g1", -3, 1)


def test_unknown_parties_rejected():
    engine, _ = pair()
    with pytest.raises(UnknownAccount):
        engine.initiate_cstx("nobody", "D1", "g1", 1, 1)
    with pytest.raises(UnknownAccount):
        engine.initiate_cstx("O1", "O2", "g1", 1, 1)  # same shard
    with pytest.raises(UnknownAccount):
        engine.initiate_cstx("O1", "D1", "g9", 1, 1)


def test_message_json_round_trip():
    engine, _ = pair()
    tx = engine.initiate_cstx("O1", "D2", "g2", 3.25, 7)
    back = CSTxMessage.from_json(tx.message.to_json())
    assert back == tx.message
    assert engine._open(type(tx)(tx.tx_id, back, "s0", "s1", tx.amount, 0.0)) == Decimal("3.25")


# ---------------------------------------------------------------- pre-processing
def test_transfers_via_one_intermediary_do_not_conflict():
    engine, states = pair(O1=10, O2=10, O3=10, O4=10)
    txs = [engine.initiate_cstx(f"O{i}", "D1", "g1", 2, i) for i in range(1, 5)]
    snap = states["s0"].snapshot()
    endorsed = [simulate(engine.preprocess_intent(tx), snap) for tx in txs]
    assert validate_and_commit([rw for rw, _ in endorsed], states["s0"]) == [Verdict.VALID] * 4
    assert decode_amount(states["s0"].value("g1")) == 10**9


def test_double_spend_later_transfer_fails():
    engine, _ = pair()
    first = engine.submit("O1", "D1", "g1", 7, 1)
    second = engine.submit("O1", "D2", "g2", 7, 2)
    assert first.status is CSTxStatus.POOLED
    assert second.status is CSTxStatus.ROLLED_BACK and second.failure == "INSUFFICIENT_BALANCE"
    assert bal(engine, "s0", "O1") == 3


def test_preprocess_debits_and_writes_sub_broker_key():
    engine, states = pair()
    tx = engine.submit("O1", "D1", "g1", 4, 1)
    assert bal(engine, "s0", "O1") == 6
    assert tx.composite_key in states["s0"]
    assert len(engine.pools["s0"]) == 1


# ---------------------------------------------------------------- settlement
def test_two_entry_settlement_at_unit_rate():
    engine, _ = pair()
    engine.submit("O1", "D1", "g1", 2, 1)
    engine.submit("O2", "D2", "g1", 3, 2)
    result = engine.accumulate("g1", "s0")
    assert engine.synchronize(result) == (Decimal(5), Decimal(5))
    assert bal(engine, "s0", "g1") == 10**9 + 5
    assert len(engine.pools["s0"]) == 0


def test_settlement_applies_rate():
    engine, _ = pair(rate=2)
    engine.submit("O1", "D1", "g1", 2, 1)
    engine.submit("O2", "D2", "g1", 3, 2)
    result = engine.accumulate("g1", "s0")
    assert engine.synchronize(result) == (Decimal(5), Decimal(10))
    assert engine.complete(result) == {"D1": Decimal(4), "D2": Decimal(6)}
    assert bal(engine, "s1", "g1") == 10**9 - 10


def test_single_receiver_gets_exactly_in_amount():
    engine, _ = pair(rate=2)
    engine.submit("O1", "D1", "g1", 2.5, 1)
    engine.submit("O2", "D1", "g1", 1.25, 2)
    result = engine.settle("g1", "s0")
    assert bal(engine, "s1", "D1") == result.in_amount == 2 * result.out_amount == Decimal("7.5")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["O1", "O2"]), st.sampled_from(["D1", "D2", "D3"]),
                          st.decimals(min_value=Decimal("0.01"), max_value=Decimal("4"), places=2)),
                min_size=1, max_size=8))
def test_batch_sum_equals_plaintext_sum(plan):
    engine, _ = pair(rate=3)
    for i, (o, d, a) in enumerate(plan):
        engine.submit(o, d, "g1", a, i + 1)
    pooled = [t for t in engine.txs.values() if t.status is CSTxStatus.POOLED]
    result = engine.accumulate("g1", "s0")
    out, inn = engine.synchronize(result)
    assert out == sum((t.amount for t in pooled), Decimal(0))
    assert inn == out * 3


def test_empty_pool_settles_to_nothing():
    engine, states = pair()
    before = {s: st.dump() for s, st in states.items()}
    result = engine.settle("g1", "s0")
    assert result.empty and result.out_amount == 0
    assert {s: st.dump() for s, st in states.items()} == before


def test_liquidity_shortfall_credits_nobody():
    engine, states = pair()
    states["s1"].seed({"g1": encode_amount(3)})
    tx = engine.submit("O1", "D1", "g1", 10, 1)
    before = states["s1"].dump()
    with pytest.raises(LiquidityShortfall):
        engine.settle("g1", "s0")
    assert states["s1"].dump() == before
    assert tx.status is CSTxStatus.ACCUMULATED and engine.has_pending("g1", "s0")


def test_repeated_shortfall_rolls_back_and_restores_initiator():
    engine, states = pair()
    states["s1"].seed({"g1": encode_amount(3)})
    tx = engine.submit("O1", "D1", "g1", 10, 1)
    for _ in range(engine.max_settle_attempts):
        with pytest.raises(LiquidityShortfall):
            engine.settle("g1", "s0")
    assert tx.status is CSTxStatus.ROLLED_BACK and tx.failure == "LIQUIDITY_SHORTFALL"
    assert bal(engine, "s0", "O1") == 10
    assert len(engine.pools["s0"]) == 0


def test_retry_succeeds_once_liquidity_arrives():
    engine, states = pair()
    states["s1"].seed({"g1": encode_amount(3)})
    tx = engine.submit("O1", "D1", "g1", 10, 1)
    with pytest.raises(LiquidityShortfall):
        engine.settle("g1", "s0")
    states["s1"].seed({"g1": encode_amount(50)})
    engine.settle("g1", "s0")
    assert tx.status is CSTxStatus.COMPLETED
    assert bal(engine, "s1", "D1") == 10


def test_completion_credits_each_receiver():
    engine, _ = pair(rate=2)
    engine.submit("O1", "D1", "g1", 2, 1)
    engine.submit("O2", "D2", "g1", 3, 2)
    engine.settle("g1", "s0")
    assert bal(engine, "s1", "D1") == 4 and bal(engine, "s1", "D2") == 6
    assert bal(engine, "s1", "g1") == 10**9 - 10
    rec = engine.audit_log[-1]
    assert set(rec) == {"intermediary", "period", "out_amount", "in_amount", "rate", "n_txs"}
    assert rec["n_txs"] == 2 and Decimal(rec["in_amount"]) == 10


def test_approximate_completion_matches_plaintext_oracle():
    rng = random.Random(3)
    engine, states = small_engine("approximate", rate=1.5, seed=3)
    fund_intermediaries(engine, ["g1"])
    receivers = [f"d{i:04d}" for i in range(1000)]
    fund(engine, "s0", {"O": 10**6})
    fund(engine, "s1", {d: 0 for d in receivers}, client=False)
    oracle = {}
    for i, d in enumerate(receivers):
        amount = to_amount(round(rng.uniform(0.01, 100), 2))
        engine.submit("O", d, "g1", amount, i + 1)
        oracle[d] = to_amount(amount * Decimal("1.5"))
    result = engine.settle("g1", "s0")
    assert {d: bal(engine, "s1", d) for d in receivers} == oracle
    assert abs(sum(oracle.values()) - result.in_amount) <= engine.residue_bound(result)


def test_settlement_equals_sum_of_individual_transfers():
    # batch path and one-transfer-per-period path leave the same target state
    plans = [("O1", "D1", 1.5), ("O2", "D2", 2.25), ("O1", "D2", 0.75), ("O2", "D1", 3)]
    batched, _ = pair(rate=2)
    single, _ = pair(rate=2)
    for i, (o, d, a) in enumerate(plans):
        batched.submit(o, d, "g1", a, i + 1)
    batched.settle("g1", "s0")
    for i, (o, d, a) in enumerate(plans):
        single.submit(o, d, "g1", a, i + 1)
        single.settle("g1", "s0")
    for d in ("D1", "D2", "g1"):
        assert bal(batched, "s1", d) == bal(single, "s1", d)


# ---------------------------------------------------------------- dependencies and rollback
def chain_engine():
    engine, states = small_engine()
    fund_intermediaries(engine, ["g1", "g2"])
    fund(engine, "s0", {"A": 10, "C": 0, "D": 5})
    fund(engine, "s1", {"B": 0, "E": 0})
    t1 = engine.submit("A", "B", "g1", 10, 1)
    t2 = engine.submit("B", "C", "g1", 10, 2)
    t3 = engine.submit("C", "E", "g2", 10, 3)
    t4 = engine.submit("D", "E", "g2", 5, 4)
    return engine, (t1, t2, t3, t4)


def test_spending_pending_credit_records_dependency():
    engine, (t1, t2, t3, t4) = chain_engine()
    assert [t.status for t in (t1, t2, t3, t4)] == [CSTxStatus.POOLED] * 4
    assert t2.depends_on == (t1.tx_id,) and t3.depends_on == (t2.tx_id,) and t4.depends_on == ()
    assert bal(engine, "s1", "B") == -10  # transient, covered by the pending credit


def test_dependents_wait_for_their_source():
    engine, (t1, t2, t3, t4) = chain_engine()
    engine.settle("g2", "s0")
    assert t3.status is CSTxStatus.POOLED and t4.status is CSTxStatus.COMPLETED
    engine.settle("g1", "s0")
    engine.settle("g1", "s1")
    engine.settle("g2", "s0")
    assert all(t.status is CSTxStatus.COMPLETED for t in (t1, t2, t3, t4))
    assert bal(engine, "s1", "B") == 0 and bal(engine, "s1", "E") == 15


def test_rollback_cascades_to_dependents_only():
    engine, (t1, t2, t3, t4) = chain_engine()
    undone = engine.rollback(t1, 1.0)
    assert undone == [t1.tx_id, t2.tx_id, t3.tx_id]
    assert t4.status is CSTxStatus.POOLED
    assert bal(engine, "s0", "A") == 10 and bal(engine, "s1", "B") == 0 and bal(engine, "s0", "C") == 0
    assert t2.failure == f"DEPENDS_ON:{t1.tx_id}"
    engine.settle("g2", "s0")
    assert t4.status is CSTxStatus.COMPLETED


def test_lone_rollback_restores_balance_and_pool():
    engine, states = pair()
    before = states["s0"].value("O1")
    tx = engine.submit("O1", "D1", "g1", 4, 1)
    assert engine.rollback(tx) == [tx.tx_id]
    assert states["s0"].value("O1") == before
    assert tx.composite_key not in states["s0"]
    assert engine.rollback(tx) == []


def test_rollback_of_completed_fails():
    engine, _ = pair()
    tx = engine.submit("O1", "D1", "g1", 4, 1)
    engine.settle("g1", "s0")
    with pytest.raises(AlreadyCompleted):
        engine.rollback(tx)


def test_illegal_transition_rejected():
    engine, _ = pair()
    tx = engine.initiate_cstx("O1", "D1", "g1", 1, 1)
    with pytest.raises(InvalidTransition):
        tx.move(CSTxStatus.COMPLETED, 0.0)
    engine.preprocess(tx)
    with pytest.raises(InvalidTransition):
        tx.move(CSTxStatus.INITIATED, 0.0)


def test_rollback_matches_reexecution_without_the_transfer():
    plans = [("O1", "D1", "g1", 3), ("O2", "D2", "g2", 4), ("O1", "D3", "g1", 2), ("O2", "D1", "g1", 1)]
    full, _ = pair()
    txs = [full.submit(o, d, g, a, i + 1) for i, (o, d, g, a) in enumerate(plans)]
    full.rollback(txs[2])
    for g in ("g1", "g2"):
        full.settle(g, "s0")
    oracle, _ = pair()
    for i, (o, d, g, a) in enumerate(plans):
        if i != 2:
            oracle.submit(o, d, g, a, i + 1)
    for g in ("g1", "g2"):
        oracle.settle(g, "s0")
    for shard in ("s0", "s1"):
        for acct in ("O1", "O2", "D1", "D2", "D3", "g1", "g2"):
            if acct in full.states[shard]:
                assert bal(full, shard, acct) == bal(oracle, shard, acct)


# ---------------------------------------------------------------- invariants
ops = st.lists(
    st.one_of(
        st.tuples(st.just("tx"), st.integers(0, 3), st.integers(0, 3), st.integers(0, 2), st.integers(1, 40)),
        st.tuples(st.just("settle"), st.integers(0, 2), st.integers(0, 1)),
        st.tuples(st.just("rollback"), st.integers(0, 50)),
        st.tuples(st.just("drain"), st.integers(0, 2)),
    ),
    max_size=40,
)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_rate_adjusted_total_is_conserved(plan):
    engine, states = small_engine(rate=2)
    gs = ["g0", "g1", "g2"]
    fund_intermediaries(engine, gs, 500)
    left = [f"a{i}" for i in range(4)]
    right = [f"b{i}" for i in range(4)]
    fund(engine, "s0", {a: 30 for a in left})
    fund(engine, "s1", {b: 30 for b in right})
    start = engine.rate_adjusted_total("s0")
    txs = []
    for step, op in enumerate(plan):
        if op[0] == "tx":
            _, i, j, g, amount = op
            src, dst = (left[i], right[j]) if step % 2 else (right[j], left[i])
            txs.append(engine.submit(src, dst, gs[g], amount, step + 1))
        elif op[0] == "settle":
            try:
                engine.settle(gs[op[1]], ("s0", "s1")[op[2]])
            except LiquidityShortfall:
                pass
        elif op[0] == "rollback" and txs:
            tx = txs[op[1] % len(txs)]
            if not tx.status.terminal:
                engine.rollback(tx)
        elif op[0] == "drain":
            states["s1"].seed({gs[op[1]]: encode_amount(0)})  # fault: intermediary loses target funds
            start = engine.rate_adjusted_total("s0")
        assert engine.rate_adjusted_total("s0") == start


def test_every_transfer_terminates_with_one_live_intermediary():
    engine, states = small_engine()
    gs = ["g1", "g2", "g3", "g4"]
    fund_intermediaries(engine, gs)
    states["s1"].seed({g: encode_amount(0) for g in gs[1:]})
    fund(engine, "s0", {f"o{i}": 100 for i in range(8)})
    fund(engine, "s1", {f"d{i}": 0 for i in range(8)}, client=False)
    rng = random.Random(0)
    for i in range(40):
        engine.submit(f"o{i % 8}", f"d{rng.randrange(8)}", gs[i % 4], rng.randint(1, 5), i + 1)
    for _ in range(engine.max_settle_attempts):
        for g in gs:
            try:
                engine.settle(g, "s0")
            except LiquidityShortfall:
                pass
    assert all(t.status.terminal for t in engine.txs.values())
    assert {t.status for t in engine.txs.values() if t.intermediary == "g1"} == {CSTxStatus.COMPLETED}
    assert {t.failure for t in engine.txs.values() if t.intermediary != "g1"} == {"LIQUIDITY_SHORTFALL"}
    assert sum(bal(engine, "s0", f"o{i}") for i in range(8)) + sum(bal(engine, "s1", f"d{i}") for i in range(8)) == 800


def test_audit_export_is_json_lines(tmp_path):
    engine, _ = pair()
    engine.submit("O1", "D1", "g1", 2, 1)
    engine.settle("g1", "s0")
    path = tmp_path / "audit.jsonl"
    engine.export_audit(str(path))
    lines = path.read_text().splitlines()
    assert [json.loads(x)["intermediary"] for x in lines] == ["g1"]
