"""Acceptance checks, shared by ``shardbench verify`` and the test suite.

Each ``criterion_<n>`` returns a :class:`CriterionResult`; the time limit
is part of the pass condition.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable

from .amounts import decode_amount, encode_amount, to_amount
from .baselines import BaselineTx, vanilla_block
from .crypto import HEParams, KeyStore, Role, TaintMonitor, make_backend
from .crypto.keystore import sensitive_key_ids
from .engine import CSTxStatus, HiCoCSEngine, run_ckpoe
from .errors import IntentFailed
from .ledger import ReadWriteSet, Transfer, Verdict, VersionedWorldState, simulate, simulate_tx, validate_and_commit
from .sim import ExperimentConfig, MetricsReport, simulate_experiment
from .sim.metrics import render_csv
from .sim.sweep import ACTIVE_SKEWNESS, run_sweep

SCHEMES = ("hicocs", "vanilla", "occ", "twopl")
BASELINES = ("vanilla", "occ", "twopl")


@dataclass
class CriterionResult:
    number: int
    title: str
    ok: bool
    detail: str
    elapsed: float
    limit: float | None

    @property
    def passed(self) -> bool:
        return self.ok and (self.limit is None or self.elapsed <= self.limit)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.limit:.0f}s" if self.limit is not None else ""
        return f"[{status}] {self.number:2d}. {self.title}: {self.detail} ({self.elapsed:.1f}s{budget})"


def _timed(number: int, title: str, limit: float | None, body: Callable[[], tuple[bool, str]]) -> CriterionResult:
    start = time.perf_counter()
    ok, detail = body()
    return CriterionResult(number, title, ok, detail, time.perf_counter() - start, limit)


# ------------------------------------------------------------------ fixtures
def small_engine(backend: str = "mock", rate=1, seed: int = 0, monitor: TaintMonitor | None = None):
    """Two paired shards s0/s1 with no accounts yet."""
    states = {"s0": VersionedWorldState("s0"), "s1": VersionedWorldState("s1")}
    he = make_backend(backend, HEParams(), seed=seed)
    engine = HiCoCSEngine(states, [("s0", "s1")], he, KeyStore(), rate=rate, monitor=monitor, seed=seed)
    return engine, states


def fund(engine: HiCoCSEngine, shard: str, accounts: dict[str, Decimal | float | int], client: bool = True) -> None:
    engine.states[shard].seed({a: encode_amount(v) for a, v in accounts.items()})
    for a in accounts:
        if client:
            engine.register_client(a, shard)
        else:
            engine.register_account(a, shard)


def fund_intermediaries(engine: HiCoCSEngine, names, amount=10**9) -> None:
    for state in engine.states.values():
        state.seed({g: encode_amount(amount) for g in names})


def sweep_reports(seed: int = 0) -> list[MetricsReport]:
    """The active skewness sweep at 40 MB blocks for every scheme."""
    return run_sweep(ExperimentConfig(rng_seed=seed, block_size_limit=40.0), "skewness", ACTIVE_SKEWNESS, SCHEMES)


def _by(reports: list[MetricsReport]) -> dict[tuple[str, float], MetricsReport]:
    return {(r.scheme, r.f): r for r in reports}


# ------------------------------------------------------------------ 1
def _oracle_block(values: dict[str, tuple[bytes | None, int]], rwsets: list[ReadWriteSet]) -> list[Verdict]:
    """Serial replay on a plain dict: valid iff every observed version is current."""
    out = []
    for rw in rwsets:
        if all((values[k][1] if k in values else None) == v for k, v in rw.reads):
            for k, value in rw.writes:
                values[k] = (value, values[k][1] + 1 if k in values else 0)
            out.append(Verdict.VALID)
        else:
            out.append(Verdict.MVCC_CONFLICT)
    return out


def criterion_1(blocks: int = 1000, seed: int = 0) -> CriterionResult:
    def body():
        rng = random.Random(seed)
        state = VersionedWorldState("s")
        accounts = [f"a{i:02d}" for i in range(24)]
        state.seed({a: encode_amount(100) for a in accounts})
        model = {a: (encode_amount(100), 0) for a in accounts}
        mismatches = total = 0
        for _ in range(blocks):
            snaps = [state.snapshot()]
            rwsets = []
            for _ in range(rng.randint(1, 100)):
                if rng.random() < 0.3:
                    state.next_height()  # endorsements observe a spread of heights
                    snaps.append(state.snapshot())
                snap = rng.choice(snaps)
                src, dst = rng.sample(accounts, 2)
                try:
                    rwsets.append(simulate_tx(Transfer(src, dst, rng.randint(1, 30)), snap))
                except IntentFailed:
                    continue
            want = _oracle_block(model, rwsets)
            got = validate_and_commit(rwsets, state)
            total += len(got)
            mismatches += sum(a != b for a, b in zip(got, want))
        dump = state.dump()
        same_state = all(dump[k]["version"] == model[k][1] and state.value(k) == model[k][0] for k in model)
        ok = mismatches == 0 and same_state and total > 0
        return ok, f"{total} txs over {blocks} blocks, {mismatches} verdict mismatches, final state match={same_state}"

    return _timed(1, "MVCC oracle equivalence", 30, body)


# ------------------------------------------------------------------ 2
def criterion_2(k: int = 16) -> CriterionResult:
    def body():
        vstates = {"s0": VersionedWorldState("s0"), "s1": VersionedWorldState("s1")}
        for st in vstates.values():
            st.seed({"g1": encode_amount(10**6)})
        vstates["s0"].seed({f"o{i}": encode_amount(100) for i in range(k)})
        txs = [BaselineTx(f"v{i}", f"o{i}", f"d{i}", "g1", 5, "s0", "s1") for i in range(k)]
        vanilla_valid = sum(v is Verdict.VALID for v in vanilla_block(vstates, txs))

        engine, states = small_engine()
        fund_intermediaries(engine, ["g1"])
        fund(engine, "s0", {f"o{i}": 100 for i in range(k)})
        fund(engine, "s1", {f"d{i}": 0 for i in range(k)}, client=False)
        cstxs = [engine.initiate_cstx(f"o{i}", f"d{i}", "g1", 5, i) for i in range(k)]
        snap = states["s0"].snapshot()
        endorsed = [simulate(engine.preprocess_intent(tx), snap) for tx in cstxs]
        verdicts = validate_and_commit([rw for rw, _ in endorsed], states["s0"])
        hicocs_valid = sum(v is Verdict.VALID for v in verdicts)
        touched_g = sum("g1" in rw.read_keys() or "g1" in rw.write_keys() for rw, _ in endorsed)
        ok = vanilla_valid == 1 and hicocs_valid == k and touched_g == 0
        return ok, (f"vanilla {vanilla_valid}/{k} VALID, hicocs {hicocs_valid}/{k} VALID, "
                    f"{touched_g} accesses to the intermediary key")

    return _timed(2, "Contention construction", 5, body)


# ------------------------------------------------------------------ 3, 4
def criterion_3(reports: list[MetricsReport] | None = None, elapsed: float = 0.0) -> CriterionResult:
    def body():
        by = _by(reports if reports is not None else sweep_reports())
        fs = list(ACTIVE_SKEWNESS)
        hic = [by["hicocs", f].tsr for f in fs]
        van = [by["vanilla", f].tsr for f in fs]
        decreasing = all(a > b for a, b in zip(van, van[1:]))
        ratio = hic[-1] / van[-1] if van[-1] else float("inf")
        ok = min(hic) >= 95.0 and decreasing and ratio >= 2.0
        return ok, (f"hicocs TSR {_fmt(hic)}, vanilla TSR {_fmt(van)}, "
                    f"ratio at f={fs[-1]}: {ratio:.2f}")

    res = _timed(3, "TSR trend", 300, body)
    res.elapsed += elapsed
    return res


def criterion_4(reports: list[MetricsReport] | None = None, elapsed: float = 0.0) -> CriterionResult:
    def body():
        by = _by(reports if reports is not None else sweep_reports())
        fs = list(ACTIVE_SKEWNESS)
        hic = [by["hicocs", f].tps for f in fs]
        best = [max(by[s, f].tps for s in BASELINES) for f in fs]
        ratio = (sum(hic) / len(hic)) / (sum(best) / len(best))
        return ratio >= 2.0, f"mean TPS hicocs {sum(hic) / len(hic):.1f} vs best baseline {sum(best) / len(best):.1f}, ratio {ratio:.2f}"

    res = _timed(4, "Throughput ordering", 300, body)
    res.elapsed += elapsed
    return res


def _fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.1f}" for x in xs) + "]"


# ------------------------------------------------------------------ 5
def criterion_5(n: int = 10_000, seed: int = 0) -> CriterionResult:
    def body():
        rng = random.Random(seed)
        amounts = [to_amount(round(rng.uniform(0.01, 100.0), 2)) for _ in range(n)]
        exact = sum(amounts, Decimal(0))
        errors = {}
        for name in ("approximate", "mock"):
            be = make_backend(name, HEParams(), seed=seed)
            keys = be.keygen("acc")
            c = be.inner_sum(be.encrypt_vector(keys.pk, amounts), n)
            got = Decimal(str(be.decrypt_decode(keys.sk, c, 1)[0]))
            errors[name] = abs(got - exact) / exact
        ok = errors["approximate"] <= Decimal("1e-5") and errors["mock"] == 0
        return ok, f"relative error approximate {float(errors['approximate']):.2e}, mock {float(errors['mock']):.0e}"

    return _timed(5, "HE accuracy", 60, body)


# ------------------------------------------------------------------ 6
def fault_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        shards=2, concurrent_clients=20, intermediary_group_size=5, tx_count=200, skewness=40,
        rate=2.0, client_balance=300.0, overdraw_fraction=0.05, liquidity_fault_fraction=0.4,
        max_settle_attempts=2, rng_seed=seed,
    )


def criterion_6(runs: int = 50) -> CriterionResult:
    def body():
        bad_runs = []
        kinds: dict[str, int] = {}
        for seed in range(runs):
            art = simulate_experiment(fault_config(seed), check_conservation=True)
            statuses = {tx.status for tx in art.engine.txs.values()}
            terminal = statuses <= {CSTxStatus.COMPLETED, CSTxStatus.ROLLED_BACK}
            totals = {tuple(sorted(t.items())) for _, t in art.conservation}
            for reason, count in art.report.failures.items():
                kinds[reason] = kinds.get(reason, 0) + count
            if not terminal or len(totals) != 1 or not art.collector.all_terminal:
                bad_runs.append(seed)
        injected = kinds.get("INSUFFICIENT_BALANCE", 0) > 0 and kinds.get("LIQUIDITY_SHORTFALL", 0) > 0
        ok = not bad_runs and injected
        return ok, (f"{runs - len(bad_runs)}/{runs} runs terminal and conserved; "
                    f"failures seen {dict(sorted(kinds.items()))}")

    return _timed(6, "Conservation and eventual atomicity", 180, body)


# ------------------------------------------------------------------ 7
def double_spend_scenario() -> dict:
    """O holds 3 plus a pending 7 from X, then spends 7 twice in one block."""
    engine, states = small_engine()
    fund_intermediaries(engine, ["g1", "g2", "g3"])
    fund(engine, "s1", {"X": 50})
    fund(engine, "s0", {"O": 3, "Y": 20, "Z": 20})
    fund(engine, "s1", {"D1": 0, "D2": 0, "DY": 0, "DZ": 0}, client=False)

    credit = engine.submit("X", "O", "g3", 7, 1)
    spend = [
        engine.initiate_cstx("O", "D1", "g1", 7, 2),
        engine.initiate_cstx("O", "D2", "g2", 7, 3),
        engine.initiate_cstx("Y", "DY", "g1", 4, 4),
        engine.initiate_cstx("Z", "DZ", "g2", 5, 5),
    ]
    snap = states["s0"].snapshot()
    endorsed = [simulate(engine.preprocess_intent(tx), snap) for tx in spend]
    verdicts = validate_and_commit([rw for rw, _ in endorsed], states["s0"])
    for tx, (rw, deps), verdict in zip(spend, endorsed, verdicts):
        if verdict is Verdict.VALID:
            engine.admit(tx, deps, 0.0)
        else:
            engine.preprocess(tx, 0.0)  # re-endorse on fresh state, as a client retry would
    for g, shard in (("g3", "s1"), ("g1", "s0"), ("g2", "s0")):
        engine.settle(g, shard, 1.0)
    return {"engine": engine, "credit": credit, "spend": spend, "verdicts": verdicts}


def dependents_closure(engine: HiCoCSEngine, tx_id: str) -> set[str]:
    out, stack = set(), [tx_id]
    while stack:
        for d in engine.dependents.get(stack.pop(), []):
            if d not in out:
                out.add(d)
                stack.append(d)
    return out


def criterion_7() -> CriterionResult:
    def body():
        sc = double_spend_scenario()
        engine = sc["engine"]
        o1, o2, y, z = sc["spend"]
        completed = [t for t in (o1, o2) if t.status is CSTxStatus.COMPLETED]
        failed = [t for t in (o1, o2) if t.status is CSTxStatus.ROLLED_BACK]
        rolled = {t.tx_id for t in engine.txs.values() if t.status is CSTxStatus.ROLLED_BACK}
        expected = set()
        for t in failed:
            expected |= {t.tx_id} | dependents_closure(engine, t.tx_id)
        others_ok = all(t.status is CSTxStatus.COMPLETED for t in (y, z, sc["credit"]))
        balance = engine.shard_balance("s0")
        o_final = decode_amount(engine.states["s0"].value("O"))
        ok = len(completed) == 1 and len(failed) == 1 and rolled == expected and others_ok and o_final >= 0
        return ok, (f"{len(completed)} of the conflicting pair completed, rolled back {sorted(rolled)}, "
                    f"co-batched unaffected={others_ok}, initiator final balance {o_final}, shard total {balance}")

    return _timed(7, "Double spend", 5, body)


# ------------------------------------------------------------------ 8
def reuse_pool(seed: int, n: int = 10_000, groups: int = 20, initiators: int = 50, receivers: int = 200):
    """Pool of ``n`` raw entries over ``groups * initiators`` distinct (g, O) pairs."""
    engine, states = small_engine(seed=seed)
    gs = [f"g{j:02d}" for j in range(groups)]
    os_ = [f"o{i:03d}" for i in range(initiators)]
    fund_intermediaries(engine, gs)
    fund(engine, "s0", {o: 10**7 for o in os_})
    fund(engine, "s1", {f"d{i:03d}": 0 for i in range(receivers)}, client=False)
    rng = random.Random(seed)
    pairs = [(g, o) for g in gs for o in os_]
    plan = pairs * (n // len(pairs)) + rng.sample(pairs, n % len(pairs))
    rng.shuffle(plan)
    for i, (g, o) in enumerate(plan):
        amount = to_amount(round(rng.uniform(0.01, 100.0), 2))
        engine.submit(o, f"d{rng.randrange(receivers):03d}", g, amount, i + 1)
    return engine, gs


def _settle_all(engine: HiCoCSEngine, gs) -> tuple[dict, int]:
    state = engine.states["s0"]
    before = state.entries_scanned
    for g in gs:
        engine.settle(g, "s0", 1.0)
    return engine.states["s1"].dump(), state.entries_scanned - before


def criterion_8(seeds=(0, 1), n: int = 10_000) -> CriterionResult:
    def body():
        notes, ok = [], True
        for seed in seeds:
            plain, gs = reuse_pool(seed, n)
            reused, _ = reuse_pool(seed, n)
            bytes_before = reused.pools["s0"].nbytes
            audit = run_ckpoe(reused, "s0", gs, epoch=1, seed=seed)
            bytes_after = reused.pools["s0"].nbytes
            dump_plain, cost_plain = _settle_all(plain, gs)
            dump_reused, cost_reused = _settle_all(reused, gs)
            same = dump_plain == dump_reused
            ok &= (same and audit["pool_before"] == n and audit["pool_after"] == 1000
                   and cost_reused < cost_plain and bytes_after < bytes_before)
            notes.append(f"seed {seed}: pool {audit['pool_before']}->{audit['pool_after']}, "
                         f"settlement equal={same}, query cost {cost_plain}->{cost_reused}, "
                         f"pool bytes {bytes_before}->{bytes_after}")
        return ok, "; ".join(notes)

    return _timed(8, "CKPoE equivalence and reduction", 120, body)


# ------------------------------------------------------------------ 9
def criterion_9(cfg: ExperimentConfig | None = None) -> CriterionResult:
    def body():
        run_cfg = cfg or ExperimentConfig(he_backend="approximate", skewness=50)
        art = simulate_experiment(run_cfg)
        monitor, keystore = art.monitor, art.keystore
        inter = keystore.reads_by_role(Role.INTERMEDIARY, granted_only=False)
        leaked = sensitive_key_ids(keystore.reads_by_role(Role.INTERMEDIARY))
        conversion_reads = len(keystore.reads_by_role(Role.CONVERSION))
        ok = (not monitor.violations and monitor.observations > 0 and not inter and not leaked
              and art.report.completed > 0 and conversion_reads > 0)
        return ok, (f"{monitor.observations} intermediary-path observations, {len(monitor.violations)} tainted; "
                    f"{len(inter)} intermediary key reads, {conversion_reads} conversion-context reads")

    return _timed(9, "Confidentiality boundary", 120, body)


# ------------------------------------------------------------------ 10
def criterion_10(reports: list[MetricsReport] | None = None, seed: int = 0) -> CriterionResult:
    def body():
        first = render_csv(reports if reports is not None else sweep_reports(seed))
        second = render_csv(sweep_reports(seed))
        return first == second, f"{len(first)} CSV bytes, identical={first == second}"

    return _timed(10, "Determinism", None, body)


@dataclass
class SuiteRun:
    results: list[CriterionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def run_all(echo: Callable[[str], None] | None = None) -> SuiteRun:
    suite = SuiteRun()

    def record(res: CriterionResult) -> None:
        suite.results.append(res)
        if echo is not None:
            echo(res.line())

    record(criterion_1())
    record(criterion_2())
    start = time.perf_counter()
    reports = sweep_reports()
    sweep_time = time.perf_counter() - start
    record(criterion_3(reports, sweep_time))
    record(criterion_4(reports, sweep_time))
    record(criterion_5())
    record(criterion_6())
    record(criterion_7())
    record(criterion_8())
    record(criterion_9())
    record(criterion_10(reports))
    return suite


__all__ = [
    "CriterionResult", "SuiteRun", "criterion_1", "criterion_2", "criterion_3", "criterion_4",
    "criterion_5", "criterion_6", "criterion_7", "criterion_8", "criterion_9", "criterion_10",
    "double_spend_scenario", "fault_config", "reuse_pool", "run_all", "small_engine", "sweep_reports",
]
