"""End-to-end runs of one scheme on the simulated topology."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from typing import Any, Callable

from ..amounts import EXACT, decode_amount, encode_amount, to_amount
from ..baselines import BaselineTx, RetryPolicy, TwoPLCoordinator, occ_execute, occ_validate_and_commit
from ..baselines.common import refund_leg, source_leg, target_leg
from ..crypto import HEParams, KeyStore, TaintMonitor, make_backend
from ..engine import CSTxStatus, HiCoCSEngine, run_ckpoe
from ..errors import IntentFailed, LiquidityShortfall
from ..ledger import MB, EndorsedTx, Verdict, VersionedWorldState, simulate, simulate_tx, validate_and_commit
from ..ledger.compositekey import SEP
from .config import ExperimentConfig
from .des import EventLoop, NetworkModel
from .metrics import Collector, MetricsReport, build_report
from .node import ShardNode
from .workload import Topology, WorkItem, generate_workload

LOW_LIQUIDITY = 50.0  # target-side funds of an intermediary hit by a liquidity fault


@dataclass
class RunArtifacts:
    """Everything a run leaves behind, for tests that look past the report."""

    report: MetricsReport
    states: dict[str, VersionedWorldState]
    collector: Collector
    topology: Topology
    engine: HiCoCSEngine | None = None
    keystore: KeyStore | None = None
    monitor: TaintMonitor | None = None
    conservation: list[tuple[float, dict[str, Decimal]]] = field(default_factory=list)
    reuse_audit: list[dict] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)


class Driver:
    scheme = ""

    def __init__(self, cfg: ExperimentConfig, check_conservation: bool = False):
        self.cfg = cfg
        self.topo = Topology.from_config(cfg)
        self.loop = EventLoop()
        self.net = NetworkModel(cfg.net_delay_ms, cfg.net_jitter_ms, random.Random(f"net:{cfg.rng_seed}"))
        self.collector = Collector()
        self.policy = RetryPolicy(cfg.max_retries, cfg.backoff)
        self.workload = generate_workload(cfg, self.topo)
        self.states = {s: VersionedWorldState(s) for s in self.topo.shards}
        self.rate = to_amount(cfg.rate)
        self.check_conservation = check_conservation
        self.conservation: list[tuple[float, dict[str, Decimal]]] = []
        self._seed_balances()

    def rate_from(self, source: str) -> Decimal:
        """Exchange rate for transfers leaving ``source``."""
        if self.topo.shards.index(source) % 2 == 0:
            return self.rate
        with localcontext(EXACT):
            return Decimal(1) / self.rate

    def _seed_balances(self) -> None:
        cfg, topo = self.cfg, self.topo
        rng = random.Random(f"faults:{cfg.rng_seed}")
        weak = {g for g in topo.intermediaries if rng.random() < cfg.liquidity_fault_fraction}
        self.weak_intermediaries = sorted(weak)
        for i, c in enumerate(topo.clients):
            self.states[topo.home(i)].seed({c: encode_amount(cfg.client_balance)})
        for s in topo.shards:
            self.states[s].seed({
                g: encode_amount(LOW_LIQUIDITY if g in weak else cfg.intermediary_balance)
                for g in topo.intermediaries
            })

    def totals(self) -> dict[str, Decimal]:
        """Rate-adjusted value per pair, in units of the pair's first shard."""
        raise NotImplementedError

    def sample_conservation(self) -> None:
        if self.check_conservation:
            self.conservation.append((self.loop.now, self.totals()))

    def run(self) -> RunArtifacts:
        self.sample_conservation()
        for item in self.workload:
            self.loop.at(item.send_ms, lambda item=item: self.initiate(item))
        self.start_background()
        self.loop.run(stop=self.finished)
        self.sample_conservation()
        report = build_report(
            self.collector, self.scheme, self.cfg.skewness, self.cfg.block_size_limit,
            self.cfg.warmup_fraction, self.cpu_mem_proxy(), self.cfg.rng_seed,
        )
        return RunArtifacts(report, self.states, self.collector, self.topo, conservation=self.conservation)

    def finished(self) -> bool:
        return len(self.collector.records) == len(self.workload) and self.collector.all_terminal

    def start_background(self) -> None:
        pass

    def initiate(self, item: WorkItem) -> None:
        raise NotImplementedError

    def cpu_mem_proxy(self) -> dict[str, int]:
        return {"entries_scanned": sum(s.entries_scanned for s in self.states.values())}

    def make_node(self, shard: str, on_commit, validator=None, state=None) -> ShardNode:
        cfg = self.cfg
        return ShardNode(
            self.loop, shard, state if state is not None else self.states.get(shard),
            cfg.block_size_limit, cfg.batch_timeout, cfg.block_commit_ms, cfg.tx_validate_ms,
            on_commit, validator,
        )

    def _balances(self, shard: str) -> Decimal:
        st = self.states[shard]
        return sum((decode_amount(st.value(k)) for k in st.keys() if SEP not in k), Decimal(0))

    def _pair_totals(self) -> dict[str, Decimal]:
        with localcontext(EXACT):
            return {a: self._balances(a) + self._balances(b) / self.rate for a, b in self.topo.pairs}


# ---------------------------------------------------------------- HiCoCS
class HiCoCSDriver(Driver):
    scheme = "hicocs"

    def __init__(self, cfg: ExperimentConfig, check_conservation: bool = False):
        super().__init__(cfg, check_conservation)
        params = HEParams(slots=cfg.slots, scale=cfg.delta)
        backend = make_backend(cfg.he_backend, params, seed=cfg.rng_seed)
        self.keystore = KeyStore(clock=lambda: self.loop.now)
        self.monitor = TaintMonitor()
        self.nodes = {s: self.make_node(s, self.on_commit) for s in self.topo.shards}
        self.engine = HiCoCSEngine(
            self.states, self.topo.pairs, backend, self.keystore, rate=cfg.rate, delta=cfg.delta,
            monitor=self.monitor, max_settle_attempts=cfg.max_settle_attempts, seed=cfg.rng_seed,
            commit_hook=self.on_system_commit,
        )
        for i, c in enumerate(self.topo.clients):
            self.engine.register_client(c, self.topo.home(i))
        for i, r in enumerate(self.topo.receivers):
            self.engine.register_account(r, self.topo.home(i))
        self.tx_of: dict[str, Any] = {}
        self.reuse_audit: list[dict] = []
        self.periods = 0
        self.peak_pool_bytes = 0
        self._early: set[tuple[str, str]] = set()

    def on_system_commit(self, shard: str, rwset) -> None:
        # a system transaction validates like one client transaction per block's worth of writes
        blocks = len(rwset.writes) / self.cfg.txs_per_block
        self.nodes[shard].charge(self.cfg.tx_validate_ms * max(1.0, blocks))

    def initiate(self, item: WorkItem) -> None:
        tx = self.engine.initiate_cstx(
            item.initiator, item.receiver, item.intermediary, item.amount, int(round(self.loop.now * 1e6))
        )
        self.tx_of[tx.tx_id] = tx
        self.collector.start(tx.tx_id, item.seq, self.loop.now)
        self.endorse(tx)

    def endorse(self, tx) -> None:
        state = self.states[tx.source]
        try:
            rwset, deps = simulate(self.engine.preprocess_intent(tx), state.snapshot())
        except IntentFailed as exc:
            self._reject(tx, exc.reason)
            return
        etx = EndorsedTx(tx.tx_id, rwset, int(self.cfg.tx_size_mb * MB), payload=(tx, deps))
        node = self.nodes[tx.source]

        def arrive():
            etx.arrival = self.loop.now
            node.deliver(etx)

        self.loop.after(2 * self.net.sample(), arrive)

    def _reject(self, tx, reason: str) -> None:
        self.engine.reject(tx, reason, self.loop.now)
        self.tx_of.pop(tx.tx_id, None)
        self.collector.finish(tx.tx_id, False, self.loop.now, reason)

    def on_commit(self, block, verdicts) -> None:
        for etx, verdict in zip(block.txs, verdicts):
            tx, deps = etx.payload
            if verdict is Verdict.VALID:
                self.engine.admit(tx, deps, self.loop.now)
                key = (tx.intermediary, tx.source)
                pool = self.engine.pools[tx.source]
                if pool.count_for(tx.intermediary) >= self.cfg.pool_cap and key not in self._early:
                    self._early.add(key)
                    self.loop.after(0, lambda g=tx.intermediary, s=tx.source: self.settle(g, s, early=True))
                continue
            self.collector.conflict(tx.tx_id)
            if self.policy.allows(self.collector.records[tx.tx_id].retries):
                self.collector.retry(tx.tx_id)
                self.loop.after(self.policy.backoff_ms, lambda tx=tx: self.endorse(tx))
            else:
                self._reject(tx, "MVCC_CONFLICT")

    def start_background(self) -> None:
        n = len(self.topo.intermediaries)
        for source in sorted(self.engine.directions):
            for j, g in enumerate(self.topo.intermediaries):
                first = self.cfg.t_settle * (1 + j / n)
                self.loop.at(first, lambda g=g, s=source: self.tick(g, s))
            first_reuse = (self.cfg.reuse_every_k + 0.5) * self.cfg.t_settle
            self.loop.at(first_reuse, lambda s=source: self.reuse(s, 1))
        self.loop.at(0, self.sample_pools)

    def tick(self, g: str, source: str) -> None:
        self.settle(g, source)
        if not self.finished():
            self.loop.after(self.cfg.t_settle, lambda: self.tick(g, source))

    def settle(self, g: str, source: str, early: bool = False) -> None:
        if early:
            self._early.discard((g, source))
        state = self.states[source]
        scanned = state.entries_scanned
        now = self.loop.now + 2 * self.net.sample()
        try:
            result = self.engine.settle(g, source, now)
        except LiquidityShortfall:
            self.collector.query_time_series.append((self.loop.now, state.entries_scanned - scanned))
            self._record_terminal(list(self.tx_of))
            return
        self.collector.query_time_series.append((self.loop.now, state.entries_scanned - scanned))
        if not result.empty:
            self._record_terminal(result.tx_ids)
            self.sample_conservation()

    def _record_terminal(self, tx_ids) -> None:
        for tx_id in tx_ids:
            tx = self.tx_of.get(tx_id)
            if tx is None or not tx.status.terminal:
                continue
            del self.tx_of[tx_id]
            ok = tx.status is CSTxStatus.COMPLETED
            self.collector.finish(tx_id, ok, tx.terminal_at, None if ok else tx.failure)

    def reuse(self, source: str, epoch: int) -> None:
        if len(self.engine.pools[source]):
            audit = run_ckpoe(self.engine, source, self.topo.intermediaries, epoch, self.cfg.rng_seed)
            audit["shard"] = source
            self.reuse_audit.append(audit)
        if not self.finished():
            self.loop.after(self.cfg.reuse_every_k * self.cfg.t_settle, lambda: self.reuse(source, epoch + 1))

    def sample_pools(self) -> None:
        total = sum(len(p) for p in self.engine.pools.values())
        size = sum(p.nbytes for p in self.engine.pools.values())
        self.peak_pool_bytes = max(self.peak_pool_bytes, size)
        self.collector.pool_size_series.append((self.loop.now, total))
        if not self.finished():
            self.loop.after(self.cfg.t_settle / 4, self.sample_pools)

    def totals(self) -> dict[str, Decimal]:
        return {a: self.engine.rate_adjusted_total(a) for a, _b in self.topo.pairs}

    def cpu_mem_proxy(self) -> dict[str, int]:
        out = super().cpu_mem_proxy()
        out["cipher_ops"] = self.engine.backend.cipher_ops
        out["peak_pool_bytes"] = self.peak_pool_bytes
        out["system_txs"] = self.engine.system_txs
        return out

    def run(self) -> RunArtifacts:
        art = super().run()
        art.engine, art.keystore, art.monitor = self.engine, self.keystore, self.monitor
        art.reuse_audit = self.reuse_audit
        return art


# ---------------------------------------------------------------- baselines
class _BaselineDriver(Driver):
    def __init__(self, cfg: ExperimentConfig, check_conservation: bool = False):
        super().__init__(cfg, check_conservation)
        self.txs: dict[str, BaselineTx] = {}
        self.committed = 0

    def initiate(self, item: WorkItem) -> None:
        tx = BaselineTx(f"b{item.seq:07d}", item.initiator, item.receiver, item.intermediary,
                        item.amount, item.source, item.target)
        self.txs[tx.tx_id] = tx
        self.collector.start(tx.tx_id, item.seq, self.loop.now)
        self.attempt(tx)

    def attempt(self, tx: BaselineTx) -> None:
        raise NotImplementedError

    def conflict_or_fail(self, tx: BaselineTx, retry: Callable[[], None], failure: str,
                         on_exhausted: Callable[[], None] | None = None, conflict: bool = True) -> None:
        if conflict:
            self.collector.conflict(tx.tx_id)
        if self.policy.allows(self.collector.records[tx.tx_id].retries):
            self.collector.retry(tx.tx_id)
            self.loop.after(self.policy.backoff_ms, retry)
        elif on_exhausted is not None:
            on_exhausted()
        else:
            self.collector.finish(tx.tx_id, False, self.loop.now, failure)

    def totals(self) -> dict[str, Decimal]:
        return self._pair_totals()


class VanillaDriver(_BaselineDriver):
    """Two MVCC legs through the intermediary's account keys."""

    scheme = "vanilla"

    def __init__(self, cfg: ExperimentConfig, check_conservation: bool = False):
        super().__init__(cfg, check_conservation)
        self.nodes = {s: self.make_node(s, self.on_commit) for s in self.topo.shards}

    def attempt(self, tx: BaselineTx) -> None:
        self._endorse(tx, 1)

    def _endorse(self, tx: BaselineTx, leg: int) -> None:
        shard = tx.source if leg == 1 else tx.target
        intent = source_leg(tx) if leg == 1 else target_leg(tx, self.rate_from(tx.source))
        try:
            rwset = simulate_tx(intent, self.states[shard].snapshot())
        except IntentFailed as exc:
            if leg == 1:
                self.collector.finish(tx.tx_id, False, self.loop.now, exc.reason)
            else:
                self._compensate(tx, exc.reason)
            return
        etx = EndorsedTx(tx.tx_id, rwset, int(self.cfg.tx_size_mb * MB), payload=(tx, leg))
        node = self.nodes[shard]

        def arrive():
            etx.arrival = self.loop.now
            node.deliver(etx)

        self.loop.after(2 * self.net.sample(), arrive)

    def on_commit(self, block, verdicts) -> None:
        for etx, verdict in zip(block.txs, verdicts):
            tx, leg = etx.payload
            if verdict is Verdict.VALID:
                if leg == 1:
                    self.loop.after(self.net.sample(), lambda tx=tx: self._endorse(tx, 2))
                else:
                    self.collector.finish(tx.tx_id, True, self.loop.now)
                    self.sample_conservation()
                continue
            if leg == 1:
                self.conflict_or_fail(tx, lambda tx=tx: self._endorse(tx, 1), "MVCC_CONFLICT")
            else:
                self.conflict_or_fail(tx, lambda tx=tx: self._endorse(tx, 2), "MVCC_CONFLICT",
                                      on_exhausted=lambda tx=tx: self._compensate(tx, "MVCC_CONFLICT"))

    def _compensate(self, tx: BaselineTx, reason: str) -> None:
        """Refund the source leg as a system transaction committed on its own."""
        state = self.states[tx.source]
        rwset = simulate_tx(refund_leg(tx), state.snapshot())
        validate_and_commit([rwset], state)
        self.nodes[tx.source].charge(self.cfg.tx_validate_ms)
        self.collector.finish(tx.tx_id, False, self.loop.now, reason)


class OCCDriver(_BaselineDriver):
    """Execute on snapshots of both shards, validate both read sets at commit."""

    scheme = "occ"

    def __init__(self, cfg: ExperimentConfig, check_conservation: bool = False):
        super().__init__(cfg, check_conservation)
        self.nodes = {}
        for a, b in self.topo.pairs:
            node = self.make_node(
                f"{a}+{b}", self.on_commit,
                validator=lambda block: occ_validate_and_commit(self.states, [t.rwset for t in block.txs]),
            )
            self.nodes[a] = self.nodes[b] = node

    def attempt(self, tx: BaselineTx) -> None:
        try:
            rw = occ_execute(self.states, tx, self.rate_from(tx.source))
        except IntentFailed as exc:
            self.collector.finish(tx.tx_id, False, self.loop.now, exc.reason)
            return
        etx = EndorsedTx(tx.tx_id, rw, int(self.cfg.tx_size_mb * MB), payload=tx)
        node = self.nodes[tx.source]

        def arrive():
            etx.arrival = self.loop.now
            node.deliver(etx)

        self.loop.after(2 * self.net.sample(), arrive)

    def on_commit(self, block, verdicts) -> None:
        for etx, verdict in zip(block.txs, verdicts):
            tx = etx.payload
            if verdict is Verdict.VALID:
                self.collector.finish(tx.tx_id, True, self.loop.now)
                self.sample_conservation()
            else:
                self.conflict_or_fail(tx, lambda tx=tx: self.attempt(tx), "ABORT_EXHAUSTED")


class TwoPLDriver(_BaselineDriver):
    """Ordered locking over both shards, one lock table per shard pair."""

    scheme = "twopl"

    def __init__(self, cfg: ExperimentConfig, check_conservation: bool = False):
        super().__init__(cfg, check_conservation)
        rates = {s: self.rate_from(s) for s in self.topo.shards}
        self.coordinators = {}
        for a, b in self.topo.pairs:
            coord = TwoPLCoordinator(self.loop, self.states, self.on_done, cfg.lock_hold,
                                     cfg.lock_timeout_ms, rates=rates)
            self.coordinators[a] = self.coordinators[b] = coord

    def attempt(self, tx: BaselineTx) -> None:
        coord = self.coordinators[tx.source]
        self.loop.after(self.net.sample(), lambda: coord.start(tx))

    def on_done(self, tx: BaselineTx, status: str, now: float) -> None:
        if status == "COMMITTED":
            self.collector.finish(tx.tx_id, True, now)
            self.sample_conservation()
        elif status == "LOCK_TIMEOUT":
            self.conflict_or_fail(tx, lambda: self.attempt(tx), "LOCK_TIMEOUT", conflict=False)
        else:
            self.collector.finish(tx.tx_id, False, now, status)

    def cpu_mem_proxy(self) -> dict[str, int]:
        out = super().cpu_mem_proxy()
        out["max_lock_waiters"] = max(c.max_waiters_seen for c in self.coordinators.values())
        return out


DRIVERS = {"hicocs": HiCoCSDriver, "vanilla": VanillaDriver, "occ": OCCDriver, "twopl": TwoPLDriver}


def simulate_experiment(cfg: ExperimentConfig, check_conservation: bool = False) -> RunArtifacts:
    return DRIVERS[cfg.scheme](cfg, check_conservation).run()


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """Run ``cfg.scheme`` until every transfer is terminal and report metrics."""
    return simulate_experiment(cfg).report
