"""Seeded open-loop workload over a paired-shard topology."""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from ..amounts import to_amount
from ..errors import BadTrace
from .config import ExperimentConfig


@dataclass(frozen=True)
class Topology:
    """Shards ``s0..`` paired as (s0, s1), (s2, s3), ...

    Client ``c<i>`` initiates from shard ``s<i mod N>``; receiver ``r<i>``
    lives on ``s<i mod N>`` and only ever receives. Every intermediary
    ``g<j>`` holds an account on every shard; ``g00`` is the hot one.
    """

    shards: tuple[str, ...]
    clients: tuple[str, ...]
    receivers: tuple[str, ...]
    intermediaries: tuple[str, ...]

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Topology":
        shards = tuple(f"s{i}" for i in range(cfg.shards))
        width = len(str(cfg.concurrent_clients - 1))
        clients = tuple(f"c{i:0{width}d}" for i in range(cfg.concurrent_clients))
        receivers = tuple(f"r{i:0{width}d}" for i in range(cfg.concurrent_clients))
        gwidth = max(2, len(str(cfg.intermediary_group_size - 1)))
        inter = tuple(f"g{j:0{gwidth}d}" for j in range(cfg.intermediary_group_size))
        return cls(shards, clients, receivers, inter)

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(self.shards[i], self.shards[i + 1]) for i in range(0, len(self.shards), 2)]

    @property
    def hot(self) -> str:
        return self.intermediaries[0]

    def home(self, index: int) -> str:
        return self.shards[index % len(self.shards)]

    def partner(self, shard: str) -> str:
        i = self.shards.index(shard)
        return self.shards[i ^ 1]

    def receivers_on(self, shard: str) -> list[str]:
        i = self.shards.index(shard)
        return [r for k, r in enumerate(self.receivers) if k % len(self.shards) == i]


@dataclass(frozen=True)
class WorkItem:
    seq: int
    send_ms: float
    initiator: str
    receiver: str
    intermediary: str
    amount: Decimal
    source: str
    target: str


def load_trace(path: str | Path) -> list[Decimal]:
    """Amounts from a CSV: one per row, first column, optional ``amount`` header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise BadTrace(f"cannot read trace {path}: {exc}") from exc
    if rows and rows[0][0].strip().lower() == "amount":
        rows = rows[1:]
    amounts = []
    for lineno, row in enumerate(rows, 1):
        try:
            value = to_amount(row[0].strip())
        except Exception as exc:
            raise BadTrace(f"row {lineno}: not a number: {row[0]!r}") from exc
        if not value.is_finite() or value <= 0:
            raise BadTrace(f"row {lineno}: amount must be positive, got {row[0]!r}")
        amounts.append(value)
    if not amounts:
        raise BadTrace(f"trace {path} holds no amounts")
    return amounts


def generate_workload(cfg: ExperimentConfig, topo: Topology | None = None) -> list[WorkItem]:
    topo = topo or Topology.from_config(cfg)
    rng = random.Random(cfg.rng_seed)
    trace = load_trace(cfg.trace_file) if cfg.trace_file else None
    interval = cfg.client_interval_ms
    starts = [rng.uniform(0, interval) for _ in topo.clients]
    receivers = {s: topo.receivers_on(s) for s in topo.shards}
    hot_p = cfg.skewness / 100.0
    items = []
    for i in range(cfg.tx_count):
        ci = i % len(topo.clients)
        k = i // len(topo.clients)
        send = starts[ci] + k * interval + rng.uniform(-0.1, 0.1) * interval
        source = topo.home(ci)
        target = topo.partner(source)
        g = topo.hot if rng.random() < hot_p else topo.intermediaries[rng.randrange(len(topo.intermediaries))]
        receiver = receivers[target][rng.randrange(len(receivers[target]))]
        if trace is not None:
            amount = trace[i % len(trace)]
        else:
            amount = to_amount(round(rng.uniform(cfg.amount_min, cfg.amount_max), 2))
            amount = max(amount, to_amount(cfg.amount_min))
        if cfg.overdraw_fraction and rng.random() < cfg.overdraw_fraction:
            amount = to_amount(cfg.client_balance * 2)
        items.append(WorkItem(i, max(0.0, send), topo.clients[ci], receiver, g, amount, source, target))
    items.sort(key=lambda w: (w.send_ms, w.seq))
    return items
