"""Per-transaction records, the metrics report, and CSV/JSON export."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import ExportError

CSV_COLUMNS = (
    "scheme", "f", "block_mb", "tx_count", "tsr", "tps",
    "lat_mean", "lat_p50", "lat_p99", "conflicts", "retries",
)


@dataclass
class TxRecord:
    tx_id: str
    seq: int
    initiated_at: float
    terminal_at: float | None = None
    success: bool | None = None
    retries: int = 0
    conflicts: int = 0
    failure: str | None = None

    @property
    def terminal(self) -> bool:
        return self.success is not None


class Collector:
    """Accumulates per-transaction outcomes; each transaction counts once."""

    def __init__(self):
        self.records: dict[str, TxRecord] = {}
        self.conflicts = 0
        self.retries = 0
        self.open = 0
        self.pool_size_series: list[tuple[float, int]] = []
        self.query_time_series: list[tuple[float, int]] = []

    def start(self, tx_id: str, seq: int, now: float) -> TxRecord:
        rec = TxRecord(tx_id, seq, now)
        self.records[tx_id] = rec
        self.open += 1
        return rec

    def conflict(self, tx_id: str) -> None:
        self.conflicts += 1
        self.records[tx_id].conflicts += 1

    def retry(self, tx_id: str) -> None:
        self.retries += 1
        self.records[tx_id].retries += 1

    def finish(self, tx_id: str, success: bool, now: float, failure: str | None = None) -> None:
        rec = self.records[tx_id]
        if rec.terminal:
            raise RuntimeError(f"{tx_id} finished twice")
        rec.success, rec.terminal_at, rec.failure = success, now, failure
        self.open -= 1

    @property
    def all_terminal(self) -> bool:
        return self.open == 0


@dataclass
class MetricsReport:
    scheme: str
    f: float
    block_mb: float
    tx_count: int
    tsr: float
    tps: float
    latency: dict[str, float]
    mvcc_conflicts: int
    retries: int
    completed: int
    failed: int
    duration_ms: float
    pool_size_series: list = field(default_factory=list)
    query_time_series: list = field(default_factory=list)
    cpu_mem_proxy: dict[str, int] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    seed: int = 0
    warmup_discarded: int = 0

    def csv_row(self) -> dict[str, str]:
        return {
            "scheme": self.scheme,
            "f": _num(self.f),
            "block_mb": _num(self.block_mb),
            "tx_count": str(self.tx_count),
            "tsr": _num(self.tsr),
            "tps": _num(self.tps),
            "lat_mean": _num(self.latency["mean"]),
            "lat_p50": _num(self.latency["p50"]),
            "lat_p99": _num(self.latency["p99"]),
            "conflicts": str(self.mvcc_conflicts),
            "retries": str(self.retries),
        }

    def to_dict(self) -> dict:
        return asdict(self)


def _num(x: float) -> str:
    if isinstance(x, int) or float(x).is_integer():
        return str(int(x))
    return f"{x:.6f}".rstrip("0").rstrip(".")


def percentile(sorted_values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile of an already sorted sequence."""
    if not sorted_values:
        return 0.0
    pos = (len(sorted_values) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * (pos - lo)


def build_report(
    collector: Collector, scheme: str, f: float, block_mb: float, warmup_fraction: float,
    cpu_mem_proxy: dict[str, int] | None = None, seed: int = 0,
) -> MetricsReport:
    records = sorted(collector.records.values(), key=lambda r: r.seq)
    initiated = len(records)
    done = [r for r in records if r.success]
    failures: dict[str, int] = {}
    for r in records:
        if r.success is False:
            failures[r.failure or "UNKNOWN"] = failures.get(r.failure or "UNKNOWN", 0) + 1
    tsr = 100.0 * len(done) / initiated if initiated else 0.0
    if records:
        start = min(r.initiated_at for r in records)
        end = max(r.terminal_at for r in records if r.terminal_at is not None)
        duration = max(end - start, 1e-9)
    else:
        duration = 0.0
    tps = len(done) / (duration / 1000.0) if duration else 0.0
    skip = int(initiated * warmup_fraction)
    lat = sorted(r.terminal_at - r.initiated_at for r in records[skip:] if r.success)
    latency = {
        "mean": sum(lat) / len(lat) if lat else 0.0,
        "p50": percentile(lat, 50),
        "p99": percentile(lat, 99),
    }
    return MetricsReport(
        scheme=scheme, f=f, block_mb=block_mb, tx_count=initiated, tsr=tsr, tps=tps,
        latency=latency, mvcc_conflicts=collector.conflicts, retries=collector.retries,
        completed=len(done), failed=initiated - len(done), duration_ms=duration,
        pool_size_series=list(collector.pool_size_series),
        query_time_series=list(collector.query_time_series),
        cpu_mem_proxy=dict(cpu_mem_proxy or {}), failures=dict(sorted(failures.items())),
        seed=seed, warmup_discarded=skip,
    )


def render_csv(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def render_json(reports: Iterable[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n"


def export_results(reports: MetricsReport | Iterable[MetricsReport], path: str | Path, fmt: str = "csv") -> Path:
    """Write one or more reports; the same reports always produce the same bytes."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    reports = list(reports)
    if fmt == "csv":
        text = render_csv(reports)
    elif fmt == "json":
        text = render_json(reports)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path
