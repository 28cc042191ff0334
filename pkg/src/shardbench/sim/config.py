"""Experiment configuration and its YAML/JSON loader."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigInvalid

SCHEMES = ("hicocs", "vanilla", "twopl", "occ")
HE_BACKENDS = ("mock", "approximate", "approx")


@dataclass(frozen=True)
class ExperimentConfig:
    # topology and workload
    shards: int = 4
    nodes_per_shard: int = 4  # informational: endorsement is modeled per shard
    intermediary_group_size: int = 20
    skewness: float = 10.0  # percent of transfers through the hot intermediary
    block_size_limit: float = 40.0  # MB
    batch_timeout: float = 2000.0  # ms
    tx_count: int = 10_000
    concurrent_clients: int = 1000
    scheme: str = "hicocs"
    he_backend: str = "mock"
    delta: float = 2.0**40
    slots: int = 4096
    t_settle: float = 2000.0  # ms
    reuse_every_k: int = 5
    rate: float = 1.0
    rng_seed: int = 0
    # timing model
    tx_size_mb: float = 1.0
    net_delay_ms: float = 5.0
    net_jitter_ms: float = 1.0
    client_interval_ms: float = 6000.0
    block_commit_ms: float = 50.0
    tx_validate_ms: float = 2.5
    lock_timeout_ms: float = 2000.0
    lock_hold_ms: float | None = None  # default: 4 network delays + 2 block commits
    # retries, settlement, balances
    max_retries: int = 5
    backoff_ms: float | None = None  # default: batch_timeout
    pool_cap: int = 10_000
    max_settle_attempts: int = 3
    client_balance: float = 10_000.0
    intermediary_balance: float = 1_000_000.0
    amount_min: float = 0.01
    amount_max: float = 100.0
    trace_file: str | None = None
    warmup_fraction: float = 0.05
    # fault injection (off by default)
    liquidity_fault_fraction: float = 0.0
    overdraw_fraction: float = 0.0

    def __post_init__(self):
        try:
            validate_config(self)
        except TypeError as exc:
            raise ConfigInvalid(f"wrong value type: {exc}") from exc

    @property
    def backoff(self) -> float:
        return self.batch_timeout if self.backoff_ms is None else self.backoff_ms

    @property
    def lock_hold(self) -> float:
        if self.lock_hold_ms is not None:
            return self.lock_hold_ms
        return 4 * self.net_delay_ms + 2 * self.block_commit_ms

    @property
    def txs_per_block(self) -> int:
        return max(1, int(self.block_size_limit // self.tx_size_mb))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def validate_config(cfg: ExperimentConfig) -> None:
    def bad(msg: str):
        raise ConfigInvalid(msg)

    if not 0 <= cfg.skewness <= 100:
        bad(f"skewness must be in [0, 100], got {cfg.skewness}")
    for name in ("shards", "nodes_per_shard", "intermediary_group_size", "tx_count",
                 "concurrent_clients", "slots", "reuse_every_k", "pool_cap", "max_settle_attempts"):
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            bad(f"{name} must be a positive integer, got {value!r}")
    if cfg.shards % 2:
        bad("shards are paired, so the shard count must be even")
    if cfg.slots & (cfg.slots - 1):
        bad("slots must be a power of two")
    for name in ("block_size_limit", "batch_timeout", "t_settle", "rate", "delta", "tx_size_mb",
                 "client_interval_ms", "block_commit_ms", "lock_timeout_ms"):
        if not getattr(cfg, name) > 0:
            bad(f"{name} must be positive")
    for name in ("net_delay_ms", "net_jitter_ms", "tx_validate_ms", "max_retries"):
        if getattr(cfg, name) < 0:
            bad(f"{name} must be non-negative")
    if cfg.tx_size_mb > cfg.block_size_limit:
        bad("a transaction does not fit in a block")
    if cfg.scheme not in SCHEMES:
        bad(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    if cfg.he_backend not in HE_BACKENDS:
        bad(f"he_backend must be one of {HE_BACKENDS}, got {cfg.he_backend!r}")
    if not 0 < cfg.amount_min <= cfg.amount_max:
        bad("need 0 < amount_min <= amount_max")
    if not 0 <= cfg.warmup_fraction < 1:
        bad("warmup_fraction must be in [0, 1)")
    for name in ("liquidity_fault_fraction", "overdraw_fraction"):
        if not 0 <= getattr(cfg, name) <= 1:
            bad(f"{name} must be in [0, 1]")


def config_from_mapping(data: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigInvalid(f"unknown config fields: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc
    return config_from_mapping(data or {})
