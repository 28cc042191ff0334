"""Sweeps over one configuration axis for several schemes."""
from __future__ import annotations

from typing import Iterable, Sequence

from ..errors import ConfigInvalid
from .config import SCHEMES, ExperimentConfig
from .metrics import MetricsReport
from .runner import run_experiment

AXES = {"skewness": "skewness", "block_size": "block_size_limit", "tx_count": "tx_count"}

ACTIVE_SKEWNESS = (10, 30, 50, 70, 90)
PASSIVE_BLOCK_MB = (10, 20, 40, 80, 160)


def run_sweep(
    template: ExperimentConfig, axis: str, values: Sequence, schemes: Iterable[str] | None = None,
) -> list[MetricsReport]:
    """One report per (scheme, value), schemes outermost, values in the given order."""
    if axis not in AXES:
        raise ConfigInvalid(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigInvalid("a sweep needs at least one value")
    schemes = list(schemes) if schemes is not None else [template.scheme]
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigInvalid(f"unknown scheme {s!r}")
    field = AXES[axis]
    reports = []
    for scheme in schemes:
        for value in values:
            if field == "tx_count":
                value = int(value)
            reports.append(run_experiment(template.replace(scheme=scheme, **{field: value})))
    return reports
