"""``shardbench`` command line: run, sweep, verify."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigInvalid, ShardBenchError
from .sim import ExperimentConfig, export_results, load_config, run_experiment
from .sim.config import SCHEMES
from .sim.sweep import AXES, run_sweep

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "scheme", None):
        changes["scheme"] = args.scheme
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigInvalid(f"bad --values {text!r}") from exc


def _summary(report) -> str:
    return (f"{report.scheme:8s} f={report.f:g} block={report.block_mb:g}MB txs={report.tx_count} "
            f"tsr={report.tsr:.2f}% tps={report.tps:.2f} p50={report.latency['p50']:.0f}ms "
            f"conflicts={report.mvcc_conflicts} retries={report.retries}")


def cmd_run(args) -> int:
    report = run_experiment(_base_config(args))
    path = export_results(report, Path(args.out) / f"results.{args.format}", args.format)
    print(_summary(report))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    schemes = args.schemes.split(",") if args.schemes else [cfg.scheme]
    reports = run_sweep(cfg, args.axis, _parse_values(args.values), schemes)
    for r in reports:
        print(_summary(r))
    path = export_results(reports, Path(args.out) / f"sweep_{args.axis}.{args.format}", args.format)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_all

    suite = run_all(echo=lambda line: print(line, flush=True))
    passed = sum(r.passed for r in suite.results)
    print(f"{passed}/{len(suite.results)} criteria passed")
    return EXIT_OK if suite.passed else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shardbench", description="Cross-shard transaction benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme: bool = True):
        p.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields")
        if scheme:
            p.add_argument("--scheme", choices=SCHEMES)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per axis value and scheme")
    common(sweep, scheme=False)
    sweep.add_argument("--axis", choices=sorted(AXES), required=True)
    sweep.add_argument("--values", required=True, help="comma-separated, e.g. 10,30,50,70,90")
    sweep.add_argument("--schemes", help=f"comma-separated subset of {','.join(SCHEMES)}")
    sweep.set_defaults(fn=cmd_sweep)

    verify = sub.add_parser("verify", help="run the acceptance suite")
    verify.set_defaults(fn=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigInvalid as exc:
        print(f"CONFIG_INVALID: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShardBenchError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
