"""Command-line interface.

Exit status: 0 on success, 2 for invalid input, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import pipeline, stability
from .errors import CapacityError, NumericalFailure, RatrError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key = value config file")
    group = parser.add_argument_group("pipeline parameters (override the config file)")
    for f in fields(pipeline.PipelineConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar=f.name.upper(), default=None)


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.from_file(args.config) if args.config else pipeline.PipelineConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(pipeline.PipelineConfig)}
    return cfg.with_overrides(**overrides)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    theta, theta_v, union, Y = pipeline.generate_training_data(cfg)
    Y.save(out / ("snapshots.csv" if args.csv else "snapshots.bin"))
    (out / "index_sets.json").write_text(
        json.dumps({"theta": theta.to_json(), "theta_v": theta_v.to_json(), "columns": union.to_json()})
    )
    return {"snapshots": Y.n_t, "n_h": Y.n_h, "output": str(out)}


def cmd_fit(args) -> dict:
    cfg = _config(args)
    model = pipeline.fit(cfg)
    out = model.save(_out_dir(args, cfg))
    return {
        "n_r": model.n_r,
        "ranks": [r.rank for r in model.recoveries],
        "validation_errors": [r.validation_error for r in model.recoveries],
        "downgraded_modes": list(model.downgraded),
        "output": str(out),
    }


def _read_points(args) -> np.ndarray:
    if args.xi:
        return np.array([[float(v) for v in args.xi.split(",")]])
    if args.points:
        return np.loadtxt(args.points, delimiter=",", ndmin=2)
    raise ValidationError("give --xi or --points")


def cmd_predict(args) -> dict:
    model = pipeline.SurrogateModel.load(args.model)
    pts = _read_points(args)
    preds = np.column_stack([pipeline.predict(model, x) for x in pts])
    if args.out:
        np.savetxt(args.out, preds, delimiter=",")
        return {"points": len(pts), "output": str(args.out)}
    return {"predictions": preds.T.tolist()}


def cmd_evaluate(args) -> dict:
    model = pipeline.SurrogateModel.load(args.model)
    count = int(args.samples) if args.samples else None
    pts = pipeline.sample_test_points(model.config, count)
    report = pipeline.evaluate(model, pts)
    out = Path(args.out or args.model)
    out.mkdir(parents=True, exist_ok=True)
    (out / "errors.csv").write_text(report.to_csv())
    summary = {k: v for k, v in report.to_json().items() if k != "errors"}
    (out / "evaluation.json").write_text(json.dumps(report.to_json()))
    return summary


def cmd_stability(args) -> dict:
    dists = args.distributions.split(";") if args.distributions else stability.TABLE_DISTRIBUTIONS
    reports = stability.table_report(dists, args.d, args.m, args.n, args.samples, args.trials, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stability.json").write_text(stability.reports_to_json(reports))
    (out / "stability.csv").write_text(stability.reports_to_csv(reports))
    return {"rows": [{"distribution": r.distribution, "mu": r.mu, "cond_B_mean": r.cond_mean} for r in reports]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratr", description="Rank-adaptive tensor recovery surrogates.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample index sets and solve the snapshots")
    _add_config_flags(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--csv", action="store_true", help="write snapshots as CSV instead of binary")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit and save a surrogate")
    _add_config_flags(p)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict snapshots with a saved surrogate")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--xi", help="comma-separated parameter point")
    p.add_argument("--points", type=Path, help="CSV file, one parameter point per row")
    p.add_argument("--out", type=Path, help="CSV output, one prediction per column")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="relative errors against fresh solves")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stability-report", help="order ratio and cond(B) per distribution")
    p.add_argument("--d", type=int, default=48)
    p.add_argument("--m", type=int, default=33)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distributions", help="';'-separated, e.g. 'uniform(1,2);normal(9,0.1)'")
    p.add_argument("--out", type=Path, default=Path("stability_out"))
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (ValidationError, CapacityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, RatrError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
