"""Command-line entry point.

Subcommands map onto pipeline stages: simulate, preprocess, fit, train,
refine, evaluate, ablate, reproduce-tables.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys

from .config import ScenarioConfig, load_scenario
from .errors import ConfigurationError, FitDivergedError, NumericalError
from .pipeline import OUT_ENV, Pipeline


def _parse_seeds(spec: str | None, fallback: list[int]) -> list[int]:
    if not spec:
        return fallback
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi)))
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigurationError("empty seed list")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="imuloc",
        description="IMU-supervised radio localization experiments")
    p.add_argument("--config", help="scenario config JSON (defaults apply if omitted)")
    p.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./out)")
    p.add_argument("--seed", type=int, default=None, help="single run seed (default 0)")
    p.add_argument("--seeds", help="seed list: '0,1,2' or ranges '0..30'; "
                   "evaluate/ablate/reproduce-tables default to 0..30")
    p.add_argument("--threads", type=int, default=1, help="seed-parallel workers")
    p.add_argument("--no-cache", action="store_true", help="force recomputation")

    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="trajectory + synthetic CSI dataset")
    sub.add_parser("preprocess", help="CFR->CIR alignment, SNR filter, features")
    sub.add_parser("fit", help="IMU simulation + forward-backward pseudo-labels")
    tr = sub.add_parser("train", help="train a CSI->position network")
    tr.add_argument("--labels", choices=("truth", "pseudo", "dead-reckoning"),
                    default="pseudo")
    tr.add_argument("--epochs", type=int, default=None)
    sub.add_parser("refine", help="iterative refinement loop for one seed")
    sub.add_parser("evaluate", help="summary table across seeds")
    ab = sub.add_parser("ablate", help="knob sweep across seeds")
    ab.add_argument("--knob", required=True,
                    choices=("cp-noise", "cp-count", "snr-threshold"))
    ab.add_argument("--grid", required=True,
                    help="comma-separated knob values, e.g. '0,0.02,0.05'")
    ab.add_argument("--radius", type=float, default=None,
                    help="control-point radius for the cp-count knob")
    ab.add_argument("--metric", choices=("default", "model"), default="default",
                    help="cp-count: pseudo-label error (default) or model error")
    sub.add_parser("reproduce-tables", help="summary IMU and accuracy tables")
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = load_scenario(args.config) if args.config else ScenarioConfig()
    pipe = Pipeline(config, out_root=args.out, use_cache=not args.no_cache,
                    threads=args.threads)
    multi_seed = args.command in ("evaluate", "ablate", "reproduce-tables")
    if args.seed is not None:
        fallback = [args.seed]
    else:
        fallback = list(range(30)) if multi_seed else [0]
    seeds = _parse_seeds(args.seeds, fallback)

    if args.command == "simulate":
        out = pipe.simulate()
    elif args.command == "preprocess":
        out = pipe.preprocess()
    elif args.command == "fit":
        for s in seeds:
            out = pipe.fit_seed(s)
    elif args.command == "train":
        for s in seeds:
            out = pipe.train_seed(s, args.labels, args.epochs)
    elif args.command == "refine":
        for s in seeds:
            out = pipe.refine_seed(s)
    elif args.command == "evaluate":
        out = pipe.evaluate(seeds)
        print((out / "summary.txt").read_text(), end="")
    elif args.command == "ablate":
        grid = [float(v) for v in args.grid.split(",") if v.strip()]
        out = pipe.ablate(args.knob, grid, seeds, args.radius, args.metric)
    elif args.command == "reproduce-tables":
        out = pipe.reproduce_tables(seeds)
        print((out / "imu_error.txt").read_text(), end="")
        print((out / "horizontal_error.txt").read_text(), end="")
    else:  # pragma: no cover - argparse enforces choices
        raise ConfigurationError(f"unknown command {args.command}")

    executed = ", ".join(pipe.executed) if pipe.executed else "none (cache hit)"
    print(f"[imuloc] stages executed: {executed}")
    print(f"[imuloc] outputs: {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FitDivergedError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
