"""Command line entry point: ``stats-ts {train,sample,evaluate,analyze-schedule,synth}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ContractError, DivergenceError, NumericError, SamplingError
from . import pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stats-ts", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file (defaults to the shipped one)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override [train] seed")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("train", help="two-stage training from a config"))
    p = common(sub.add_parser("sample", help="draw forecasts for the held-out windows"))
    p.add_argument("--checkpoint", help="run directory holding checkpoint/ (default: --out)")
    p = common(sub.add_parser("evaluate", help="CRPS/MAE/MSE of exported forecasts"))
    p.add_argument("--forecasts", help="forecast directory (default: OUT/forecasts)")
    p = common(sub.add_parser("analyze-schedule", help="schedule, flatness trajectory, PGD trace"))
    p.add_argument("--checkpoint", help="run directory holding checkpoint/ (default: template)")
    common(sub.add_parser("synth", help="write a synthetic dataset"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    checkpoint = getattr(args, "checkpoint", None)
    try:
        cfg = pipeline.resolve_config(args.config, args.out, checkpoint, args.seed)
        if args.command == "train":
            pipeline.run_train(cfg, args.out)
        elif args.command == "sample":
            pipeline.run_sample(cfg, args.out, checkpoint)
        elif args.command == "evaluate":
            report = pipeline.run_evaluate(cfg, args.out, args.forecasts)
            print(f"crps={report.crps:.6f} mae={report.mae:.6f} mse={report.mse:.6f}")
        elif args.command == "analyze-schedule":
            pipeline.run_analyze(cfg, args.out, checkpoint)
        elif args.command == "synth":
            print(pipeline.run_synth(cfg, args.out))
    except (ContractError, NumericError, DivergenceError, SamplingError, FileNotFoundError) as exc:
        print(f"stats-ts {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
