"""Command-line entry point: ``gencoq run | ne | validate``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time

from gencoq.experiment import ExperimentConfig, run_experiment, write_outputs
from gencoq.nash_oracle import analytic_ne

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

log = logging.getLogger("gencoq")


def _load(path: str | None) -> ExperimentConfig:
    return ExperimentConfig() if path is None else ExperimentConfig.load(path)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    overrides = {
        "mode": args.mode,
        "seed": args.seed,
        "n_iterations": args.iterations,
        "workers": args.workers,
    }
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    log.info(
        "running %s: %d sets x %d runs, %d iterations, seed %d",
        cfg.mode, cfg.n_param_sets, cfg.n_runs_per_set, cfg.n_iterations, cfg.seed,
    )
    start = time.perf_counter()
    result = run_experiment(cfg)
    csv_path, json_path = write_outputs(result, args.out)
    log.info("done in %.1fs", time.perf_counter() - start)
    for mode, m in sorted(result.modes.items()):
        print(
            f"{mode:12s} median convergence {m.median_convergence(cfg.n_param_sets):6.1f}  "
            f"first profit {m.first_profit()}  mean NE distance {m.mean_ne_distance():8.2f}  "
            f"within 5% {m.fraction_within(0.05):.0%}"
        )
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_ne(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    print(json.dumps(analytic_ne(cfg.market, *cfg.gencos).as_dict(), indent=2))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    ExperimentConfig.load(args.config)
    print(f"{args.config}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gencoq", description="Q-learning GenCos in a repeated Cournot market"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="simulate and write metrics.csv / summary.json")
    run.add_argument("--config", help="JSON configuration file (defaults: default setup)")
    run.add_argument("--mode", choices=("traditional", "dichotomy", "both"))
    run.add_argument("--seed", type=int)
    run.add_argument("--iterations", type=int)
    run.add_argument("--workers", type=int, help="worker processes (results are identical)")
    run.add_argument("--out", default="results", help="output directory")
    run.set_defaults(func=cmd_run)

    ne = sub.add_parser("ne", parents=[common], help="print the Nash equilibrium for a configuration")
    ne.add_argument("--config")
    ne.set_defaults(func=cmd_ne)

    val = sub.add_parser("validate", parents=[common], help="check a configuration file")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ValueError as exc:  # includes ConfigError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
