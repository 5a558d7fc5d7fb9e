"""Command line entry point: ``rep-opt run | certify | mcnemar``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .diagnostics import certify
from .harness import ConfigError, load_config, mcnemar_exact_one_sided, run_experiment
from .problems import load_instance

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 2, 3


def _load_point(path) -> np.ndarray:
    text = Path(path).read_text().strip()
    if text.startswith("["):
        return np.asarray(json.loads(text), dtype=float).ravel()
    return np.asarray(text.replace(",", " ").split(), dtype=float)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.output_dir:
            cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.output_dir is None:
        print("config error: no output_dir in config or on the command line", file=sys.stderr)
        return EXIT_CONFIG

    def progress(res):
        if res.completed:
            logging.info("instance %d: %s (delta=%.3g)", res.instance_id, res.label, res.delta)

    try:
        summary, _ = run_experiment(cfg, save_trajectories=args.save_trajectories,
                                    progress=progress)
    except Exception as e:  # noqa: BLE001
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_RUN
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if summary.completed == summary.attempted else EXIT_RUN


def cmd_certify(args) -> int:
    try:
        inst = load_instance(args.instance)
        x = _load_point(args.point)
    except (OSError, ValueError, KeyError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if inst.family != args.family:
        print(f"input error: instance is {inst.family}, not {args.family}", file=sys.stderr)
        return EXIT_CONFIG
    if x.size != inst.n:
        print(f"input error: point has {x.size} entries, instance needs {inst.n}",
              file=sys.stderr)
        return EXIT_CONFIG
    print(certify(inst, x, seed=inst.seed or 0).to_json())
    return EXIT_OK


def cmd_mcnemar(args) -> int:
    if args.wins < 0 or args.losses < 0:
        print("counts must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{mcnemar_exact_one_sided(args.wins, args.losses):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rep-opt", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a paired base/augmented experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--save-trajectories", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="d-stationarity certificate for a point")
    p.add_argument("--family", required=True, choices=["trimmed_lasso", "lts", "relu"])
    p.add_argument("--instance", required=True)
    p.add_argument("--point", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("mcnemar", help="exact one-sided McNemar p-value")
    p.add_argument("--wins", type=int, required=True)
    p.add_argument("--losses", type=int, required=True)
    p.set_defaults(func=cmd_mcnemar)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
