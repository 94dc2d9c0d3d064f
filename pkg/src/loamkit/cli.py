"""Command-line interface.

    loam-kit run --config cfg.yaml
    loam-kit simulate --preset corridor --frames 100 --out out/
    loam-kit ape --est trajectory.csv --gt gt.csv

Exit codes: 0 success, 2 config error, 3 dataset error, 4 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import SIM_PRESETS, RunConfig, SimulateSettings, load_config
from .errors import ConfigError, DatasetError


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    from .harness import run
    summary = run(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_simulate(args) -> int:
    try:
        sim = SimulateSettings(preset=args.preset, frames=args.frames,
                               seed=args.seed, speed=args.speed,
                               prior=args.prior, save_dataset=args.save_dataset)
        cfg = RunConfig(mode="simulate", out_dir=args.out, seed=args.seed,
                        simulate=sim)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.pipeline.map_backend = args.map_backend
    if args.n_desired is not None:
        cfg.pipeline.n_desired = args.n_desired
    cfg.pipeline.deskew = args.deskew
    from .harness import run
    summary = run(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_ape(args) -> int:
    from .evaluate import ape, load_trajectory_csv
    try:
        est = load_trajectory_csv(args.est)
        gt = load_trajectory_csv(args.gt)
    except (OSError, ValueError) as exc:
        raise DatasetError(str(exc)) from exc
    try:
        result = ape(est, gt, max_dt=args.max_dt)
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loam-kit",
                                description="Lidar odometry toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a full config document")
    run_p.add_argument("--config", required=True)
    run_p.set_defaults(func=_cmd_run)

    sim_p = sub.add_parser("simulate", help="run a synthetic preset")
    sim_p.add_argument("--preset", default="corridor", choices=SIM_PRESETS)
    sim_p.add_argument("--frames", type=int, default=100)
    sim_p.add_argument("--seed", type=int, default=0)
    sim_p.add_argument("--speed", type=float, default=None)
    sim_p.add_argument("--out", default="out")
    sim_p.add_argument("--map-backend", default="ikd", choices=("ikd", "mto"))
    sim_p.add_argument("--n-desired", type=int, default=None)
    sim_p.add_argument("--prior", default="none", choices=("none", "gt", "noisy"))
    sim_p.add_argument("--deskew", action="store_true", default=False)
    sim_p.add_argument("--save-dataset", action="store_true", default=False)
    sim_p.set_defaults(func=_cmd_simulate)

    ape_p = sub.add_parser("ape", help="absolute pose error between two trajectory CSVs")
    ape_p.add_argument("--est", required=True)
    ape_p.add_argument("--gt", required=True)
    ape_p.add_argument("--max-dt", type=float, default=None)
    ape_p.set_defaults(func=_cmd_ape)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pipeline failure
        print(f"pipeline failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
