"""Command line entry point.

    gppto run --config sweep.ini
    gppto run --policy gp_pto --budget 60 --sigma-s 1.0 --runs 20 --seed 0 --out results.csv
    gppto map generate --n 10 --beta 4 --p-g 0.95 --seed 3 --out map.txt
    gppto map show map.txt
"""

import argparse
import logging
import sys

import numpy as np

from .config import load_config
from .environment import generate_gp_map, generate_map, load_map, save_map
from .exceptions import SetupError
from .gp import SquaredExponential
from .harness import POLICIES, ExperimentConfig, sweep


def _u64(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {s}")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="gppto", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep and write per-step CSV")
    run.add_argument("--config", help="experiment config file ([experiment] section)")
    run.add_argument("--policy", choices=POLICIES, action="append",
                     help="policy to run (repeatable)")
    run.add_argument("--budget", type=float, action="append", help="energy budget (repeatable)")
    run.add_argument("--sigma-s", type=float, action="append",
                     help="spectrometer noise sd (repeatable)")
    run.add_argument("--runs", type=int, help="episodes per (budget, sigma_s, policy) cell")
    run.add_argument("--seed", type=_u64, help="first episode seed")
    run.add_argument("--jobs", type=int, help="parallel episodes")
    run.add_argument("--gp-map", action="store_true", default=None,
                     help="sample the ground truth from the GP prior")
    run.add_argument("--map", dest="map_file", help="load the ground truth from a map file")
    run.add_argument("--out", help="CSV output path")

    mp = sub.add_parser("map", help="generate or inspect environment files")
    msub = mp.add_subparsers(dest="map_command", required=True)
    gen = msub.add_parser("generate", help="write a map file")
    gen.add_argument("--n", type=int, default=10)
    gen.add_argument("--beta", type=int, default=4, help="number of measurement types")
    gen.add_argument("--p-g", type=float, default=0.95, help="smoothing probability")
    gen.add_argument("--seed", type=_u64, default=0)
    gen.add_argument("--gp-map", action="store_true", help="sample from the GP prior instead")
    gen.add_argument("--length-scale", type=float, default=1.0)
    gen.add_argument("--out", required=True)
    show = msub.add_parser("show", help="print a map file")
    show.add_argument("path")
    return ap


def _run(args):
    overrides = {}
    if args.policy:
        overrides["policies"] = args.policy
    if args.budget:
        overrides["budget_list"] = args.budget
    if args.sigma_s:
        overrides["sigma_s_list"] = args.sigma_s
    if args.runs is not None:
        overrides["runs_per_cell"] = args.runs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["n_jobs"] = args.jobs
    if args.gp_map:
        overrides["gp_map"] = True
    if args.map_file:
        overrides["map_file"] = args.map_file
    config = load_config(args.config, **overrides) if args.config else ExperimentConfig(**overrides)
    _, summary = sweep(config, args.out)
    cols = ["budget", "sigma_s", "policy", "runs", "final_trace_mean", "final_trace_sd",
            "final_rmse_mean", "final_rmse_sd", "num_drills_mean", "total_cost_mean"]
    print("\t".join(cols))
    for row in summary:
        print("\t".join(f"{row[c]:.4g}" if isinstance(row[c], float) else str(row[c]) for c in cols))
    if args.out:
        print(f"wrote {args.out}", file=sys.stderr)


def _map(args):
    if args.map_command == "generate":
        if args.gp_map:
            env = generate_gp_map(args.n, SquaredExponential(args.length_scale), args.seed,
                                  value_range=(1.0, float(args.beta)))
        else:
            env = generate_map(args.n, args.beta, args.p_g, args.seed)
        save_map(env, args.out)
        print(f"wrote {args.n}x{args.n} map to {args.out}")
        return
    env = load_map(args.path)
    print(f"n={env.size_n} beta={env.num_types} p_g={env.smoothing_prob} seed={env.seed}")
    print(f"min={env.cells.min():.4g} max={env.cells.max():.4g} mean={env.cells.mean():.4g}")
    with np.printoptions(precision=2, suppress=True, linewidth=200):
        # row 0 is y = 0.5; print north-up
        print(env.cells[::-1])


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            _run(args)
        else:
            _map(args)
    except (SetupError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
