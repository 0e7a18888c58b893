"""Command-line interface.

Subcommands
-----------
``cnlab baseline``     generate and cluster the clean reference dataset
``cnlab run``          execute the error grid and write reports
``cnlab list-conditions``  print the 36 grid conditions with indices

The master seed defaults to the CNLAB_SEED environment variable when the
flag is omitted.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .harness import (
    RunConfig,
    classification_rate,
    enumerate_conditions,
    failure_rate_exceeded,
    run_baseline,
    run_grid,
)
from .validation import adjusted_rand_index

DEFAULT_SEED = 0


def _seed_default() -> int:
    env = os.environ.get("CNLAB_SEED")
    return int(env) if env else DEFAULT_SEED


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed", type=int, default=None,
        help="master seed (default: CNLAB_SEED env var, else %(default)s)",
    )


def _parse_conditions(text: str) -> tuple[int, ...] | None:
    if text.strip().lower() == "all":
        return None
    try:
        indices = tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad condition list {text!r}: {exc}") from exc
    n = len(enumerate_conditions())
    if any(not 0 <= i < n for i in indices) or not indices:
        raise argparse.ArgumentTypeError(f"condition indices must lie in [0, {n})")
    return indices


def _parse_algos(text: str) -> tuple[str, ...]:
    algos = tuple(tok.strip().lower() for tok in text.split(",") if tok.strip())
    if not algos or set(algos) - {"gmm", "dbscan"}:
        raise argparse.ArgumentTypeError("algorithms must be a comma list drawn from gmm,dbscan")
    return algos


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_base = sub.add_parser("baseline", help="cluster the clean reference dataset")
    _add_seed(p_base)
    p_base.add_argument("--eps", type=float, default=None, help="force this DBSCAN eps instead of the automatic elbow")

    p_run = sub.add_parser("run", help="run the error grid and write reports")
    _add_seed(p_run)
    p_run.add_argument("--reps", type=int, default=100, help="replications per condition (default %(default)s)")
    p_run.add_argument("--boots", type=int, default=50, help="stability bootstraps per replication (default %(default)s)")
    p_run.add_argument("--algos", type=_parse_algos, default=("gmm", "dbscan"), help="comma list: gmm,dbscan (default both)")
    p_run.add_argument("--conditions", type=_parse_conditions, default=None, help="'all' or comma list of condition indices")
    p_run.add_argument("--out", required=True, help="output directory for reports")
    p_run.add_argument("--workers", type=int, default=1, help="parallel worker processes (default %(default)s)")
    p_run.add_argument("--eps", type=float, default=None, help="force this DBSCAN eps for every fit")
    p_run.add_argument("--merge-cutoff", type=float, default=0.1, help="component-merging similarity cutoff (default %(default)s)")
    p_run.add_argument("--stability-threshold", type=float, default=0.7, help="mean-Jaccard stability threshold (default %(default)s)")
    p_run.add_argument("--no-figures", action="store_true", help="skip rendering the summary figures")

    sub.add_parser("list-conditions", help="print the grid conditions with their indices")
    return parser


def _cmd_baseline(args) -> int:
    seed = args.seed if args.seed is not None else _seed_default()
    config = RunConfig(master_seed=seed, eps_override=args.eps)
    artifacts = run_baseline(config)
    data = artifacts.dataset
    print(f"reference dataset: n={data.n}, d={data.dim} (seed {seed})")

    model = artifacts.gmm_model
    ari = adjusted_rand_index(artifacts.gmm_labels.labels, data.labels)
    print(f"gmm: selected K={model.n_components}, BIC={model.bic:.1f}, "
          f"ARI vs generating labels={ari:.3f}")
    for k, comp in enumerate(model.components):
        mean = ", ".join(f"{v:.2f}" for v in comp.mean)
        print(f"  component {k}: weight={comp.weight:.3f}, mean=({mean})")

    labels = artifacts.dbscan_labels
    rate = classification_rate(labels, data.labels)
    print(f"dbscan: eps={artifacts.dbscan_params.eps:.4f}, "
          f"min_points={artifacts.dbscan_params.min_points}, "
          f"clusters={labels.n_clusters}, noise={labels.noise_size()}, "
          f"correctly classified={rate:.3f}")
    return 0


def _cmd_run(args) -> int:
    seed = args.seed if args.seed is not None else _seed_default()
    config = RunConfig(
        master_seed=seed,
        replications=args.reps,
        stability_bootstraps=args.boots,
        algorithms=args.algos,
        merge_cutoff=args.merge_cutoff,
        stability_threshold=args.stability_threshold,
        eps_override=args.eps,
        output_directory=args.out,
        worker_count=args.workers,
        condition_indices=args.conditions,
        figures=not args.no_figures,
    )
    n_conditions = len(config.condition_indices) if config.condition_indices else 36
    print(f"running {n_conditions} conditions x {config.replications} replications "
          f"(seed {seed}, {config.worker_count} workers)")
    reports, _ = run_grid(config)
    print(f"wrote reports to {args.out}")
    if failure_rate_exceeded(reports):
        print("error: a condition lost more than 10% of its replications to failed fits", file=sys.stderr)
        return 1
    return 0


def _cmd_list_conditions(_args) -> int:
    print(f"{'index':>5}  {'error_type':<10} {'vars':<5} {'magnitude':<9} rate")
    for cond in enumerate_conditions():
        print(f"{cond.index:>5}  {cond.error_type.value:<10} {cond.variables.value:<5} "
              f"{cond.magnitude.value:<9} {cond.rate:g}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "baseline":
        return _cmd_baseline(args)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_list_conditions(args)


if __name__ == "__main__":
    sys.exit(main())
