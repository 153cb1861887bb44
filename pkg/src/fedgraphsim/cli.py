"""Command-line entry points.

Exit codes: 0 success, 2 configuration/input error, 3 runtime failure.
Set FEDGRAPHSIM_LOG=debug|info|warning|error to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .experiments import (
    aggregate_seeds,
    run_experiment,
    write_summary,
)
from .graphs import GraphFormatError, SbmConfig, generate_sbm, load_graph, save_graph
from .partition import balanced_partition, louvain_partition, save_assignment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("fedgraphsim")


def _setup_logging():
    level = os.environ.get("FEDGRAPHSIM_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    logs = run_experiment(cfg)
    for lg in logs:
        final = lg.records[-1].mean_acc if lg.records else lg.initial_mean_acc
        print(f"seed {lg.seed}: {len(lg.records)} trips, final mean acc {final:.4f}")
    print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    """Recompute trips-to-target over the stored per-seed metrics CSVs."""
    outdir = Path(args.dir)
    csvs = sorted(outdir.glob("metrics_seed*.csv"))
    if not csvs:
        raise ConfigError(f"no metrics_seed*.csv files in {outdir}")
    trips = []
    finals = []
    for csv_path in csvs:
        sidecar = csv_path.with_suffix(".json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        initial = meta.get("initial_mean_acc", 0.0)
        reached = 0 if initial >= args.target else None
        final = initial
        with open(csv_path, "r", encoding="utf-8") as f:
            next(f)
            for line in f:
                trip, _, _, _, mean = line.rstrip("\n").split(",")
                final = float(mean)
                if reached is None and final >= args.target:
                    reached = int(trip)
        trips.append(reached)
        finals.append(final)
        shown = "NOT_REACHED" if reached is None else reached
        print(f"{csv_path.name}: trips_to_target={shown} final={final:.4f}")
    rows = [aggregate_seeds(finals, "final_mean_accuracy")]
    known = [t for t in trips if t is not None]
    if known:
        rows.append(aggregate_seeds(known, "trips_to_target_reached_only"))
    if args.out:
        write_summary(rows, args.out)
    for r in rows:
        print(f"{r.metric}: {r.mean:.4f} +- {r.ci95_half:.4f} (n={r.n_seeds})")
    return EXIT_OK


def _cmd_partition(args) -> int:
    g = load_graph(args.input)
    if args.method == "louvain":
        assignment = louvain_partition(g, args.clients, args.seed)
    else:
        assignment = balanced_partition(g, args.clients, args.seed)
    save_assignment(assignment, args.out)
    import numpy as np

    sizes = np.bincount(assignment.client_of, minlength=args.clients)
    print(f"wrote {args.out}; client sizes {sizes.tolist()}")
    return EXIT_OK


def _cmd_gen_sbm(args) -> int:
    blocks = tuple(int(b) for b in args.blocks.replace(",", " ").split())
    cfg = SbmConfig(
        blocks, args.intra, args.inter, args.feature_dim, args.noise, args.seed
    )
    g = generate_sbm(cfg)
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.node_count} nodes, {g.edge_count} edges")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedgraphsim",
        description="Semi-asynchronous federated graph learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="trips-to-target over stored runs")
    p_sum.add_argument("--dir", required=True)
    p_sum.add_argument("--target", type=float, required=True)
    p_sum.add_argument("--out", default=None)
    p_sum.set_defaults(func=_cmd_summarize)

    p_part = sub.add_parser("partition", help="partition a graph file into clients")
    p_part.add_argument("--input", required=True)
    p_part.add_argument("--method", choices=("louvain", "balanced"), required=True)
    p_part.add_argument("--clients", type=int, required=True)
    p_part.add_argument("--seed", type=int, default=0)
    p_part.add_argument("--out", default="assignment.txt")
    p_part.set_defaults(func=_cmd_partition)

    p_gen = sub.add_parser("gen-sbm", help="generate a synthetic block-model graph")
    p_gen.add_argument("--blocks", required=True, help="comma-separated sizes")
    p_gen.add_argument("--intra", type=float, default=0.2)
    p_gen.add_argument("--inter", type=float, default=0.01)
    p_gen.add_argument("--feature-dim", type=int, default=8)
    p_gen.add_argument("--noise", type=float, default=0.5)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen_sbm)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GraphFormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
