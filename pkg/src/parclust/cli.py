"""Command line interface.

Subcommands: ``cluster`` runs the engine on a delimited input file,
``oracle`` runs the brute-force reference with the same flags and output
formats, ``generate`` writes a synthetic blob dataset with ground-truth
labels, ``bench`` times the engine across worker counts and dataset sizes.

Configuration precedence per key: command line flag, then settings file
(``--config``, key=value lines with # comments), then built-in default.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

import numpy as np

from .dataio import generate_synthetic, load_dataset, write_dataset, write_outputs
from .engine import DEFAULT_PAIRS_PER_BATCH, RunConfig, run
from .metrics import MetricKind
from .model import ConstraintSet, ValidationError
from .oracle import oracle_batched_run, oracle_single_linkage
from .scheduler import PipelineConfig, report_utilization

__all__ = ["main"]

# settings-file keys and their value parsers; spelling matches the CLI flags
_SETTING_TYPES = {
    "input": str,
    "id-column": str,
    "metric": str,
    "pairs-per-batch": int,
    "blocks": int,
    "managers": int,
    "workers-per-manager": int,
    "input-buffers": int,
    "output-buffers": int,
    "buffers-per-worker": int,
    "kl1": int,
    "kl2": int,
    "kl3": int,
    "kl4": int,
    "dmax": float,
    "out-dir": str,
    "seed": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors, exit 1
        raise ValidationError(message)


def load_settings(path: str) -> dict[str, str]:
    """Parse a key=value settings file; unknown keys are rejected."""
    settings: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path} line {line_no}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SETTING_TYPES:
                raise ValidationError(f"{path} line {line_no}: unknown setting {key!r}")
            settings[key] = value
    return settings


def _effective(args: argparse.Namespace, settings: dict[str, str], key: str, default=None):
    """flag > settings file > default, per key."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in settings:
        caster = _SETTING_TYPES[key]
        try:
            return caster(settings[key])
        except ValueError:
            raise ValidationError(
                f"setting {key}={settings[key]!r} is not a valid {caster.__name__}"
            ) from None
    return default


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--input", help="delimited input file of feature rows")
    sub.add_argument("--id-column", help="id column, by header name or 0-based index")
    sub.add_argument(
        "--metric",
        help="euclidean | squared-euclidean | manhattan | chebyshev (default euclidean)",
    )
    sub.add_argument(
        "--pairs-per-batch", type=int, help="pairs selected per round (default 256)"
    )
    sub.add_argument("--blocks", type=int, help="index blocks (default: one per ~4096 points)")
    sub.add_argument("--managers", type=int, help="second-level managers (default 4)")
    sub.add_argument(
        "--workers-per-manager", type=int, help="workers per manager (default: cpus/managers)"
    )
    sub.add_argument("--input-buffers", type=int, help="task queue slots (default 12)")
    sub.add_argument("--output-buffers", type=int, help="result queue slots (default 12)")
    sub.add_argument("--buffers-per-worker", type=int, help="per-worker queue slots (default 3)")
    sub.add_argument("--kl1", type=int, help="stop when the cluster count reaches kl1")
    sub.add_argument("--kl2", type=int, help="clusters above kl2 points stop merging")
    sub.add_argument("--kl3", type=int, help="no union may exceed kl3 points (kl3 > kl2)")
    sub.add_argument("--kl4", type=int, help="merge pairs touching clusters below kl4 first")
    sub.add_argument("--dmax", type=float, help="maximum merge distance in metric units")
    sub.add_argument("--config", help="settings file, key=value per line")
    sub.add_argument("--out-dir", help="output directory (default parclust-out)")
    sub.add_argument("--seed", type=int, help="seed echoed into stats.json")


def _gather_run_config(args) -> tuple[dict[str, str], RunConfig, dict]:
    settings = load_settings(args.config) if args.config else {}
    eff = lambda key, default=None: _effective(args, settings, key, default)  # noqa: E731
    constraints = ConstraintSet(
        kl1=eff("kl1"), kl2=eff("kl2"), kl3=eff("kl3"), kl4=eff("kl4"), dmax=eff("dmax")
    )
    pipeline = PipelineConfig(
        managers=eff("managers", 4),
        workers_per_manager=eff("workers-per-manager"),
        input_buffers=eff("input-buffers", 12),
        output_buffers=eff("output-buffers", 12),
        buffers_per_worker=eff("buffers-per-worker", 3),
    )
    metric = MetricKind.parse(eff("metric", "euclidean"))
    config = RunConfig(
        constraints=constraints,
        pairs_per_batch=eff("pairs-per-batch", DEFAULT_PAIRS_PER_BATCH),
        metric=metric,
        blocks=eff("blocks"),
        pipeline=pipeline,
    )
    echo = {
        "metric": metric.value,
        "pairs_per_batch": config.pairs_per_batch,
        "blocks": config.blocks,
        "managers": pipeline.managers,
        "workers_per_manager": pipeline.workers_per_manager,
        "input_buffers": pipeline.input_buffers,
        "output_buffers": pipeline.output_buffers,
        "buffers_per_worker": pipeline.buffers_per_worker,
        "kl1": constraints.kl1,
        "kl2": constraints.kl2,
        "kl3": constraints.kl3,
        "kl4": constraints.kl4,
        "dmax": constraints.dmax,
        "seed": eff("seed"),
    }
    return settings, config, echo


def _load_input(args, settings):
    path = _effective(args, settings, "input")
    if path is None:
        raise ValidationError("--input is required")
    return load_dataset(path, id_column=_effective(args, settings, "id-column"))


def cmd_cluster(args) -> int:
    settings, config, echo = _gather_run_config(args)
    dataset = _load_input(args, settings)
    echo["command"] = "cluster"
    result = run(dataset, config)
    out_dir = _effective(args, settings, "out-dir", "parclust-out")
    paths = write_outputs(result, out_dir, dataset=dataset, config_echo=echo)
    print(
        f"n={dataset.n} d={dataset.d} metric={config.metric.value} "
        f"P={config.pairs_per_batch}"
    )
    print(
        f"rounds={result.rounds} merges={len(result.merges)} "
        f"clusters={result.cluster_count} stop={result.stop_reason} "
        f"wall={result.stats.wall_time:.3f}s"
    )
    print(report_utilization(result.stats))
    print(f"wrote {paths['assignments']} {paths['merges']} {paths['stats']}")
    return 0


def cmd_oracle(args) -> int:
    settings, config, echo = _gather_run_config(args)
    dataset = _load_input(args, settings)
    echo["command"] = "oracle"
    if config.constraints.kl4 is not None:
        result = oracle_batched_run(
            dataset, config.constraints, config.pairs_per_batch, config.metric
        )
    else:
        result = oracle_single_linkage(dataset, config.constraints, config.metric)
    out_dir = _effective(args, settings, "out-dir", "parclust-out")
    paths = write_outputs(result, out_dir, dataset=dataset, config_echo=echo)
    clusters = int(np.unique(result.assignments).shape[0])
    print(f"n={dataset.n} d={dataset.d} merges={len(result.merges)} clusters={clusters}")
    print(f"wrote {paths['assignments']} {paths['merges']} {paths['stats']}")
    return 0


def cmd_generate(args) -> int:
    dataset, labels = generate_synthetic(args.n, args.d, args.clusters, args.spread, args.seed)
    write_dataset(dataset, args.out)
    labels_path = os.path.splitext(args.out)[0] + ".labels.csv"
    np.savetxt(labels_path, labels, fmt="%d")
    print(f"wrote {args.out} ({args.n} x {args.d}, {args.clusters} blobs)")
    print(f"wrote {labels_path}")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    workers = [int(tok) for tok in args.workers.split(",") if tok.strip()]
    if not sizes or not workers:
        raise ValidationError("--sizes and --workers must each list at least one value")
    metric = MetricKind.parse(args.metric or "euclidean")
    constraints = ConstraintSet(kl1=args.kl1)
    rows = []
    for n in sizes:
        dataset, _ = generate_synthetic(n, args.d, max(1, n // 500), 1.0, args.seed)
        reference = None
        base_median = None
        for w in workers:
            config = RunConfig(
                constraints=constraints,
                pairs_per_batch=args.pairs_per_batch or DEFAULT_PAIRS_PER_BATCH,
                metric=metric,
                pipeline=PipelineConfig(managers=1, workers_per_manager=w),
            )
            times = []
            last = None
            for _ in range(args.trials):
                t0 = time.perf_counter()
                last = run(dataset, config)
                times.append(time.perf_counter() - t0)
            merge_sig = [(e.root_a, e.root_b, e.dist) for e in last.merges]
            if reference is None:
                reference = merge_sig
            elif merge_sig != reference:
                raise RuntimeError(f"merge outputs diverged across configs at n={n}, workers={w}")
            med = statistics.median(times)
            if base_median is None:
                base_median = med
            busy = sum(last.stats.worker_busy.values())
            idle = sum(last.stats.worker_idle.values())
            util = 100.0 * busy / (busy + idle) if busy + idle > 0 else 0.0
            rows.append(
                {
                    "n": n,
                    "workers": w,
                    "times_s": sorted(times),
                    "min_s": min(times),
                    "median_s": med,
                    "speedup": base_median / med,
                    "utilization_pct": util,
                }
            )
    header = f"{'n':>8} {'workers':>7} {'min_s':>9} {'median_s':>9} {'speedup':>8} {'util%':>6}"
    print(header)
    for r in rows:
        print(
            f"{r['n']:>8} {r['workers']:>7} {r['min_s']:>9.3f} {r['median_s']:>9.3f} "
            f"{r['speedup']:>8.2f} {r['utilization_pct']:>6.1f}"
        )
    print("merge outputs identical across all configs per dataset size")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        path = os.path.join(args.out_dir, "bench.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        print(f"wrote {path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="parclust", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p_cluster = subs.add_parser("cluster", help="cluster an input file")
    _add_run_flags(p_cluster)
    p_cluster.set_defaults(func=cmd_cluster)

    p_oracle = subs.add_parser("oracle", help="brute-force reference run (small inputs)")
    _add_run_flags(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)

    p_gen = subs.add_parser("generate", help="write a synthetic blob dataset")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.add_argument("--n", type=int, default=1000, help="points (default 1000)")
    p_gen.add_argument("--d", type=int, default=2, help="features (default 2)")
    p_gen.add_argument("--clusters", type=int, default=1, help="blob count (default 1)")
    p_gen.add_argument("--spread", type=float, default=1.0, help="blob stddev (default 1.0)")
    p_gen.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p_gen.set_defaults(func=cmd_generate)

    p_bench = subs.add_parser("bench", help="time the engine across worker counts")
    p_bench.add_argument("--sizes", default="2000", help="comma list of n (default 2000)")
    p_bench.add_argument("--workers", default="1,4", help="comma list of workers (default 1,4)")
    p_bench.add_argument("--trials", type=int, default=3, help="trials per cell (default 3)")
    p_bench.add_argument("--d", type=int, default=8, help="features (default 8)")
    p_bench.add_argument("--pairs-per-batch", type=int, help="pairs per round (default 256)")
    p_bench.add_argument("--metric", help="metric name (default euclidean)")
    p_bench.add_argument("--kl1", type=int, help="optional stop count")
    p_bench.add_argument("--seed", type=int, default=0, help="dataset seed (default 0)")
    p_bench.add_argument("--out-dir", help="also write bench.json here")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
