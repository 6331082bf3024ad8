"""Command-line entry point.

Subcommands: collect (uniform data gathering), run (placement experiment),
reid (synthetic re-identification stream), calibrate (matching threshold),
report (trace summary).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .context_model import collect, save_log
from .errors import ConfigError, TrainingError
from .harness import (
    ALGORITHMS,
    ExperimentConfig,
    StreamConfig,
    build_simulator,
    emit_csv,
    load_experiment_config,
    mean_delay,
    read_trace,
    regret_exponent,
    run_experiment,
    run_reid_stream,
    write_ranking_csv,
)
from .reid_pipeline import calibrate_threshold


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment YAML; flags override its values")
    parser.add_argument("--topology", help="topology YAML path")
    parser.add_argument("--delays", help="delay-model YAML path")
    parser.add_argument("--algorithm", choices=ALGORITHMS)
    parser.add_argument("--scenario", choices=("static", "dynamic"))
    parser.add_argument("--N", type=int, help="collection rounds")
    parser.add_argument("--L", type=int, help="discretization levels")
    parser.add_argument("--P", type=int, help="policy count")
    parser.add_argument("--I", type=int, help="policy refresh interval")
    parser.add_argument("--T", type=int, help="total rounds")
    parser.add_argument("--gamma", type=float, help="exploration probability")
    parser.add_argument("--eps-update", type=float, dest="eps_update")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--modules", type=int, help="number of placed modules")
    parser.add_argument("--out", help="output directory")


def _experiment_config(args) -> ExperimentConfig:
    overrides = {
        key: getattr(args, key)
        for key in (
            "topology", "delays", "algorithm", "scenario", "N", "L", "P", "I",
            "T", "gamma", "eps_update", "seed", "modules", "out",
        )
    }
    if args.config:
        return load_experiment_config(args.config, overrides)
    missing = [k for k in ("topology", "delays") if overrides.get(k) is None]
    if missing:
        raise ConfigError(f"--config or explicit {missing} paths are required")
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    return ExperimentConfig(**kwargs)


def _cmd_collect(args) -> int:
    cfg = _experiment_config(args)
    sim = build_simulator(cfg)
    memory = collect(sim, cfg.N, cfg.seed)
    out = args.log or "memory.log"
    save_log(memory, out, sim.arms)
    print(
        f"collected {len(memory)} points over {len(sim.arms)} arms "
        f"(cost range {memory.cost_min:.2f}..{memory.cost_max:.2f} ms) -> {out}"
    )
    return 0


def _cmd_run(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg)
    out_dir = cfg.out or "."
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.csv")
    emit_csv(result, trace_path)
    tail = mean_delay(result, tail_fraction=0.25)
    print(
        f"{cfg.algorithm} on {os.path.basename(cfg.topology)}: "
        f"{result.horizon} rounds, last-quartile mean delay {tail:.2f} ms -> {trace_path}"
    )
    return 0


def _cmd_reid(args) -> int:
    cfg = StreamConfig(
        cameras=args.cameras,
        identities=args.identities,
        queries=args.queries,
        noise=args.noise,
        feature_dim=args.dim,
        threshold=args.threshold,
        keep=args.keep,
        seed=args.seed,
        sharded=not args.merged,
    )
    report = run_reid_stream(cfg)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    conv = os.path.join(out_dir, "ranking_conventional.csv")
    frame = os.path.join(out_dir, "ranking_framejunk.csv")
    write_ranking_csv(report.conventional, conv)
    write_ranking_csv(report.framejunk, frame)
    print(
        f"{report.queries} queries: identity accuracy {report.identity_accuracy:.3f}, "
        f"new-id precision {report.new_identity_precision:.3f}, "
        f"rank-1 {report.framejunk.cmc[0]:.3f} (framejunk) / "
        f"{report.conventional.cmc[0]:.3f} (conventional)"
    )
    print(f"ranking tables -> {conv}, {frame}")
    return 0


def _read_values(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(line) for line in fh if line.strip()])


def _cmd_calibrate(args) -> int:
    if args.positives and args.negatives:
        pos = _read_values(args.positives)
        neg = _read_values(args.negatives)
    elif args.synthetic:
        rng = np.random.default_rng(args.seed)
        pos = np.clip(rng.normal(args.pos_mean, args.pos_std, args.samples), -1.0, 1.0)
        neg = np.clip(rng.normal(args.neg_mean, args.neg_std, args.samples), -1.0, 1.0)
    else:
        raise ConfigError("give --positives/--negatives files or --synthetic")
    threshold = calibrate_threshold(pos, neg)
    print(f"threshold {threshold!r} ({len(pos)} positives, {len(neg)} negatives)")
    return 0


def _cmd_report(args) -> int:
    cols = read_trace(args.trace)
    if len(cols["slot"]) == 0:
        print("empty trace")
        return 0
    costs = cols["raw_cost_ms"]
    explored = cols["explored"]
    horizon = int(cols["slot"].max()) + 1
    tail_start = int(round(horizon * 0.75))
    tail = costs[cols["slot"] >= tail_start]
    line = (
        f"{len(costs)} rows over {horizon} slots: mean delay {np.nanmean(costs):.2f} ms, "
        f"last-quartile {np.nanmean(tail):.2f} ms, exploration {explored.mean():.3f}"
    )
    regret = cols.get("regret_cum")
    if regret is not None and np.isfinite(regret).any():
        final = regret[np.isfinite(regret)][-1]
        line += f", final cumulative regret {final:.1f} ms"
        if args.fit_regret_from:
            series = regret[np.isfinite(regret)]
            alpha = regret_exponent(series, fit_from=args.fit_regret_from)
            line += f", regret exponent {alpha:.3f}"
    print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeplace",
        description="Contextual-bandit module placement and re-identification tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser("collect", help="gather uniform placement data")
    _add_run_flags(p_collect)
    p_collect.add_argument("--log", help="memory log output path")
    p_collect.set_defaults(func=_cmd_collect)

    p_run = sub.add_parser("run", help="run a placement experiment")
    _add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_reid = sub.add_parser("reid", help="run a synthetic re-identification stream")
    p_reid.add_argument("--cameras", type=int, default=4)
    p_reid.add_argument("--identities", type=int, default=50)
    p_reid.add_argument("--queries", type=int, default=1000)
    p_reid.add_argument("--noise", type=float, default=0.05)
    p_reid.add_argument("--dim", type=int, default=128)
    p_reid.add_argument("--threshold", type=float, default=0.9)
    p_reid.add_argument("--keep", type=float, default=0.7,
                        help="fraction of the old attribute vector kept on fusion")
    p_reid.add_argument("--seed", type=int, default=0)
    p_reid.add_argument("--merged", action="store_true",
                        help="use one communal gallery instead of per-camera shards")
    p_reid.add_argument("--out", help="output directory")
    p_reid.set_defaults(func=_cmd_reid)

    p_cal = sub.add_parser("calibrate", help="pick a matching threshold")
    p_cal.add_argument("--positives", help="file of same-person similarities, one per line")
    p_cal.add_argument("--negatives", help="file of cross-person similarities")
    p_cal.add_argument("--synthetic", action="store_true")
    p_cal.add_argument("--pos-mean", type=float, default=0.96)
    p_cal.add_argument("--pos-std", type=float, default=0.02)
    p_cal.add_argument("--neg-mean", type=float, default=0.80)
    p_cal.add_argument("--neg-std", type=float, default=0.04)
    p_cal.add_argument("--samples", type=int, default=500)
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_report = sub.add_parser("report", help="summarize a trace CSV")
    p_report.add_argument("--trace", required=True)
    p_report.add_argument("--fit-regret-from", type=int, default=0,
                          help="fit a log-log regret exponent from this round on")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error: training: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
