"""Command-line harness: run experiment grids, benchmarks, the acceptance
suite, and dataset export.

Exit codes: 0 on success, 1 on configuration errors, 2 when individual grid
cells failed but the run completed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config


def _add_common_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML experiment configuration")
    parser.add_argument("--out", type=Path, help="output directory override")
    parser.add_argument("--seed", type=int, help="data seed override")
    parser.add_argument("--threads", type=int, help="worker threads for grid cells")
    parser.add_argument(
        "--rank", type=str, help="comma-separated rank list override"
    )
    parser.add_argument(
        "--method", type=str, help="comma-separated method list override"
    )


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.threads is not None:
        cfg.threads = max(1, args.threads)
    if args.rank:
        try:
            cfg.ranks = [int(tok) for tok in args.rank.split(",") if tok]
        except ValueError:
            raise ConfigError(f"flag '--rank': not an integer list: {args.rank!r}")
    if args.method:
        cfg.methods = [tok for tok in args.method.split(",") if tok]
    if args.seed is not None:
        cfg.params["data_seed"] = args.seed
    # Re-validate after the overrides.
    return ExperimentConfig(
        scenario=cfg.scenario,
        methods=cfg.methods,
        ranks=cfg.ranks,
        ensemble_ranks=cfg.ensemble_ranks,
        seeds=cfg.seeds,
        dlra_substeps=cfg.dlra_substeps,
        dense_cap=cfg.dense_cap,
        metric_stride=cfg.metric_stride,
        threads=cfg.threads,
        out_dir=cfg.out_dir,
        dump_factors=cfg.dump_factors,
        params=cfg.params,
    )


def _cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg = _apply_overrides(load_config(args.config), args)
    result = run_experiment(cfg)
    out = Path(cfg.out_dir)
    print(f"wrote {out / 'results.csv'} ({len(result.rows)} rows, "
          f"{len(result.failures)} failures)")
    return result.exit_code


def _cmd_bench(args) -> int:
    from .experiments import run_experiment

    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.scenario not in ("runtime_best", "runtime_worst"):
            raise ConfigError(
                f"field 'scenario': bench needs runtime_best or runtime_worst, "
                f"got {cfg.scenario!r}"
            )
    else:
        scenario = "runtime_best" if args.case == "best" else "runtime_worst"
        cfg = ExperimentConfig(scenario=scenario, methods=["rrkf"], ranks=[5])
    cfg = _apply_overrides(cfg, args)
    result = run_experiment(cfg)
    scaling = result.extra_files["scaling"]
    for n, med in zip(scaling.sizes, scaling.medians_ms):
        print(f"n={n}: median {med:.3f} ms over {scaling.repetitions} repetitions")
    print(f"log-log slope: {scaling.slope:.3f}")
    for warn in scaling.warnings:
        print(f"warning: {warn}", file=sys.stderr)
    return result.exit_code


def _cmd_verify(args) -> int:
    from .acceptance import ALL_CRITERIA, run_acceptance

    numbers = None
    if args.criteria:
        try:
            numbers = [int(tok) for tok in args.criteria.split(",") if tok]
        except ValueError:
            raise ConfigError(
                f"flag '--criteria': not an integer list: {args.criteria!r}"
            )
        unknown = [k for k in numbers if k not in ALL_CRITERIA]
        if unknown:
            raise ConfigError(f"flag '--criteria': unknown criteria {unknown}")
    results = run_acceptance(numbers)
    return 0 if all(r.passed for r in results) else 1


def _cmd_export_data(args) -> int:
    from .experiments import _advection_scenario_from
    from .problems import (
        MaternScenario,
        build_advection,
        build_matern,
        export_observations,
        generate_on_model_data,
    )

    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.csv"
    if cfg.scenario == "advection":
        problem = build_advection(_advection_scenario_from(cfg))
        rows = export_observations(problem.obs_seq, problem.obs_indices, path)
    elif cfg.scenario == "matern_sweep":
        p = cfg.params
        scenario = MaternScenario(
            spatial_grid=MaternScenario.grid_2d(0.0, p["grid_extent"], p["grid_dx"]),
            smoothness=p["smoothness"],
            ell_t=p["ell_t"],
            ell_x=p["lengthscales"][0],
            sigma2_t=p["sigma2_t"],
            sigma2_x=p["sigma2_x"],
            noise_std=p["noise_std"],
            dt=p["dt"],
            steps=p["steps"],
            seed=p["data_seed"],
        )
        problem = build_matern(scenario)
        _, obs_seq = generate_on_model_data(problem, seed=p["data_seed"])
        rows = export_observations(obs_seq, problem.obs_global_indices, path)
    else:
        raise ConfigError(
            f"field 'scenario': export-data supports advection and matern_sweep, "
            f"got {cfg.scenario!r}"
        )
    print(f"wrote {path} ({rows} observations)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrkf",
        description="Low-rank Kalman filtering experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid from a config")
    _add_common_overrides(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_bench = sub.add_parser("bench", help="wall-clock scaling benchmark")
    _add_common_overrides(p_bench)
    p_bench.add_argument("--case", choices=("best", "worst"), default="best",
                         help="regime when no config is given")
    p_bench.set_defaults(fn=_cmd_bench)

    p_verify = sub.add_parser("verify", help="run the acceptance suite")
    p_verify.add_argument("--criteria", type=str,
                          help="comma-separated criterion numbers (default: all)")
    p_verify.set_defaults(fn=_cmd_verify)

    p_export = sub.add_parser("export-data", help="export a generated dataset")
    _add_common_overrides(p_export)
    p_export.set_defaults(fn=_cmd_export_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None and args.command in ("run", "export-data"):
        parser.error(f"{args.command} requires --config")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
