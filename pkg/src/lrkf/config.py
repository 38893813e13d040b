"""Experiment configuration: TOML loading, validation, defaults.

The file format is a flat top-level table (shared knobs) plus one optional
table per scenario. Unknown keys are rejected with the offending field name
so typos surface immediately.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIOS = (
    "advection",
    "matern_sweep",
    "runtime_best",
    "runtime_worst",
    "rank_collapse",
    "zscore",
)
METHODS = ("rrkf", "kf", "enkf", "etkf")

# Per-scenario parameter defaults; values follow the benchmark protocols.
SCENARIO_DEFAULTS = {
    "advection": {
        "n": 1024,
        "steps": 800,
        "obs_every": 5,
        "obs_count": 10,
        "noise_std": 0.1,
        "data_seed": 0,
        "ensemble_members": 0,  # 0 means n members
    },
    "matern_sweep": {
        "lengthscales": [0.01, 0.1, 0.25, 1.0],
        "smoothness": 0.5,
        "grid_extent": 2.0,
        "grid_dx": 0.1,
        "ell_t": 1.0,
        "sigma2_t": 1.0,
        "sigma2_x": 1.0,
        "noise_std": 0.1,
        "dt": 0.1,
        "steps": 100,
        "data_seed": 0,
    },
    "runtime_best": {
        "sizes": [1024, 2048, 4096, 8192, 16384],
        "repetitions": 5,
        "steps": 100,
        "obs_every": 5,
        "obs_count": 100,
        "rank": 5,
        "noise_std": 0.1,
        "data_seed": 0,
    },
    "runtime_worst": {
        "sizes": [256, 512, 1024, 2048],
        "repetitions": 5,
        "steps": 100,
        "obs_every": 5,
        "obs_count": 100,
        "rank": 5,
        "ell_t": 1.0,
        "ell_x": 2.0,
        "noise_std": 0.1,
        "dt": 0.1,
        "data_seed": 0,
    },
    "rank_collapse": {
        "n": 1000,
        "true_rank": 7,
        "obs_count": 20,
        "steps": 25,
        "dt": 0.1,
        "noise_std": 0.3,
        "data_seed": 0,
    },
    "zscore": {
        "grid_lo": 0.0,
        "grid_hi": 20.0,
        "grid_dx": 0.1,
        "ell_t": 2.0,
        "ell_x": 2.0,
        "sigma2_t": 1.0,
        "sigma2_x": 1.0,
        "noise_std": 0.2,
        "dt": 0.1,
        "steps": 500,
        "obs_count": 150,
        "obs_times": 100,
        "pool_last": 10,
        "data_seed": 0,
    },
}

TOP_LEVEL_KEYS = {
    "scenario",
    "methods",
    "ranks",
    "ensemble_ranks",
    "seeds",
    "dlra_substeps",
    "dense_cap",
    "metric_stride",
    "threads",
    "out_dir",
    "dump_factors",
}


class ConfigError(ValueError):
    """Configuration problem, reported with the offending field."""


@dataclass
class ExperimentConfig:
    scenario: str
    methods: list = field(default_factory=lambda: ["rrkf", "kf"])
    ranks: list = field(default_factory=list)
    ensemble_ranks: Optional[list] = None  # None: same grid as `ranks`
    seeds: Union[int, list] = 20
    dlra_substeps: int = 1
    dense_cap: int = 2048
    metric_stride: int = 1
    threads: int = 1
    out_dir: str = "results"
    dump_factors: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"field 'scenario': unknown value {self.scenario!r}, "
                f"expected one of {SCENARIOS}"
            )
        if not self.methods:
            raise ConfigError("field 'methods': at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(
                    f"field 'methods': unknown method {m!r}, expected from {METHODS}"
                )
        if any((not isinstance(r, int)) or r < 1 for r in self.ranks):
            raise ConfigError("field 'ranks': entries must be positive integers")
        if self.ensemble_ranks is not None and any(
            (not isinstance(r, int)) or r < 1 for r in self.ensemble_ranks
        ):
            raise ConfigError(
                "field 'ensemble_ranks': entries must be positive integers"
            )
        if isinstance(self.seeds, int):
            if self.seeds < 1:
                raise ConfigError("field 'seeds': count must be positive")
        elif not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("field 'seeds': list entries must be integers")
        for name in ("dlra_substeps", "dense_cap", "metric_stride", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"field '{name}': must be >= 1")
        merged = dict(SCENARIO_DEFAULTS[self.scenario])
        for key, value in self.params.items():
            if key not in merged:
                raise ConfigError(
                    f"table '{self.scenario}': unknown key {key!r}, "
                    f"expected from {sorted(merged)}"
                )
            merged[key] = value
        self.params = merged

    @property
    def seed_list(self) -> list:
        if isinstance(self.seeds, int):
            return list(range(self.seeds))
        return list(self.seeds)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate a TOML experiment configuration file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")  # decoder message carries line info

    scenario = raw.get("scenario")
    if not isinstance(scenario, str):
        raise ConfigError("field 'scenario': required string")

    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCENARIOS:
                raise ConfigError(f"table '{key}': not a known scenario table")
            continue
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(
                f"field '{key}': unknown top-level key, expected from "
                f"{sorted(TOP_LEVEL_KEYS)}"
            )
        kwargs[key] = value
    kwargs["params"] = raw.get(scenario, {})
    return ExperimentConfig(**kwargs)


def config_echo(cfg: ExperimentConfig) -> str:
    """Deterministic flat rendering of the full configuration."""
    lines = [
        f"scenario = {cfg.scenario}",
        f"methods = {','.join(cfg.methods)}",
        f"ranks = {','.join(str(r) for r in cfg.ranks)}",
        f"seeds = {','.join(str(s) for s in cfg.seed_list)}",
        f"dlra_substeps = {cfg.dlra_substeps}",
        f"dense_cap = {cfg.dense_cap}",
        f"metric_stride = {cfg.metric_stride}",
        f"threads = {cfg.threads}",
        f"out_dir = {cfg.out_dir}",
        f"dump_factors = {cfg.dump_factors}",
    ]
    for key in sorted(cfg.params):
        lines.append(f"{cfg.scenario}.{key} = {cfg.params[key]}")
    return "\n".join(lines)
