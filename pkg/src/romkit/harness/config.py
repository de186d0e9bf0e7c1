"""Experiment configuration: one flat INI file drives every command.

The file is plain ``key = value`` under a handful of sections.  Values
here are deliberately scalar so the whole experiment is reviewable at a
glance; structured module configs (plant, excitation, training) are
built on demand from these fields.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .. import excitation, mlp, plant
from ..errors import ConfigurationError

# Fixed per-purpose stream identities for deriving child seeds from the
# base seed.  Stable integers, never derived from string hashing, so a
# config file reproduces the same streams on any interpreter.
STREAM_IDS = {
    "snapshots": 1,
    "validation": 2,
    "training": 3,
    "estimation_inputs": 4,
    "process_noise": 5,
    "measurement_noise": 6,
    "model_init": 7,
    "dataset_split": 8,
    "jitter": 9,
}


def stream_seed(base_seed: int, stream: str, index: int = 0) -> int:
    """Deterministic child seed for a named random stream."""
    if stream not in STREAM_IDS:
        raise ConfigurationError(f"unknown random stream '{stream}'")
    ss = np.random.SeedSequence([int(base_seed), STREAM_IDS[stream], int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run needs, with defaults matching the
    headline experiment: 12,000 snapshot samples, order sweep 20..90,
    a 3x128 surrogate at order 30, and 600-step estimation runs."""

    output_dir: str = "runs/default"
    base_seed: int = 0

    # excitation
    levels: int = 10
    hold_min: int = 30
    hold_max: int = 100
    f_l_min: float = 0.48
    f_l_max: float = 0.66
    q_reb_min: float = 0.14
    q_reb_max: float = 0.20
    f_g_min: float = 0.8
    f_g_max: float = 1.2

    # dataset
    snapshot_samples: int = 12000
    validation_samples: int = 600
    training_pairs: int = 100000
    training_segment: int = 2000
    sweep_orders: tuple[int, ...] = (20, 30, 40, 50, 60, 70, 80, 90)
    reduced_order: int = 30

    # training
    hidden_layers: tuple[int, ...] = (128, 128, 128)
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_patience: int = 8
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20
    training_jitter: float = 0.01

    # estimation
    estimation_horizon: int = 600
    burn_in: int = 50
    initial_cov: float = 0.1
    noise_scale: float = 0.01

    # plant discretization
    stages_per_column: int = 5
    sample_interval_s: float = 30.0
    integrator_substeps: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "sweep_orders", tuple(int(r) for r in self.sweep_orders))
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        positive = {
            "levels": self.levels,
            "snapshot_samples": self.snapshot_samples,
            "validation_samples": self.validation_samples,
            "training_pairs": self.training_pairs,
            "training_segment": self.training_segment,
            "reduced_order": self.reduced_order,
            "estimation_horizon": self.estimation_horizon,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "lr_decay_patience": self.lr_decay_patience,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.training_jitter < 0:
            raise ConfigurationError(
                f"training_jitter must be >= 0, got {self.training_jitter}"
            )
        if self.burn_in < 0 or self.burn_in >= self.estimation_horizon:
            raise ConfigurationError(
                f"burn_in must lie in [0, {self.estimation_horizon}), got {self.burn_in}"
            )
        if not self.sweep_orders or len(set(self.sweep_orders)) != len(self.sweep_orders):
            raise ConfigurationError("sweep_orders must be distinct and nonempty")
        if self.noise_scale < 0 or self.initial_cov <= 0:
            raise ConfigurationError("noise_scale must be >= 0 and initial_cov > 0")

    @property
    def input_bounds(self) -> np.ndarray:
        return np.array(
            [
                [self.f_l_min, self.f_l_max],
                [self.q_reb_min, self.q_reb_max],
                [self.f_g_min, self.f_g_max],
            ]
        )

    def plant_config(self) -> plant.PlantConfig:
        return plant.PlantConfig(
            stages_per_column=self.stages_per_column,
            sample_interval_s=self.sample_interval_s,
            integrator_substeps=self.integrator_substeps,
        )

    def prms_config(self, stream: str, horizon: int, index: int = 0) -> excitation.PrmsConfig:
        return excitation.PrmsConfig(
            levels=self.levels,
            bounds=self.input_bounds,
            hold_range_samples=(self.hold_min, self.hold_max),
            horizon_samples=horizon,
            seed=stream_seed(self.base_seed, stream, index),
        )

    def train_config(self) -> mlp.TrainConfig:
        return mlp.TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.patience,
            seed=stream_seed(self.base_seed, "dataset_split"),
            lr_decay=self.lr_decay,
            lr_decay_patience=self.lr_decay_patience,
        )

    def network_dims(self) -> tuple[int, ...]:
        return (plant.N_INPUTS + self.reduced_order,) + self.hidden_layers + (
            self.reduced_order,
        )

    def fast_profile(self) -> "ExperimentConfig":
        """Scaled-down dataset sizes for quick turnaround; horizons and
        network shape are untouched so behavior stays representative."""
        return replace(self, snapshot_samples=2000, training_pairs=10000)


_SECTIONS = {
    "run": ("output_dir", "base_seed"),
    "excitation": (
        "levels",
        "hold_min",
        "hold_max",
        "f_l_min",
        "f_l_max",
        "q_reb_min",
        "q_reb_max",
        "f_g_min",
        "f_g_max",
    ),
    "dataset": (
        "snapshot_samples",
        "validation_samples",
        "training_pairs",
        "training_segment",
        "sweep_orders",
        "reduced_order",
    ),
    "training": (
        "hidden_layers",
        "learning_rate",
        "lr_decay",
        "lr_decay_patience",
        "batch_size",
        "max_epochs",
        "patience",
        "training_jitter",
    ),
    "estimation": ("estimation_horizon", "burn_in", "initial_cov", "noise_scale"),
    "plant": ("stages_per_column", "sample_interval_s", "integrator_substeps"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        # tuple-of-int fields are written space separated
        return tuple(int(tok) for tok in raw.split())
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse '{raw}' for option '{name}'") from exc


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an INI experiment file, rejecting unknown options."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        for name, raw in parser.items(section):
            if name not in _SECTIONS[section]:
                raise ConfigurationError(
                    f"unknown option '{name}' in section [{section}]"
                )
            values[name] = _parse_value(name, raw)
    return ExperimentConfig(**values)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write a config back out, one section per concern."""
    parser = configparser.ConfigParser()
    for section, names in _SECTIONS.items():
        parser[section] = {name: _format_value(getattr(cfg, name)) for name in names}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        parser.write(fh)


def config_digest_source(cfg: ExperimentConfig) -> str:
    """Canonical text form of a config, used for manifest digests."""
    parts = []
    for section, names in sorted(_SECTIONS.items()):
        for name in names:
            parts.append(f"{section}.{name}={_format_value(getattr(cfg, name))}")
    return "\n".join(parts)
