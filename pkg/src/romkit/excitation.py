"""Pseudo-random multi-level input sequences for identification runs.

Each input channel independently holds one of a fixed grid of levels for
a randomly drawn number of samples, which gives persistently exciting,
piecewise-constant signals. Randomness comes from numpy's PCG64 bit
generator seeded through ``SeedSequence(seed).spawn(channel)``, so a
given seed reproduces the same sequences on any platform.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolationError

# Nominal actuator ranges: solvent flow (L/s), reboiler duty (KJ/s) and
# flue gas flow (m^3/s).
DEFAULT_INPUT_BOUNDS = np.array([[0.48, 0.66], [0.14, 0.20], [0.8, 1.2]])

INPUT_NAMES = ("F_L", "Q_reb", "F_G")


@dataclass(frozen=True)
class PrmsConfig:
    """Settings for one multi-level excitation campaign.

    ``bounds`` has one row per channel holding (low, high). Hold lengths
    are drawn uniformly from the closed integer range
    ``hold_range_samples``, measured in sampling intervals.
    """

    levels: int = 10
    bounds: np.ndarray = field(default_factory=lambda: DEFAULT_INPUT_BOUNDS.copy())
    hold_range_samples: tuple[int, int] = (30, 100)
    horizon_samples: int = 12000
    seed: int = 0

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise ConfigurationError("bounds must be an (n_channels, 2) array")
        object.__setattr__(self, "bounds", bounds)
        if self.levels < 2:
            raise ConfigurationError(f"need at least 2 levels, got {self.levels}")
        lo, hi = self.hold_range_samples
        if lo < 1 or hi < lo:
            raise ConfigurationError(
                f"hold range must satisfy 1 <= min <= max, got ({lo}, {hi})"
            )
        if self.horizon_samples < 0:
            raise ConfigurationError("horizon_samples must be nonnegative")
        if np.any(bounds[:, 1] < bounds[:, 0]):
            raise ConfigurationError("each bounds row must be (low, high) with low <= high")


def level_grid(config: PrmsConfig, channel: int) -> np.ndarray:
    """Equispaced level values for one channel, endpoints included."""
    lo, hi = config.bounds[channel]
    return np.linspace(lo, hi, config.levels)


def generate_prms(config: PrmsConfig) -> np.ndarray:
    """Generate a (horizon_samples, n_channels) piecewise-constant matrix.

    Channels switch levels independently of each other; the final hold
    of each channel is truncated at the horizon. Values always lie on
    the channel's level grid, hence inside its bounds.
    """
    n_channels = config.bounds.shape[0]
    horizon = config.horizon_samples
    out = np.empty((horizon, n_channels))
    children = np.random.SeedSequence(config.seed).spawn(n_channels)
    hold_lo, hold_hi = config.hold_range_samples
    for ch in range(n_channels):
        rng = np.random.Generator(np.random.PCG64(children[ch]))
        grid = level_grid(config, ch)
        filled = 0
        while filled < horizon:
            hold = int(rng.integers(hold_lo, hold_hi + 1))
            value = grid[int(rng.integers(0, config.levels))]
            take = min(hold, horizon - filled)
            out[filled : filled + take, ch] = value
            filled += take
    return out


def hold_lengths(sequence: np.ndarray) -> list[np.ndarray]:
    """Lengths of the constant segments of each channel.

    The last segment of each channel is dropped because the horizon
    truncates it, so only completed holds are returned.
    """
    seq = np.asarray(sequence)
    if seq.ndim != 2:
        raise ContractViolationError("sequence must be 2-D (samples, channels)")
    result = []
    for ch in range(seq.shape[1]):
        col = seq[:, ch]
        change = np.flatnonzero(col[1:] != col[:-1]) + 1
        edges = np.concatenate(([0], change, [len(col)]))
        result.append(np.diff(edges)[:-1])
    return result


def write_inputs_csv(path, sequence: np.ndarray) -> None:
    """Write an input sequence as CSV: sample_index, F_L, Q_reb, F_G."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or seq.shape[1] != len(INPUT_NAMES):
        raise ContractViolationError(
            f"expected a (samples, {len(INPUT_NAMES)}) sequence, got {seq.shape}"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("sample_index",) + INPUT_NAMES)
        for k, row in enumerate(seq):
            writer.writerow([k] + [repr(float(v)) for v in row])


def read_inputs_csv(path) -> np.ndarray:
    """Read a sequence written by :func:`write_inputs_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != INPUT_NAMES:
            raise ContractViolationError(f"unexpected input CSV header: {header}")
        rows = [[float(v) for v in row[1:]] for row in reader]
    return np.asarray(rows)
