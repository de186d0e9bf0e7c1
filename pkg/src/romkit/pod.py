"""Proper orthogonal decomposition of snapshot data.

Snapshots are stored column-wise: a state trajectory sampled at N+1
instants gives an n x (N+1) matrix. States are min-max normalized row
by row before the decomposition so that small-magnitude states carry
the same weight as large ones, and the resulting orthonormal modes act
on normalized coordinates throughout the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DecompositionError

# Ratio of snapshot count to state dimension below which the sample is
# considered thin for basis identification.
RECOMMENDED_SNAPSHOT_FACTOR = 10


@dataclass(frozen=True)
class NormalizationParams:
    """Per-state min-max statistics, fitted on a snapshot matrix."""

    x_min: np.ndarray
    x_max: np.ndarray

    def __post_init__(self):
        x_min = np.asarray(self.x_min, dtype=float)
        x_max = np.asarray(self.x_max, dtype=float)
        if x_min.ndim != 1 or x_min.shape != x_max.shape:
            raise ContractViolationError("x_min and x_max must be 1-D arrays of equal length")
        if np.any(x_max < x_min):
            raise ContractViolationError("x_max must be >= x_min componentwise")
        object.__setattr__(self, "x_min", x_min)
        object.__setattr__(self, "x_max", x_max)

    @property
    def n_states(self) -> int:
        return self.x_min.shape[0]

    @property
    def spans(self) -> np.ndarray:
        return self.x_max - self.x_min

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask of states whose snapshots were constant."""
        return self.spans == 0.0


@dataclass(frozen=True)
class ReducedBasis:
    """Truncated orthonormal basis of the normalized snapshot space.

    ``modes`` is n x r with orthonormal columns, ``singular_values``
    holds the retained singular values in nonincreasing order and
    ``total_energy`` the sum of ALL squared singular values of the
    matrix the basis was computed from.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    total_energy: float

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=float)
        sv = np.asarray(self.singular_values, dtype=float)
        if modes.ndim != 2:
            raise ContractViolationError("modes must be a 2-D array")
        if sv.ndim != 1 or sv.shape[0] != modes.shape[1]:
            raise ContractViolationError("need one singular value per retained mode")
        if np.any(np.diff(sv) > 0):
            raise ContractViolationError("singular values must be nonincreasing")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "singular_values", sv)

    @property
    def n_states(self) -> int:
        return self.modes.shape[0]

    @property
    def order(self) -> int:
        return self.modes.shape[1]


class SnapshotMatrix:
    """Validated wrapper around an n x (N+1) snapshot matrix."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise ContractViolationError("snapshot data must be 2-D")
        if not np.all(np.isfinite(data)):
            raise ContractViolationError("snapshot data contains non-finite entries")
        n, m = data.shape
        if m < n:
            raise ContractViolationError(
                f"need at least as many snapshots as states, got {m} < {n}"
            )
        if m < RECOMMENDED_SNAPSHOT_FACTOR * n:
            warnings.warn(
                f"snapshot count {m} is below {RECOMMENDED_SNAPSHOT_FACTOR}x the state "
                f"dimension {n}; the basis may be poorly sampled",
                stacklevel=2,
            )
        self.data = data

    @property
    def n_states(self) -> int:
        return self.data.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


def fit_normalization(data: np.ndarray) -> NormalizationParams:
    """Fit per-state min-max statistics on a snapshot matrix."""
    if isinstance(data, SnapshotMatrix):
        data = data.data
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ContractViolationError("normalization statistics need a 2-D snapshot matrix")
    return NormalizationParams(x_min=data.min(axis=1), x_max=data.max(axis=1))


def _check_state_dim(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[0] != n:
        raise ContractViolationError(f"{what} must have leading dimension {n}, got {x.shape}")
    return x


def normalize(x: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Map states into [0, 1] per row; constant rows map to 0.5.

    Accepts a single state vector or a matrix with one state per column.
    Values outside the fitted range extrapolate linearly.
    """
    x = _check_state_dim(x, params.n_states, "state")
    spans = params.spans.copy()
    mask = params.degenerate
    spans[mask] = 1.0
    x_min = params.x_min
    if x.ndim == 2:
        spans = spans[:, None]
        x_min = x_min[:, None]
    out = (x - x_min) / spans
    if x.ndim == 2:
        out[mask, :] = 0.5
    else:
        out[mask] = 0.5
    return out


def denormalize(z: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Inverse of :func:`normalize`; constant rows return their fitted value."""
    z = _check_state_dim(z, params.n_states, "normalized state")
    spans = params.spans
    x_min = params.x_min
    if z.ndim == 2:
        spans = spans[:, None]
        x_min = x_min[:, None]
    return x_min + spans * z


def _fix_mode_signs(modes: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    idx = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[idx, np.arange(modes.shape[1])])
    signs[signs == 0] = 1.0
    return modes * signs


def compute_basis(data: np.ndarray, order: int) -> ReducedBasis:
    """Truncated basis of a (normalized) snapshot matrix.

    For wide matrices (more than ``RECOMMENDED_SNAPSHOT_FACTOR`` times
    as many snapshots as states) the thin SVD is obtained from an
    eigendecomposition of the small n x n Gram matrix, otherwise from a
    direct SVD. Mode signs are fixed so results do not depend on the
    LAPACK driver's sign convention.
    """
    if isinstance(data, SnapshotMatrix):
        data = data.data
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ContractViolationError("snapshot data must be 2-D")
    n, m = data.shape
    max_order = min(n, m)
    if not 1 <= order <= max_order:
        raise ContractViolationError(
            f"order must lie in [1, {max_order}] for a {n} x {m} matrix, got {order}"
        )
    total_energy = float(np.sum(data * data))
    try:
        if m > RECOMMENDED_SNAPSHOT_FACTOR * n:
            gram = data @ data.T
            eigvals, eigvecs = np.linalg.eigh(gram)
            eigvals = eigvals[::-1]
            eigvecs = eigvecs[:, ::-1]
            sv = np.sqrt(np.clip(eigvals[:order], 0.0, None))
            modes = eigvecs[:, :order]
        else:
            modes, sv, _ = np.linalg.svd(data, full_matrices=False)
            modes = modes[:, :order]
            sv = sv[:order]
    except np.linalg.LinAlgError as exc:
        scale = float(np.max(np.abs(data))) if data.size else 0.0
        raise DecompositionError(
            f"decomposition of {n} x {m} snapshot matrix failed ({exc}); "
            f"largest entry magnitude {scale:.3e}"
        ) from exc
    return ReducedBasis(
        modes=_fix_mode_signs(modes),
        singular_values=sv,
        total_energy=total_energy,
    )


def energy_fraction(basis: ReducedBasis, order: int) -> float:
    """Fraction of total snapshot energy captured by the first ``order`` modes."""
    if not 0 <= order <= basis.order:
        raise ContractViolationError(
            f"order must lie in [0, {basis.order}], got {order}"
        )
    if basis.total_energy == 0.0:
        return 1.0
    captured = float(np.sum(basis.singular_values[:order] ** 2))
    return captured / basis.total_energy


def reduce(x: np.ndarray, basis: ReducedBasis, params: NormalizationParams) -> np.ndarray:
    """Project states onto the basis: normalize, then apply the modes."""
    return basis.modes.T @ normalize(x, params)


def reconstruct(xi: np.ndarray, basis: ReducedBasis, params: NormalizationParams) -> np.ndarray:
    """Lift reduced coordinates back to full states."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim not in (1, 2) or xi.shape[0] != basis.order:
        raise ContractViolationError(
            f"reduced state must have leading dimension {basis.order}, got {xi.shape}"
        )
    return denormalize(basis.modes @ xi, params)


def rmse(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Trajectory mismatch: sqrt of the summed squared error over N.

    Both arguments are n x (N+1) matrices whose first column is the
    initial instant; the divisor is the number of transitions N, not
    the number of entries.
    """
    reference = np.asarray(reference, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if reference.shape != estimate.shape or reference.ndim != 2:
        raise ContractViolationError(
            f"need equal 2-D shapes, got {reference.shape} vs {estimate.shape}"
        )
    n_transitions = reference.shape[1] - 1
    if n_transitions < 1:
        raise ContractViolationError("rmse needs at least two snapshot columns")
    diff = reference - estimate
    return float(np.sqrt(np.sum(diff * diff) / n_transitions))
