"""Recursive state estimation on the capture plant.

Three extended Kalman filter variants share one update routine: the
full-order filter linearizes the plant step map by finite differences,
the projected filter does the same in reduced coordinates, and the
surrogate filter uses the trained network together with its analytic
state Jacobian.  Estimates are reported in physical units; the reduced
filters keep their state in normalized reduced coordinates internally.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import mlp, plant, pod
from .errors import (
    ConfigurationError,
    ContractViolationError,
    FilterDivergenceError,
    SingularUpdateError,
)


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal process and measurement noise, physical units.

    ``process_std[i]`` is the per-sample disturbance standard deviation
    of state i; ``measurement_std[j]`` belongs to the j-th selected
    measurement.
    """

    process_std: np.ndarray
    measurement_std: np.ndarray

    def __post_init__(self) -> None:
        for name in ("process_std", "measurement_std"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ConfigurationError(f"{name} must be a nonempty vector")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigurationError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, arr)


def build_noise_model(
    steady_state: np.ndarray,
    selection: tuple[int, ...],
    scale: float = 0.01,
) -> NoiseModel:
    """Noise levels proportional to the steady state (default 1%)."""
    x_s = np.asarray(steady_state, dtype=float)
    sel = _selection_indices(selection, x_s.size)
    return NoiseModel(
        process_std=scale * np.abs(x_s),
        measurement_std=scale * np.abs(x_s[sel]),
    )


@dataclass(frozen=True)
class EkfConfig:
    """Measurement geometry and tuning shared by all filter variants."""

    selection: tuple[int, ...]
    noise: NoiseModel
    initial_cov: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "selection", tuple(int(i) for i in self.selection))
        if len(self.selection) != self.noise.measurement_std.size:
            raise ConfigurationError(
                f"selection has {len(self.selection)} indices but the noise "
                f"model provides {self.noise.measurement_std.size} measurement levels"
            )
        if self.initial_cov <= 0:
            raise ConfigurationError("initial_cov must be positive")


@dataclass
class PhaseTimings:
    """Wall-clock totals split by work type, accumulated per step."""

    model_prediction_s: float = 0.0
    discretization_s: float = 0.0
    other_s: float = 0.0
    steps: int = 0

    @property
    def total_s(self) -> float:
        return self.model_prediction_s + self.discretization_s + self.other_s

    def per_step_ms(self) -> dict[str, float]:
        if self.steps == 0:
            return {"model_prediction": 0.0, "discretization": 0.0, "other": 0.0}
        k = 1000.0 / self.steps
        return {
            "model_prediction": k * self.model_prediction_s,
            "discretization": k * self.discretization_s,
            "other": k * self.other_s,
        }


@dataclass(frozen=True)
class FilterResult:
    """Estimates plus per-step health diagnostics and timing."""

    estimates: np.ndarray
    reduced: np.ndarray | None
    min_eigenvalues: np.ndarray
    symmetry_errors: np.ndarray
    gain_residuals: np.ndarray
    timings: PhaseTimings


def _selection_indices(selection: tuple[int, ...], n: int) -> np.ndarray:
    sel = np.asarray(selection, dtype=int)
    if sel.ndim != 1 or sel.size == 0:
        raise ConfigurationError("selection must be a nonempty index sequence")
    if np.any(sel < 1) or np.any(sel > n):
        raise ConfigurationError(f"selection indices must lie in [1, {n}]")
    if len(np.unique(sel)) != sel.size:
        raise ConfigurationError("selection indices must be distinct")
    return sel - 1


def _safe_spans(normalization: pod.NormalizationParams) -> np.ndarray:
    spans = normalization.spans.copy()
    spans[normalization.degenerate] = 1.0
    return spans


def reduced_process_cov(
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
    process_std: np.ndarray,
) -> np.ndarray:
    """Project per-state disturbance variances onto the basis.

    The reduced state lives on normalized coordinates, so each physical
    standard deviation is first divided by its state's span; states the
    normalization window marks as constant contribute nothing.
    """
    std = np.asarray(process_std, dtype=float)
    if std.shape != (basis.n_states,):
        raise ContractViolationError(
            f"process_std must have shape ({basis.n_states},), got {std.shape}"
        )
    scaled = np.where(normalization.degenerate, 0.0, std / _safe_spans(normalization))
    cov = basis.modes.T @ (basis.modes * (scaled * scaled)[:, None])
    return (cov + cov.T) / 2.0


def observation_operator(
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
    selection: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """Affine map from reduced state to expected measurements.

    Because measurements are selected physical states and reconstruction
    is affine, y = C xi + offset holds exactly; C needs no re-linearization.
    """
    rows = _selection_indices(selection, basis.n_states)
    C = normalization.spans[rows, None] * basis.modes[rows, :]
    offset = normalization.x_min[rows]
    return C, offset


def lift(
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
    xi: np.ndarray,
) -> np.ndarray:
    """Map reduced estimates back to physical coordinates."""
    return pod.reconstruct(xi, basis, normalization)


def _kalman_update(
    x: np.ndarray,
    P: np.ndarray,
    y: np.ndarray,
    C: np.ndarray,
    offset: np.ndarray,
    R: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Measurement update; returns the gain solve residual as well."""
    CP = C @ P
    S = CP @ C.T + R
    S = (S + S.T) / 2.0
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        eigs = np.linalg.eigvalsh(S)
        raise SingularUpdateError(
            f"innovation covariance is not positive definite "
            f"(min eigenvalue {eigs.min():.3e})"
        ) from exc
    gain = cho_solve(factor, CP).T
    x_post = x + gain @ (y - (C @ x + offset))
    P_post = P - gain @ CP
    P_post = (P_post + P_post.T) / 2.0
    residual = float(np.max(np.abs(gain @ S - CP.T)))
    return x_post, P_post, residual


def _check_run_arrays(
    inputs: np.ndarray, measurements: np.ndarray, n_meas: int
) -> tuple[np.ndarray, np.ndarray, int]:
    inputs = np.asarray(inputs, dtype=float)
    measurements = np.asarray(measurements, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != plant.N_INPUTS or inputs.shape[0] == 0:
        raise ContractViolationError(
            f"inputs must have shape (T, {plant.N_INPUTS}), got {inputs.shape}"
        )
    if measurements.shape != (inputs.shape[0], n_meas):
        raise ContractViolationError(
            f"measurements must have shape ({inputs.shape[0]}, {n_meas}), "
            f"got {measurements.shape}"
        )
    if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(measurements))):
        raise ContractViolationError("inputs and measurements must be finite")
    return inputs, measurements, inputs.shape[0]


def _predict_cov(A: np.ndarray, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    P_pred = A @ P @ A.T + Q
    return (P_pred + P_pred.T) / 2.0


def run_pod_mlp_ekf(
    inputs: np.ndarray,
    measurements: np.ndarray,
    params: mlp.MlpParams,
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
    config: EkfConfig,
) -> FilterResult:
    """Filter on the surrogate model in reduced coordinates.

    ``inputs[k]`` drives the prediction into sample k+1 and
    ``measurements[k]`` is the noisy observation taken there.  The
    surrogate supplies both the prediction and an analytic Jacobian, so
    no plant evaluations occur; the discretization phase is identically
    zero and is reported as such.
    """
    inputs, measurements, T = _check_run_arrays(
        inputs, measurements, len(config.selection)
    )
    r = basis.order
    if params.layer_dims[0] != plant.N_INPUTS + r or params.layer_dims[-1] != r:
        raise ContractViolationError(
            f"network maps {params.layer_dims[0]} -> {params.layer_dims[-1]} "
            f"but the basis has order {r}"
        )
    C, offset = observation_operator(basis, normalization, config.selection)
    Q_r = reduced_process_cov(basis, normalization, config.noise.process_std)
    R = np.diag(config.noise.measurement_std ** 2)

    xi = basis.modes.T @ np.full(basis.n_states, 0.5)
    P = config.initial_cov * np.eye(r)
    reduced = np.empty((r, T + 1))
    reduced[:, 0] = xi
    min_eig = np.empty(T)
    sym_err = np.empty(T)
    gain_res = np.empty(T)
    timings = PhaseTimings()

    for k in range(T):
        u = inputs[k]
        t0 = time.perf_counter()
        xi_pred = mlp.forward(params, xi, u)
        t1 = time.perf_counter()
        A = mlp.jacobian_state(params, xi, u)
        P_pred = _predict_cov(A, P, Q_r)
        try:
            xi, P, gain_res[k] = _kalman_update(
                xi_pred, P_pred, measurements[k], C, offset, R
            )
        except SingularUpdateError as exc:
            raise SingularUpdateError(f"step {k + 1}: {exc}") from exc
        t2 = time.perf_counter()
        timings.model_prediction_s += t1 - t0
        timings.other_s += t2 - t1
        timings.steps += 1
        if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(P))):
            raise FilterDivergenceError(f"estimate diverged at step {k + 1}")
        reduced[:, k + 1] = xi
        sym_err[k] = float(np.max(np.abs(P - P.T)))
        min_eig[k] = float(np.linalg.eigvalsh(P).min())

    return FilterResult(
        estimates=lift(basis, normalization, reduced),
        reduced=reduced,
        min_eigenvalues=min_eig,
        symmetry_errors=sym_err,
        gain_residuals=gain_res,
        timings=timings,
    )


def run_pod_ekf(
    inputs: np.ndarray,
    measurements: np.ndarray,
    plant_config: plant.PlantConfig,
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
    config: EkfConfig,
) -> FilterResult:
    """Filter on the projected plant dynamics.

    Prediction reconstructs the physical state, advances it one sample
    with the plant integrator, and projects back; the state Jacobian
    comes from forward differences in the reduced coordinates, which is
    where the plant-evaluation cost of this variant lives.
    """
    inputs, measurements, T = _check_run_arrays(
        inputs, measurements, len(config.selection)
    )
    n = plant_config.n_states
    if basis.n_states != n:
        raise ContractViolationError(
            f"basis is over {basis.n_states} states, plant has {n}"
        )
    r = basis.order
    C, offset = observation_operator(basis, normalization, config.selection)
    Q_r = reduced_process_cov(basis, normalization, config.noise.process_std)
    R = np.diag(config.noise.measurement_std ** 2)

    def project(states: np.ndarray) -> np.ndarray:
        return basis.modes.T @ pod.normalize(states, normalization)

    xi = basis.modes.T @ np.full(n, 0.5)
    P = config.initial_cov * np.eye(r)
    reduced = np.empty((r, T + 1))
    reduced[:, 0] = xi
    min_eig = np.empty(T)
    sym_err = np.empty(T)
    gain_res = np.empty(T)
    timings = PhaseTimings()

    for k in range(T):
        u = inputs[k]
        t0 = time.perf_counter()
        xi_pred = project(
            plant.step(plant_config, lift(basis, normalization, xi), u)
        )
        t1 = time.perf_counter()
        h = 1e-6 * np.maximum(1.0, np.abs(xi))
        perturbed = lift(basis, normalization, xi[:, None] + np.diag(h))
        A = (project(plant.step(plant_config, perturbed, u)) - xi_pred[:, None]) / h
        t2 = time.perf_counter()
        P_pred = _predict_cov(A, P, Q_r)
        try:
            xi, P, gain_res[k] = _kalman_update(
                xi_pred, P_pred, measurements[k], C, offset, R
            )
        except SingularUpdateError as exc:
            raise SingularUpdateError(f"step {k + 1}: {exc}") from exc
        t3 = time.perf_counter()
        timings.model_prediction_s += t1 - t0
        timings.discretization_s += t2 - t1
        timings.other_s += t3 - t2
        timings.steps += 1
        if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(P))):
            raise FilterDivergenceError(f"estimate diverged at step {k + 1}")
        reduced[:, k + 1] = xi
        sym_err[k] = float(np.max(np.abs(P - P.T)))
        min_eig[k] = float(np.linalg.eigvalsh(P).min())

    return FilterResult(
        estimates=lift(basis, normalization, reduced),
        reduced=reduced,
        min_eigenvalues=min_eig,
        symmetry_errors=sym_err,
        gain_residuals=gain_res,
        timings=timings,
    )


def run_full_ekf(
    inputs: np.ndarray,
    measurements: np.ndarray,
    plant_config: plant.PlantConfig,
    config: EkfConfig,
    initial_state: np.ndarray,
    initial_cov_diag: np.ndarray,
) -> FilterResult:
    """Filter directly on the full-order plant.

    The caller chooses the physical initial guess and the diagonal of
    the initial covariance so that comparisons against the reduced
    filters start from the same prior expressed in physical units.
    """
    inputs, measurements, T = _check_run_arrays(
        inputs, measurements, len(config.selection)
    )
    n = plant_config.n_states
    x = np.asarray(initial_state, dtype=float)
    p0 = np.asarray(initial_cov_diag, dtype=float)
    if x.shape != (n,) or p0.shape != (n,):
        raise ContractViolationError(
            f"initial state and covariance diagonal must have shape ({n},)"
        )
    if np.any(p0 <= 0):
        raise ConfigurationError("initial covariance diagonal must be positive")
    if config.noise.process_std.size != n:
        raise ContractViolationError(
            f"noise model covers {config.noise.process_std.size} states, "
            f"plant has {n}"
        )
    sel = _selection_indices(config.selection, n)
    C = np.eye(n)[sel]
    offset = np.zeros(sel.size)
    Q = np.diag(config.noise.process_std ** 2)
    R = np.diag(config.noise.measurement_std ** 2)

    P = np.diag(p0)
    estimates = np.empty((n, T + 1))
    estimates[:, 0] = x
    min_eig = np.empty(T)
    sym_err = np.empty(T)
    gain_res = np.empty(T)
    timings = PhaseTimings()

    for k in range(T):
        u = inputs[k]
        t0 = time.perf_counter()
        x_pred = plant.step(plant_config, x, u)
        t1 = time.perf_counter()
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        stepped = plant.step(plant_config, x[:, None] + np.diag(h), u)
        A = (stepped - x_pred[:, None]) / h
        t2 = time.perf_counter()
        P_pred = _predict_cov(A, P, Q)
        try:
            x, P, gain_res[k] = _kalman_update(
                x_pred, P_pred, measurements[k], C, offset, R
            )
        except SingularUpdateError as exc:
            raise SingularUpdateError(f"step {k + 1}: {exc}") from exc
        t3 = time.perf_counter()
        timings.model_prediction_s += t1 - t0
        timings.discretization_s += t2 - t1
        timings.other_s += t3 - t2
        timings.steps += 1
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
            raise FilterDivergenceError(f"estimate diverged at step {k + 1}")
        estimates[:, k + 1] = x
        sym_err[k] = float(np.max(np.abs(P - P.T)))
        min_eig[k] = float(np.linalg.eigvalsh(P).min())

    return FilterResult(
        estimates=estimates,
        reduced=None,
        min_eigenvalues=min_eig,
        symmetry_errors=sym_err,
        gain_residuals=gain_res,
        timings=timings,
    )


def normalized_rmse(
    normalization: pod.NormalizationParams,
    truth: np.ndarray,
    estimates: np.ndarray,
    burn_in: int = 0,
) -> float:
    """Per-entry RMS error in normalized coordinates.

    Both trajectories are column-per-sample; the first ``burn_in``
    samples are excluded so the startup transient of a filter seeded
    far from the truth does not dominate the score.
    """
    truth = np.asarray(truth, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truth.shape != estimates.shape or truth.ndim != 2:
        raise ContractViolationError(
            f"trajectories must share a 2-D shape, got {truth.shape} "
            f"and {estimates.shape}"
        )
    if not 0 <= burn_in < truth.shape[1]:
        raise ContractViolationError(
            f"burn-in {burn_in} must leave at least one sample of {truth.shape[1]}"
        )
    zt = pod.normalize(truth[:, burn_in:], normalization)
    ze = pod.normalize(estimates[:, burn_in:], normalization)
    return float(np.sqrt(np.mean((zt - ze) ** 2)))
