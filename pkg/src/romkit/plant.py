"""Deterministic nonlinear reference plant: a two-column capture train.

The plant couples an absorber and a desorber column (five well-mixed
stages each, counter-current liquid and gas phases, four tracked species
plus both phase temperatures per stage) with a lean/rich heat exchanger
and a reboiler. With the default five stages the state vector has 103
entries, indexed 1-based as

    1-20     absorber liquid concentrations, 5 stages per species
             (N2, CO2, MEA, H2O)
    21-25    absorber liquid temperatures, top to bottom
    26-45    absorber gas concentrations, same species order
    46-50    absorber gas temperatures
    51-100   desorber, same layout
    101      rich solvent temperature leaving the exchanger (tube side)
    102      lean solvent temperature leaving the exchanger (shell side)
    103      reboiler temperature

Inputs are u = (F_L, Q_reb, F_G): solvent flow, reboiler duty, flue gas
flow. Stages are numbered top to bottom; liquid is fed at the top and
transported downward, gas is fed at the bottom and transported upward,
both with first-order upwind differences. Interphase transfer uses
smooth van't Hoff style equilibrium factors, so the dynamics are
infinitely differentiable in states and inputs.

The physics is a structurally faithful but deliberately simplified
surrogate. Coefficients are tuned so that, inside the default input
bounds, every state is excited over a wide fraction of its operating
value while magnitudes across states still span several decades. They
are not calibrated to any quantitative solvent chemistry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolationError,
    IntegrationBlowupError,
    NumericalDomainError,
    SteadyStateError,
)

SPECIES = ("N2", "CO2", "MEA", "H2O")
N_SPECIES = len(SPECIES)
N_INPUTS = 3
N_UNIT_STATES = 3  # exchanger tube side, exchanger shell side, reboiler

DEFAULT_INPUT_BOUNDS = np.array([[0.48, 0.66], [0.14, 0.20], [0.8, 1.2]])


@dataclass(frozen=True)
class ThermalGains:
    """Lumped heat-path coefficients for columns, exchanger and reboiler.

    Flow-proportional terms multiply the corresponding input, so their
    units are 1/s per input unit; exchange and loss terms are plain 1/s.
    ``reboiler_heat_floor`` is the duty spent on fixed losses before any
    net heating occurs, and also drives the boilup of the desorber.
    """

    hx_tube_flow: float = 0.011
    hx_shell_flow: float = 0.030
    hx_exchange_tube: float = 0.018
    hx_exchange_shell: float = 0.014
    reboiler_flow: float = 0.0085
    reboiler_heat: float = 70.0
    reboiler_heat_floor: float = 0.12
    reboiler_loss: float = 0.04
    ambient_temp: float = 298.0
    reaction_heat: float = 24.0
    interphase_heat: float = 0.009
    liquid_heat_capacity: float = 1.0
    gas_heat_capacity: float = 0.8


def _default_flow_coefficients() -> np.ndarray:
    # rows: (absorber, desorber); columns: (liquid, gas). Liquid terms
    # scale F_L, the absorber gas term scales F_G and the desorber gas
    # term scales the net reboiler duty.
    return np.array([[0.020, 0.040], [0.018, 0.55]])


def _default_reaction_gains() -> np.ndarray:
    return np.array([0.012, 0.035, 0.012, 0.020])


def _default_equilibrium_base() -> np.ndarray:
    # Gas-over-liquid equilibrium concentration ratios at each column's
    # reference temperature.
    return np.array(
        [
            [1.2, 0.030, 6.0e-5, 0.0045],
            [1.5, 0.075, 1.1e-4, 0.0300],
        ]
    )


@dataclass(frozen=True)
class PlantConfig:
    """Geometry, couplings and feed conditions of the reference plant."""

    stages_per_column: int = 5
    column_flow_coefficients: np.ndarray = field(
        default_factory=_default_flow_coefficients
    )
    reaction_rate_gains: np.ndarray = field(default_factory=_default_reaction_gains)
    heat_transfer_gains: ThermalGains = field(default_factory=ThermalGains)
    input_bounds: np.ndarray = field(default_factory=lambda: DEFAULT_INPUT_BOUNDS.copy())
    sample_interval_s: float = 30.0
    integrator_substeps: int = 10
    # absorber gas feed (flue gas) and its temperature
    flue_gas_conc: np.ndarray = field(
        default_factory=lambda: np.array([12.0, 6.0, 0.02, 3.0])
    )
    flue_gas_temp: float = 314.0
    # blower discharge heating: the flue feed enters at
    # flue_gas_temp + flue_temp_slope * (F_G - 1)
    flue_temp_slope: float = 220.0
    # feed density scaling with blower throughput: the flue concentrations
    # are multiplied by 1 + flue_conc_slope * (F_G - 1)
    flue_conc_slope: float = 0.5
    # trim cooler on the lean return: the absorber liquid feed enters at
    # coolant_temp + lean_cooler_frac * (T_shell - coolant_temp)
    lean_cooler_temp: float = 290.0
    lean_cooler_frac: float = 0.75
    # base composition of the lean solvent returned to the absorber
    lean_feed_base: np.ndarray = field(
        default_factory=lambda: np.array([6.0, 18.0, 300.0, 700.0])
    )
    # fraction of the desorber bottom liquid recycled into the lean feed
    lean_recycle_frac: np.ndarray = field(
        default_factory=lambda: np.array([0.35, 0.55, 0.45, 0.45])
    )
    # relative change of the lean feed per kelvin of shell temperature
    lean_feed_temp_slope: np.ndarray = field(
        default_factory=lambda: np.array([0.004, 0.005, 0.006, 0.006])
    )
    lean_feed_temp_ref: float = 330.0
    # desorber vapor feed at reference boilup, scaled by net duty
    vapor_feed_conc: np.ndarray = field(
        default_factory=lambda: np.array([0.15, 9.0, 0.06, 24.0])
    )
    boilup_duty_ref: float = 0.17
    equilibrium_base: np.ndarray = field(default_factory=_default_equilibrium_base)
    equilibrium_slope: float = 0.012
    reference_temps: np.ndarray = field(default_factory=lambda: np.array([322.0, 382.0]))

    def __post_init__(self):
        for name in (
            "column_flow_coefficients",
            "reaction_rate_gains",
            "input_bounds",
            "flue_gas_conc",
            "lean_feed_base",
            "lean_recycle_frac",
            "lean_feed_temp_slope",
            "vapor_feed_conc",
            "equilibrium_base",
            "reference_temps",
        ):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.stages_per_column < 1:
            raise ConfigurationError("stages_per_column must be >= 1")
        if self.column_flow_coefficients.shape != (2, 2):
            raise ConfigurationError("column_flow_coefficients must be a (2, 2) array")
        if self.reaction_rate_gains.shape != (N_SPECIES,):
            raise ConfigurationError(
                f"reaction_rate_gains must have {N_SPECIES} entries"
            )
        if self.input_bounds.shape != (N_INPUTS, 2):
            raise ConfigurationError(f"input_bounds must be ({N_INPUTS}, 2)")
        if np.any(self.input_bounds[:, 1] <= self.input_bounds[:, 0]):
            raise ConfigurationError("input_bounds rows must be strictly increasing")
        if self.equilibrium_base.shape != (2, N_SPECIES):
            raise ConfigurationError(f"equilibrium_base must be (2, {N_SPECIES})")
        if self.sample_interval_s <= 0:
            raise ConfigurationError("sample_interval_s must be positive")
        if self.integrator_substeps < 1:
            raise ConfigurationError("integrator_substeps must be >= 1")

    @property
    def n_states(self) -> int:
        return 2 * 10 * self.stages_per_column + N_UNIT_STATES


@dataclass(frozen=True)
class StateLayout:
    """Row slices of the packed state vector for one stage count."""

    stages: int

    def column(self, col: int) -> slice:
        size = 10 * self.stages
        return slice(col * size, (col + 1) * size)

    def liquid_conc(self, col: int) -> slice:
        base = col * 10 * self.stages
        return slice(base, base + 4 * self.stages)

    def liquid_temp(self, col: int) -> slice:
        base = col * 10 * self.stages + 4 * self.stages
        return slice(base, base + self.stages)

    def gas_conc(self, col: int) -> slice:
        base = col * 10 * self.stages + 5 * self.stages
        return slice(base, base + 4 * self.stages)

    def gas_temp(self, col: int) -> slice:
        base = col * 10 * self.stages + 9 * self.stages
        return slice(base, base + self.stages)

    @property
    def hx_tube(self) -> int:
        return 20 * self.stages

    @property
    def hx_shell(self) -> int:
        return 20 * self.stages + 1

    @property
    def reboiler(self) -> int:
        return 20 * self.stages + 2

    def concentration_rows(self) -> np.ndarray:
        """0-based rows holding concentrations (nonnegative quantities)."""
        rows = []
        for col in (0, 1):
            rows.extend(range(*self.liquid_conc(col).indices(10**9)))
            rows.extend(range(*self.gas_conc(col).indices(10**9)))
        return np.asarray(rows)

    def temperature_rows(self) -> np.ndarray:
        """0-based rows holding temperatures."""
        rows = []
        for col in (0, 1):
            rows.extend(range(*self.liquid_temp(col).indices(10**9)))
            rows.extend(range(*self.gas_temp(col).indices(10**9)))
        rows.extend([self.hx_tube, self.hx_shell, self.reboiler])
        return np.asarray(sorted(rows))


def layout(config: PlantConfig) -> StateLayout:
    return StateLayout(stages=config.stages_per_column)


def temperature_indices(config: PlantConfig) -> tuple[int, ...]:
    """1-based indices of every temperature state, in ascending order."""
    return tuple(int(i) + 1 for i in layout(config).temperature_rows())


def nominal_input(config: PlantConfig) -> np.ndarray:
    """Midpoint of the input bounds."""
    return config.input_bounds.mean(axis=1)


def _as_columns(x: np.ndarray, n: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != n:
            raise ContractViolationError(f"{what} must have {n} entries, got {x.shape}")
        return x[:, None], True
    if x.ndim == 2 and x.shape[0] == n:
        return x, False
    raise ContractViolationError(f"{what} must be ({n},) or ({n}, m), got {x.shape}")


def _check_input(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (N_INPUTS,):
        raise ContractViolationError(f"input must have shape ({N_INPUTS},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise NumericalDomainError("input vector contains non-finite entries")
    return u


def plant_derivative(config: PlantConfig, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Time derivative of the full state under input u.

    ``x`` may be a single state vector or a matrix of column states;
    the result has the same shape. The map is smooth on all finite
    states, so estimator code may evaluate it slightly outside the
    physical region.
    """
    n = config.n_states
    X, squeeze = _as_columns(x, n, "state")
    u = _check_input(u)
    if not np.all(np.isfinite(X)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
        raise NumericalDomainError(f"state x_{bad + 1} is non-finite")

    J = config.stages_per_column
    m = X.shape[1]
    lay = layout(config)
    gains = config.heat_transfer_gains
    f_l, q_reb, f_g = u
    duty = q_reb - gains.reboiler_heat_floor

    t_tube = X[lay.hx_tube]
    t_shell = X[lay.hx_shell]
    t_reb = X[lay.reboiler]
    dX = np.empty_like(X)

    cl_bottom = {}
    tl_bottom = {}
    for col in (0, 1):
        cl = X[lay.liquid_conc(col)].reshape(N_SPECIES, J, m)
        cl_bottom[col] = cl[:, -1, :]
        tl_bottom[col] = X[lay.liquid_temp(col)].reshape(J, m)[-1]

    for col in (0, 1):
        cl = X[lay.liquid_conc(col)].reshape(N_SPECIES, J, m)
        tl = X[lay.liquid_temp(col)].reshape(J, m)
        cg = X[lay.gas_conc(col)].reshape(N_SPECIES, J, m)
        tg = X[lay.gas_temp(col)].reshape(J, m)

        rate_l = config.column_flow_coefficients[col, 0] * f_l
        if col == 0:
            rate_g = config.column_flow_coefficients[col, 1] * f_g
            cl_feed = (
                config.lean_feed_base[:, None]
                * (
                    1.0
                    + config.lean_feed_temp_slope[:, None]
                    * (t_shell[None, :] - config.lean_feed_temp_ref)
                )
                + config.lean_recycle_frac[:, None] * cl_bottom[1]
            )
            tl_feed = config.lean_cooler_temp + config.lean_cooler_frac * (
                t_shell - config.lean_cooler_temp
            )
            feed_scale = np.atleast_1d(1.0 + config.flue_conc_slope * (f_g - 1.0))
            cg_feed = np.broadcast_to(
                config.flue_gas_conc[:, None] * feed_scale[None, :], (N_SPECIES, m)
            )
            tg_feed = np.full(m, config.flue_gas_temp) + config.flue_temp_slope * (
                f_g - 1.0
            )
        else:
            rate_g = config.column_flow_coefficients[col, 1] * duty
            cl_feed = cl_bottom[0]
            tl_feed = t_tube
            boilup = duty / (config.boilup_duty_ref - gains.reboiler_heat_floor)
            cg_feed = np.broadcast_to(
                (config.vapor_feed_conc * boilup)[:, None], (N_SPECIES, m)
            )
            tg_feed = t_reb

        cl_up = np.concatenate([cl_feed[:, None, :], cl[:, :-1, :]], axis=1)
        tl_up = np.concatenate([tl_feed[None, :], tl[:-1]], axis=0)
        cg_up = np.concatenate([cg[:, 1:, :], cg_feed[:, None, :]], axis=1)
        tg_up = np.concatenate([tg[1:], tg_feed[None, :]], axis=0)

        keq = config.equilibrium_base[col][:, None, None] * np.exp(
            config.equilibrium_slope * (tl[None, :, :] - config.reference_temps[col])
        )
        transfer = config.reaction_rate_gains[:, None, None] * (cg - keq * cl)

        d_cl = rate_l * (cl_up - cl) + transfer
        d_cg = rate_g * (cg_up - cg) - transfer
        d_tl = rate_l * (tl_up - tl) + (
            gains.reaction_heat * transfer[1] - gains.interphase_heat * (tl - tg)
        ) / gains.liquid_heat_capacity
        d_tg = rate_g * (tg_up - tg) + gains.interphase_heat * (tl - tg) / gains.gas_heat_capacity

        dX[lay.liquid_conc(col)] = d_cl.reshape(4 * J, m)
        dX[lay.liquid_temp(col)] = d_tl
        dX[lay.gas_conc(col)] = d_cg.reshape(4 * J, m)
        dX[lay.gas_temp(col)] = d_tg

    dX[lay.hx_tube] = gains.hx_tube_flow * f_l * (tl_bottom[0] - t_tube) + (
        gains.hx_exchange_tube * (t_shell - t_tube)
    )
    dX[lay.hx_shell] = gains.hx_shell_flow * f_l * (t_reb - t_shell) - (
        gains.hx_exchange_shell * (t_shell - t_tube)
    )
    dX[lay.reboiler] = (
        gains.reboiler_flow * f_l * (tl_bottom[1] - t_reb)
        + gains.reboiler_heat * duty
        - gains.reboiler_loss * (t_reb - gains.ambient_temp)
    )

    if not np.all(np.isfinite(dX)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(dX), axis=1))[0])
        raise NumericalDomainError(f"derivative of x_{bad + 1} is non-finite")
    return dX[:, 0] if squeeze else dX


def _rk4(config: PlantConfig, X: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Classic fixed-step RK4 over one sampling interval."""
    h = config.sample_interval_s / config.integrator_substeps
    for sub in range(config.integrator_substeps):
        k1 = plant_derivative(config, X, u)
        k2 = plant_derivative(config, X + 0.5 * h * k1, u)
        k3 = plant_derivative(config, X + 0.5 * h * k2, u)
        k4 = plant_derivative(config, X + h * k3, u)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise IntegrationBlowupError(
                f"integration diverged at substep {sub + 1} of "
                f"{config.integrator_substeps}"
            )
    return X


def step(
    config: PlantConfig,
    x: np.ndarray,
    u: np.ndarray,
    process_noise: np.ndarray | None = None,
) -> np.ndarray:
    """Advance the plant one sampling interval, then add disturbances.

    With ``process_noise`` given (one value per state), the disturbance
    is added to the integrated state and concentrations are clipped at
    zero so the result is again a physical state; a zero noise vector
    reproduces the noise-free result exactly.
    """
    n = config.n_states
    X, squeeze = _as_columns(x, n, "state")
    u = _check_input(u)
    X = _rk4(config, X, u)
    if process_noise is not None:
        noise = np.asarray(process_noise, dtype=float)
        if noise.shape != (n,):
            raise ContractViolationError(
                f"process noise must have shape ({n},), got {noise.shape}"
            )
        X = X + noise[:, None]
        rows = layout(config).concentration_rows()
        X[rows] = np.clip(X[rows], 0.0, None)
    return X[:, 0] if squeeze else X


def measure(
    config: PlantConfig,
    selection: tuple[int, ...],
    x: np.ndarray,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Observe a subset of states by 1-based index, plus sensor noise."""
    n = config.n_states
    sel = np.asarray(selection, dtype=int)
    if sel.ndim != 1 or sel.size == 0:
        raise ConfigurationError("selection must be a nonempty index sequence")
    if np.any(sel < 1) or np.any(sel > n):
        raise ConfigurationError(f"selection indices must lie in [1, {n}]")
    if len(np.unique(sel)) != sel.size:
        raise ConfigurationError("selection indices must be distinct")
    X, squeeze = _as_columns(x, n, "state")
    y = X[sel - 1]
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (sel.size,):
            raise ContractViolationError(
                f"measurement noise must have shape ({sel.size},), got {noise.shape}"
            )
        y = y + noise[:, None]
    return y[:, 0] if squeeze else y


def default_initial_state(config: PlantConfig) -> np.ndarray:
    """A plausible cold-start state used to seed the steady-state search."""
    J = config.stages_per_column
    lay = layout(config)
    x = np.empty(config.n_states)
    for col in (0, 1):
        liquid = config.lean_feed_base * (1.6 if col == 1 else 1.0)
        gas = config.flue_gas_conc if col == 0 else config.vapor_feed_conc
        x[lay.liquid_conc(col)] = np.repeat(liquid, J)
        x[lay.gas_conc(col)] = np.repeat(gas, J)
        x[lay.liquid_temp(col)] = 320.0 if col == 0 else 370.0
        x[lay.gas_temp(col)] = 318.0 if col == 0 else 372.0
    x[lay.hx_tube] = 355.0
    x[lay.hx_shell] = 335.0
    x[lay.reboiler] = 380.0
    return x


def validate_physical_state(config: PlantConfig, x: np.ndarray) -> None:
    """Raise if a state vector is not physically admissible."""
    x = np.asarray(x, dtype=float)
    if x.shape != (config.n_states,):
        raise ContractViolationError(
            f"state must have shape ({config.n_states},), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericalDomainError("state contains non-finite entries")
    lay = layout(config)
    conc = x[lay.concentration_rows()]
    if np.any(conc < 0):
        raise NumericalDomainError("negative concentration entries")
    temps = x[lay.temperature_rows()]
    if np.any(temps <= 0):
        raise NumericalDomainError("non-positive temperature entries")


def derivative_jacobian(
    config: PlantConfig, x: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Forward-difference Jacobian of :func:`plant_derivative` at (x, u)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    h = 1e-6 * np.maximum(1.0, np.abs(x))
    batch = np.concatenate([x[:, None], x[:, None] + np.diag(h)], axis=1)
    d = plant_derivative(config, batch, u)
    return (d[:, 1:] - d[:, :1]) / h[None, :]


def steady_state(
    config: PlantConfig,
    u: np.ndarray,
    x0: np.ndarray | None = None,
    settle_steps: int = 800,
    max_newton_iter: int = 60,
    tol: float = 1e-9,
) -> np.ndarray:
    """Equilibrium state for a constant input.

    Long-horizon integration from ``x0`` (or the default cold start)
    brings the state near the attractor; a damped Newton iteration on
    the derivative then polishes it until the max-abs derivative drops
    below ``tol``.
    """
    u = _check_input(u)
    x = default_initial_state(config) if x0 is None else np.asarray(x0, dtype=float)
    if x.shape != (config.n_states,):
        raise ContractViolationError(
            f"x0 must have shape ({config.n_states},), got {x.shape}"
        )
    for _ in range(settle_steps):
        x = step(config, x, u)
    residual = plant_derivative(config, x, u)
    norm = float(np.max(np.abs(residual)))
    for _ in range(max_newton_iter):
        if norm < tol:
            break
        jac = derivative_jacobian(config, x, u)
        try:
            delta = np.linalg.solve(jac, -residual)
        except np.linalg.LinAlgError as exc:
            raise SteadyStateError(
                f"singular Jacobian in steady-state search (residual {norm:.3e})"
            ) from exc
        alpha = 1.0
        for _ in range(40):
            candidate = x + alpha * delta
            try:
                cand_residual = plant_derivative(config, candidate, u)
            except NumericalDomainError:
                alpha *= 0.5
                continue
            cand_norm = float(np.max(np.abs(cand_residual)))
            if cand_norm < norm:
                x, residual, norm = candidate, cand_residual, cand_norm
                break
            alpha *= 0.5
        else:
            raise SteadyStateError(
                f"line search stalled at residual max-abs {norm:.3e}"
            )
    if not norm < tol:
        raise SteadyStateError(
            f"steady-state search did not reach tolerance {tol:.1e}; "
            f"residual max-abs {norm:.3e}"
        )
    validate_physical_state(config, x)
    return x


def simulate(
    config: PlantConfig,
    x0: np.ndarray,
    inputs: np.ndarray,
    process_noise: np.ndarray | None = None,
) -> np.ndarray:
    """Roll the plant over an input sequence.

    ``inputs`` is (T, 3) and the optional ``process_noise`` is (T, n),
    one disturbance per transition. Returns states column-wise as an
    n x (T+1) matrix whose first column is ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != N_INPUTS:
        raise ContractViolationError(f"inputs must be (T, {N_INPUTS}), got {inputs.shape}")
    n = config.n_states
    if x0.shape != (n,):
        raise ContractViolationError(f"x0 must have shape ({n},), got {x0.shape}")
    steps = inputs.shape[0]
    if process_noise is not None:
        process_noise = np.asarray(process_noise, dtype=float)
        if process_noise.shape != (steps, n):
            raise ContractViolationError(
                f"process noise must be ({steps}, {n}), got {process_noise.shape}"
            )
    out = np.empty((n, steps + 1))
    out[:, 0] = x0
    x = x0
    for k in range(steps):
        noise = None if process_noise is None else process_noise[k]
        x = step(config, x, inputs[k], noise)
        out[:, k + 1] = x
    return out
