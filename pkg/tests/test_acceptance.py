"""End-to-end acceptance checks, one verdict line per shipped claim.

Checks 2 and 10 drive full-size default-config runs (check 10 repeats
the whole pipeline a second time), so this file takes roughly half an
hour on one core; everything else rides on the fast profile or small
fixtures.  Check 6 documents a known gap: its error bar sits below what
the optimal full-order filter achieves on this plant and noise design,
so that test is expected to fail while its other sub-checks hold.
"""

import dataclasses
import math
import time
from pathlib import Path

import numpy as np
import pytest

from romkit import estimator, excitation, mlp, plant, pod
from romkit.harness import commands, persist
from romkit.harness.config import load_config
from romkit.harness.manifest import MANIFEST_NAME, deterministic_digests

from .oracles import linear_kf_oracle

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.ini"

_PIPELINE = (
    ("simulate", commands.cmd_simulate),
    ("reduce", commands.cmd_reduce),
    ("train", commands.cmd_train),
    ("estimate", lambda cfg: commands.cmd_estimate(cfg, commands.FILTER_NAMES)),
    ("benchmark", commands.cmd_benchmark),
    ("report", commands.cmd_report),
)


def run_pipeline(cfg):
    marks = {}
    for name, fn in _PIPELINE:
        started = time.perf_counter()
        fn(cfg)
        marks[name] = time.perf_counter() - started
    return marks


@pytest.fixture(scope="session")
def fast_run(tmp_path_factory):
    """Shipped config in the fast profile, full pipeline, per-phase timing."""
    cfg = dataclasses.replace(
        load_config(DEFAULT_CONFIG),
        output_dir=str(tmp_path_factory.mktemp("fast-run")),
    ).fast_profile()
    return cfg, run_pipeline(cfg)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Shipped config at full size; expect around ten minutes."""
    cfg = dataclasses.replace(
        load_config(DEFAULT_CONFIG),
        output_dir=str(tmp_path_factory.mktemp("default-run")),
    )
    return cfg, run_pipeline(cfg)


def test_01_svd_reconstruction_and_basis_identities(
    normalized_snapshots, record_acceptance
):
    started = time.perf_counter()
    z = normalized_snapshots
    n = z.shape[0]
    full = pod.compute_basis(z, n)
    residual_full = float(np.linalg.norm(z - full.modes @ (full.modes.T @ z)))
    gram_defect = float(np.max(np.abs(full.modes.T @ full.modes - np.eye(n))))
    total = float(np.sum(z * z))
    energy_gap = abs(full.total_energy - total) / total

    # Tail-energy identity: dropping modes past r must cost exactly the
    # discarded singular values, summed directly so no cancellation
    # enters the reference. Orders whose residual sits near the float
    # resolution for a matrix of this norm are skipped.
    worst_rel = 0.0
    checked = []
    for r in (5, 10, 20, 40, 60, 80):
        tail = float(np.sum(full.singular_values[r:] ** 2))
        lead = full.modes[:, :r]
        residual = float(np.linalg.norm(z - lead @ (lead.T @ z)))
        if residual < 1e-5:
            continue
        worst_rel = max(worst_rel, abs(math.sqrt(tail) - residual) / residual)
        checked.append(r)
    elapsed = time.perf_counter() - started

    ok = (
        residual_full < 1e-10
        and gram_defect < 1e-10
        and energy_gap < 1e-10
        and worst_rel < 1e-8
        and len(checked) >= 3
        and elapsed < 60.0
    )
    record_acceptance(
        1,
        "exact reconstruction and basis identities",
        ok,
        f"full-rank residual {residual_full:.1e}, orthonormality defect "
        f"{gram_defect:.1e}, tail identity off by {worst_rel:.1e} over "
        f"orders {checked}, {elapsed:.1f} s",
    )
    assert residual_full < 1e-10
    assert gram_defect < 1e-10
    assert energy_gap < 1e-10
    assert worst_rel < 1e-8
    assert len(checked) >= 3
    assert elapsed < 60.0


def test_02_reduction_error_trend(default_run, record_acceptance):
    cfg, marks = default_run
    _, rows = persist.read_table(
        commands.artifact_path(cfg, "rmse_sweep"),
        expected_header=("r", "log_rmse_norm", "log_rmse_raw"),
    )
    orders = [int(row[0]) for row in rows]
    scaled = [10.0 ** float(row[1]) for row in rows]
    raw = [10.0 ** float(row[2]) for row in rows]

    assert cfg.snapshot_samples == 12000
    assert orders == list(range(20, 91))
    monotone = all(b <= a + 1e-9 for a, b in zip(scaled, scaled[1:]))
    dominated = all(s <= r_ for s, r_ in zip(scaled, raw))
    ok = monotone and dominated and marks["reduce"] < 120.0
    record_acceptance(
        2,
        "reduction error trend over basis order",
        ok,
        f"orders 20..90 on the 12000-sample run: nonincreasing={monotone}, "
        f"normalized<=raw={dominated}, sweep {marks['reduce']:.1f} s",
    )
    assert monotone
    assert dominated
    assert marks["reduce"] < 120.0


def _windowed(dims, seed):
    rng = np.random.default_rng(seed)
    base = mlp.init_params(dims, seed=seed)
    lo = rng.uniform(-1.0, 0.0, size=dims[0])
    return mlp.MlpParams(
        layer_dims=base.layer_dims,
        weights=base.weights,
        biases=base.biases,
        hidden_activation=base.hidden_activation,
        input_min=lo,
        input_max=lo + rng.uniform(0.5, 2.0, size=dims[0]),
    )


def _relative_gap(analytic, fd):
    scale = max(float(np.max(np.abs(fd))), 1e-12)
    return float(np.max(np.abs(analytic - fd))) / scale


def _gradient_fd_gap(params, inputs, targets, grad_w, grad_b):
    h = 1e-6
    worst = 0.0
    for l in range(len(params.weights)):
        for arr, grad in (
            (params.weights[l], grad_w[l]),
            (params.biases[l], grad_b[l]),
        ):
            fd = np.empty_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = mlp.loss(params, inputs, targets)
                arr[idx] = orig - h
                down = mlp.loss(params, inputs, targets)
                arr[idx] = orig
                fd[idx] = (up - down) / (2.0 * h)
            worst = max(worst, _relative_gap(grad, fd))
    return worst


def _jacobian_fd_gap(params, xi, u, jac):
    h = 1e-6
    fd = np.empty_like(jac)
    for j in range(xi.size):
        hi = xi.copy()
        lo = xi.copy()
        hi[j] += h
        lo[j] -= h
        fd[:, j] = (mlp.forward(params, hi, u) - mlp.forward(params, lo, u)) / (
            2.0 * h
        )
    return _relative_gap(jac, fd)


def test_03_derivatives_match_finite_differences(record_acceptance):
    """Backprop gradient and the filter's state Jacobian against central
    differences over 100 random shapes, weights and evaluation points."""
    started = time.perf_counter()
    rng = np.random.default_rng(314)
    worst_grad = 0.0
    worst_jac = 0.0
    for _ in range(100):
        n_xi = int(rng.integers(2, 6))
        depth = int(rng.integers(1, 3))
        hidden = tuple(int(rng.integers(3, 9)) for _ in range(depth))
        dims = (plant.N_INPUTS + n_xi, *hidden, n_xi)
        params = _windowed(dims, seed=int(rng.integers(1 << 30)))

        inputs = rng.uniform(size=(6, dims[0]))
        targets = rng.normal(size=(6, n_xi))
        grad_w, grad_b = mlp.gradient(params, inputs, targets)
        worst_grad = max(
            worst_grad, _gradient_fd_gap(params, inputs, targets, grad_w, grad_b)
        )

        xi = rng.normal(size=n_xi)
        u = rng.uniform(size=plant.N_INPUTS)
        jac = mlp.jacobian_state(params, xi, u)
        worst_jac = max(worst_jac, _jacobian_fd_gap(params, xi, u, jac))
    elapsed = time.perf_counter() - started

    ok = worst_grad < 1e-4 and worst_jac < 1e-4 and elapsed < 120.0
    record_acceptance(
        3,
        "analytic derivatives match finite differences",
        ok,
        f"max relative gap over 100 configurations: gradient {worst_grad:.1e}, "
        f"state Jacobian {worst_jac:.1e}, {elapsed:.1f} s",
    )
    assert worst_grad < 1e-4
    assert worst_jac < 1e-4
    assert elapsed < 120.0


def test_04_teacher_student_training_reaches_goal(record_acceptance):
    """A student of the same shape must push training MSE below 1e-6 on
    data from a frozen random network within the stock epoch budget."""
    started = time.perf_counter()
    budget = load_config(DEFAULT_CONFIG).max_epochs
    dims = (33, 8, 30)
    teacher = mlp.init_params(dims, seed=4242)
    rng = np.random.default_rng(11)
    raw = rng.uniform(0.0, 1.0, size=(2000, dims[0]))
    dataset = mlp.build_dataset(raw, mlp.apply_batch(teacher, raw), seed=5)
    student = mlp.init_params(dims, seed=6)
    config = mlp.TrainConfig(
        learning_rate=3e-3,
        batch_size=16,
        max_epochs=budget,
        early_stop_patience=120,
        seed=7,
        train_mse_goal=1e-6,
    )
    student, history = mlp.train(student, dataset, config)
    elapsed = time.perf_counter() - started

    reached = history.train_mse[-1]
    ok = reached < 1e-6 and elapsed < 300.0
    record_acceptance(
        4,
        "teacher-student training reaches 1e-6",
        ok,
        f"train MSE {reached:.2e} at epoch {history.epochs[-1]} of {budget}, "
        f"{elapsed:.1f} s",
    )
    assert reached < 1e-6
    assert elapsed < 300.0


def test_05_open_loop_rollout_accuracy(fast_run, record_acceptance):
    """Iterate the trained surrogate 600 steps over the held-out
    excitation without any correction and score it in full coordinates."""
    cfg, marks = fast_run
    basis, normalization = persist.load_basis(commands.artifact_path(cfg, "basis"))
    params = mlp.load_model(commands.artifact_path(cfg, "model"))
    inputs = excitation.read_inputs_csv(
        commands.artifact_path(cfg, "validation_inputs")
    )
    held_out = persist.read_states_csv(
        commands.artifact_path(cfg, "validation_snapshots")
    )

    started = time.perf_counter()
    xi0 = (basis.modes.T @ pod.normalize(held_out, normalization))[:, 0]
    trajectory = mlp.rollout(params, xi0, inputs)
    rebuilt = pod.denormalize(basis.modes @ trajectory.T, normalization)
    error = estimator.normalized_rmse(normalization, held_out, rebuilt)
    rollout_s = time.perf_counter() - started

    budget = marks["simulate"] + marks["reduce"] + marks["train"] + rollout_s
    ok = (
        error < 0.1
        and budget < 600.0
        and inputs.shape[0] == 600
        and cfg.reduced_order == 30
    )
    record_acceptance(
        5,
        "open-loop rollout over held-out excitation",
        ok,
        f"normalized RMSE {error:.4f} over {inputs.shape[0]} steps at order "
        f"{cfg.reduced_order}, data+training+rollout {budget:.1f} s",
    )
    assert inputs.shape[0] == 600
    assert cfg.reduced_order == 30
    assert error < 0.1
    assert budget < 600.0


def test_06_noisy_run_tracking_from_cold_start(fast_run, record_acceptance):
    """Track the noisy truth from the mid-range initial guess.

    The 0.05 error bar is kept as stated even though it is not reachable
    here: the optimal full-order filter measures about 0.058 on this
    exact window (a stationary analysis of the linearized plant puts the
    floor near 0.054), and a rank-30 filter cannot beat the full-order
    optimum.  The rollout comparison and the runtime bar do hold, so the
    final assert below fails on purpose rather than hiding the gap.
    """
    cfg, marks = fast_run
    _, rows = persist.read_table(
        commands.artifact_path(cfg, "error_summary"),
        expected_header=("filter", "normalized_rmse", "burn_in", "horizon"),
    )
    errors = {row[0]: float(row[1]) for row in rows}
    tracked = errors["pod-mlp-ekf"]
    rollout = errors["open-loop-rollout"]
    beats = tracked < rollout
    under_bar = tracked < 0.05
    ok = under_bar and beats and marks["estimate"] < 120.0
    record_acceptance(
        6,
        "noisy-run tracking from a cold start",
        ok,
        f"filter RMSE {tracked:.4f} against bar 0.05 (full-order filter "
        f"reaches {errors['ekf']:.4f} here), open loop {rollout:.4f}, beats "
        f"rollout: {beats}, estimation {marks['estimate']:.1f} s",
    )
    assert beats
    assert marks["estimate"] < 120.0
    assert under_bar


def test_07_covariance_health(fast_run, record_acceptance):
    cfg, _ = fast_run
    _, rows = persist.read_table(
        commands.artifact_path(cfg, "covariance_health"),
        expected_header=(
            "filter",
            "min_eigenvalue",
            "max_symmetry_error",
            "max_gain_residual",
        ),
    )
    assert {row[0] for row in rows} == set(commands.FILTER_NAMES)
    min_eig = min(float(row[1]) for row in rows)
    worst_sym = max(float(row[2]) for row in rows)
    worst_gain = max(float(row[3]) for row in rows)
    ok = min_eig >= -1e-10 and worst_sym < 1e-10 and worst_gain < 1e-10
    record_acceptance(
        7,
        "covariance symmetric, nonnegative, gain solves exact",
        ok,
        f"min eigenvalue {min_eig:.1e}, symmetry defect {worst_sym:.1e}, "
        f"gain residual {worst_gain:.1e} across {len(rows)} filters",
    )
    assert min_eig >= -1e-10
    assert worst_sym < 1e-10
    assert worst_gain < 1e-10


def test_08_runtime_ordering_and_speedup(fast_run, record_acceptance):
    cfg, marks = fast_run
    _, rows = persist.read_table(
        commands.artifact_path(cfg, "benchmark_summary"),
        expected_header=("quantity", "value"),
    )
    values = {row[0]: row[1] for row in rows}
    speedup = float(values["speedup_pod_mlp_ekf_vs_ekf"])
    ratio = float(values["ratio_pod_ekf_vs_ekf"])
    ok = speedup >= 5.0 and 0.0 < ratio <= 2.0 and marks["benchmark"] < 300.0
    record_acceptance(
        8,
        "surrogate filter speedup, plant filter parity",
        ok,
        f"surrogate filter {speedup:.0f}x faster than the full filter, "
        f"reduced plant filter at {ratio:.2f}x, benchmark "
        f"{marks['benchmark']:.1f} s",
    )
    assert speedup >= 5.0
    assert 0.0 < ratio <= 2.0
    assert marks["benchmark"] < 300.0


def test_09_linear_surrogate_equals_textbook_kalman(
    plant_config, steady, prms_sim, normalization, record_acceptance
):
    """With identity activations the surrogate is affine, so the filter
    must reproduce a hand-rolled Kalman filter to numerical precision."""
    _, states = prms_sim
    basis = pod.compute_basis(pod.normalize(states, normalization), 4)
    selection = plant.temperature_indices(plant_config)
    noise = estimator.build_noise_model(steady, selection)
    config = estimator.EkfConfig(selection=selection, noise=noise)

    rng = np.random.default_rng(99)
    dims = (plant.N_INPUTS + basis.order, 6, basis.order)
    params = _windowed(dims, seed=123)
    params = mlp.MlpParams(
        layer_dims=params.layer_dims,
        weights=params.weights,
        biases=params.biases,
        hidden_activation="identity",
        input_min=params.input_min,
        input_max=params.input_max,
    )
    inputs = rng.uniform(0.2, 0.8, size=(100, plant.N_INPUTS))
    measurements = rng.normal(300.0, 25.0, size=(100, len(selection)))

    result = estimator.run_pod_mlp_ekf(
        inputs, measurements, params, basis, normalization, config
    )
    C, offset = estimator.observation_operator(basis, normalization, selection)
    Q = estimator.reduced_process_cov(basis, normalization, noise.process_std)
    R = np.diag(noise.measurement_std**2)
    expected = linear_kf_oracle(
        basis.modes.T @ np.full(basis.n_states, 0.5),
        config.initial_cov * np.eye(basis.order),
        inputs,
        measurements,
        params,
        C,
        offset,
        Q,
        R,
    )
    gap = float(np.max(np.abs(result.reduced - expected)))
    ok = gap < 1e-10
    record_acceptance(
        9,
        "linear surrogate filter equals textbook Kalman",
        ok,
        f"max reduced-state gap {gap:.1e} over 100 steps",
    )
    assert gap < 1e-10


def test_10_repeat_run_determinism(
    default_run, tmp_path_factory, record_acceptance
):
    """A second full default run from scratch must reproduce every
    content artifact bit for bit; wall-clock outputs are exempt, which
    the manifest flags at write time."""
    cfg_a, _ = default_run
    twin = dataclasses.replace(
        cfg_a, output_dir=str(tmp_path_factory.mktemp("default-twin"))
    )
    run_pipeline(twin)
    digests_a = deterministic_digests(Path(cfg_a.output_dir) / MANIFEST_NAME)
    digests_b = deterministic_digests(Path(twin.output_dir) / MANIFEST_NAME)
    identical = digests_a == digests_b
    ok = identical and len(digests_a) >= 14
    record_acceptance(
        10,
        "repeat-run artifact determinism",
        ok,
        f"{len(digests_a)} deterministic artifacts, identical: {identical}",
    )
    assert len(digests_a) >= 14
    assert identical
