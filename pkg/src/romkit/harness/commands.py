"""Pipeline commands behind the CLI.

Every command reads earlier artifacts from the configured output
directory, writes its own, and updates the manifest.  Artifacts are the
only channel between commands, which is what makes reruns and the
determinism check meaningful.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from .. import estimator, excitation, mlp, plant, pod
from ..errors import ConfigurationError, MissingArtifactError
from . import persist
from .config import ExperimentConfig, config_digest_source, stream_seed
from .manifest import RunManifest, sha256_text

FILTER_NAMES = ("pod-mlp-ekf", "pod-ekf", "ekf")

FILES = {
    "inputs": "inputs.csv",
    "snapshots": "snapshots.csv",
    "basis": "basis.bin",
    "rmse_sweep": "rmse_vs_order.csv",
    "validation_inputs": "validation_inputs.csv",
    "validation_snapshots": "validation_snapshots.csv",
    "model": "model.bin",
    "loss_history": "loss_history.csv",
    "training_summary": "training_summary.csv",
    "estimation_inputs": "estimation_inputs.csv",
    "truth": "truth.csv",
    "measurements": "measurements.csv",
    "error_summary": "error_summary.csv",
    "covariance_health": "covariance_health.csv",
    "timing": "timing.csv",
    "benchmark_summary": "benchmark_summary.csv",
    "report": "report.md",
}


def artifact_path(cfg: ExperimentConfig, name: str) -> Path:
    return Path(cfg.output_dir) / FILES[name]


def _open_manifest(cfg: ExperimentConfig) -> RunManifest:
    digest = sha256_text(config_digest_source(cfg))
    return RunManifest.open(cfg.output_dir, digest, cfg.base_seed)


def _require(cfg: ExperimentConfig, name: str, producer: str) -> Path:
    path = artifact_path(cfg, name)
    if not path.exists():
        raise MissingArtifactError(
            f"missing {path.name} in {cfg.output_dir}; run the {producer} "
            f"command first"
        )
    return path


def _steady_state(cfg: ExperimentConfig) -> tuple[plant.PlantConfig, np.ndarray]:
    plant_cfg = cfg.plant_config()
    x_s = plant.steady_state(plant_cfg, plant.nominal_input(plant_cfg))
    return plant_cfg, x_s


def cmd_simulate(cfg: ExperimentConfig) -> list[Path]:
    """Excite the plant from steady state and write the snapshot set."""
    started = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plant_cfg, x_s = _steady_state(cfg)
    inputs = excitation.generate_prms(cfg.prms_config("snapshots", cfg.snapshot_samples))
    snapshots = plant.simulate(plant_cfg, x_s, inputs)

    inputs_path = artifact_path(cfg, "inputs")
    snaps_path = artifact_path(cfg, "snapshots")
    excitation.write_inputs_csv(inputs_path, inputs)
    persist.write_states_csv(snaps_path, snapshots)

    manifest = _open_manifest(cfg)
    manifest.record(inputs_path)
    manifest.record(snaps_path)
    manifest.record_wall_clock("simulate", time.perf_counter() - started)
    manifest.write()
    return [inputs_path, snaps_path]


def _sweep_rmse(
    snapshots: np.ndarray,
    validation: np.ndarray,
    normalization: pod.NormalizationParams,
    orders: tuple[int, ...],
) -> list[tuple[int, float, float]]:
    """Validation reconstruction error per order, for both pipelines.

    Both pipelines are scored on normalized coordinates so states of
    different magnitudes weigh equally; the unnormalized pipeline builds
    its basis on raw snapshots and only the metric is normalized.
    """
    z_snap = pod.normalize(snapshots, normalization)
    z_val = pod.normalize(validation, normalization)
    rows = []
    for r in orders:
        basis_norm = pod.compute_basis(z_snap, r)
        recon_norm = basis_norm.modes @ (basis_norm.modes.T @ z_val)
        err_norm = pod.rmse(z_val, recon_norm)

        basis_raw = pod.compute_basis(snapshots, r)
        recon_raw = basis_raw.modes @ (basis_raw.modes.T @ validation)
        err_raw = pod.rmse(z_val, pod.normalize(recon_raw, normalization))
        rows.append((r, math.log10(err_norm), math.log10(err_raw)))
    return rows


def cmd_reduce(cfg: ExperimentConfig) -> list[Path]:
    """Fit normalization, sweep basis orders, persist the working basis."""
    started = time.perf_counter()
    snaps_path = _require(cfg, "snapshots", "simulate")
    snapshots = persist.read_states_csv(snaps_path)

    plant_cfg, x_s = _steady_state(cfg)
    val_inputs = excitation.generate_prms(
        cfg.prms_config("validation", cfg.validation_samples)
    )
    validation = plant.simulate(plant_cfg, x_s, val_inputs)

    normalization = pod.fit_normalization(snapshots)
    max_order = max(max(cfg.sweep_orders), cfg.reduced_order)
    if max_order > min(snapshots.shape):
        raise ConfigurationError(
            f"order {max_order} exceeds the snapshot rank bound "
            f"{min(snapshots.shape)}"
        )
    rows = _sweep_rmse(snapshots, validation, normalization, cfg.sweep_orders)
    basis = pod.compute_basis(
        pod.normalize(snapshots, normalization), cfg.reduced_order
    )

    basis_path = artifact_path(cfg, "basis")
    sweep_path = artifact_path(cfg, "rmse_sweep")
    val_in_path = artifact_path(cfg, "validation_inputs")
    val_path = artifact_path(cfg, "validation_snapshots")
    persist.save_basis(basis_path, basis, normalization)
    persist.write_table(
        sweep_path,
        ("r", "log_rmse_norm", "log_rmse_raw"),
        [(r, float(a), float(b)) for r, a, b in rows],
    )
    excitation.write_inputs_csv(val_in_path, val_inputs)
    persist.write_states_csv(val_path, validation)

    manifest = _open_manifest(cfg)
    for path in (basis_path, sweep_path, val_in_path, val_path):
        manifest.record(path)
    manifest.record_wall_clock("reduce", time.perf_counter() - started)
    manifest.write()
    return [basis_path, sweep_path, val_in_path, val_path]


def build_training_pairs(
    cfg: ExperimentConfig,
    plant_cfg: plant.PlantConfig,
    x_s: np.ndarray,
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
) -> tuple[np.ndarray, np.ndarray]:
    """One-step transition pairs from fresh seeded excitation segments.

    Each segment restarts at the steady state with its own derived seed;
    pairs are concatenated and truncated to exactly the configured count.
    """
    n_segments = math.ceil(cfg.training_pairs / cfg.training_segment)
    raw_inputs = []
    targets = []
    for i in range(n_segments):
        seg_inputs = excitation.generate_prms(
            cfg.prms_config("training", cfg.training_segment, index=i)
        )
        states = plant.simulate(plant_cfg, x_s, seg_inputs)
        xi = basis.modes.T @ pod.normalize(states, normalization)
        raw_inputs.append(np.hstack([seg_inputs, xi[:, :-1].T]))
        targets.append(xi[:, 1:].T)
    raw = np.vstack(raw_inputs)[: cfg.training_pairs]
    tgt = np.vstack(targets)[: cfg.training_pairs]
    return raw, tgt


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    """Fit the surrogate on reduced one-step transitions."""
    started = time.perf_counter()
    basis_path = _require(cfg, "basis", "reduce")
    basis, normalization = persist.load_basis(basis_path)
    if basis.order != cfg.reduced_order:
        raise ConfigurationError(
            f"persisted basis has order {basis.order}, config wants "
            f"{cfg.reduced_order}; rerun the reduce command"
        )
    plant_cfg, x_s = _steady_state(cfg)
    raw_inputs, targets = build_training_pairs(
        cfg, plant_cfg, x_s, basis, normalization
    )
    if cfg.training_jitter > 0:
        # Perturb the reduced-state half of every input while keeping the
        # clean target: the surrogate then learns to pull slightly
        # off-manifold states back, which is what keeps a long open-loop
        # rollout from drifting away.  The plant inputs stay exact.
        rng = np.random.Generator(
            np.random.PCG64(stream_seed(cfg.base_seed, "jitter"))
        )
        raw_inputs[:, plant.N_INPUTS :] += rng.normal(
            0.0, cfg.training_jitter, size=(raw_inputs.shape[0], basis.order)
        )
    dataset = mlp.build_dataset(
        raw_inputs, targets, seed=stream_seed(cfg.base_seed, "dataset_split")
    )
    params = mlp.init_params(
        cfg.network_dims(), seed=stream_seed(cfg.base_seed, "model_init")
    )
    params, history = mlp.train(params, dataset, cfg.train_config())
    test_mse = mlp.loss(
        params, dataset.inputs[dataset.test_idx], dataset.targets[dataset.test_idx]
    )

    model_path = artifact_path(cfg, "model")
    loss_path = artifact_path(cfg, "loss_history")
    summary_path = artifact_path(cfg, "training_summary")
    mlp.save_model(model_path, params)
    persist.write_table(
        loss_path,
        ("epoch", "train_mse", "val_mse"),
        zip(history.epochs, history.train_mse, history.val_mse),
    )
    best = history.best_epoch
    persist.write_table(
        summary_path,
        ("best_epoch", "train_mse", "val_mse", "test_mse", "stopped_early"),
        [
            (
                best,
                history.train_mse[best],
                history.val_mse[best],
                float(test_mse),
                int(history.stopped_early),
            )
        ],
    )

    manifest = _open_manifest(cfg)
    for path in (model_path, loss_path, summary_path):
        manifest.record(path)
    manifest.record_wall_clock("train", time.perf_counter() - started)
    manifest.write()
    return [model_path, loss_path, summary_path]


def make_estimation_scenario(
    cfg: ExperimentConfig,
    plant_cfg: plant.PlantConfig,
    x_s: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, estimator.NoiseModel]:
    """Noisy truth trajectory, its inputs, and the measurement record.

    The truth starts at the steady state and is driven by fresh
    excitation; per-step disturbances and sensor noise come from their
    own named streams so the scenario is reproducible bit for bit.
    """
    selection = plant.temperature_indices(plant_cfg)
    noise = estimator.build_noise_model(x_s, selection, cfg.noise_scale)
    inputs = excitation.generate_prms(
        cfg.prms_config("estimation_inputs", cfg.estimation_horizon)
    )
    process_rng = np.random.Generator(
        np.random.PCG64(stream_seed(cfg.base_seed, "process_noise"))
    )
    measure_rng = np.random.Generator(
        np.random.PCG64(stream_seed(cfg.base_seed, "measurement_noise"))
    )
    T = cfg.estimation_horizon
    truth = np.empty((plant_cfg.n_states, T + 1))
    truth[:, 0] = x_s
    measurements = np.empty((T, len(selection)))
    x = x_s.copy()
    for k in range(T):
        w = process_rng.normal(0.0, noise.process_std)
        x = plant.step(plant_cfg, x, inputs[k], process_noise=w)
        truth[:, k + 1] = x
        v = measure_rng.normal(0.0, noise.measurement_std)
        measurements[k] = plant.measure(plant_cfg, selection, x, v)
    return inputs, truth, measurements, noise


def _estimates_file(name: str) -> str:
    return f"estimates_{name.replace('-', '_')}.csv"


def _run_filter(
    name: str,
    cfg: ExperimentConfig,
    plant_cfg: plant.PlantConfig,
    inputs: np.ndarray,
    measurements: np.ndarray,
    ekf_cfg: estimator.EkfConfig,
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
    params: mlp.MlpParams | None,
) -> estimator.FilterResult:
    if name == "pod-mlp-ekf":
        if params is None:
            raise MissingArtifactError(
                f"missing {FILES['model']} in {cfg.output_dir}; run the train "
                f"command first"
            )
        return estimator.run_pod_mlp_ekf(
            inputs, measurements, params, basis, normalization, ekf_cfg
        )
    if name == "pod-ekf":
        return estimator.run_pod_ekf(
            inputs, measurements, plant_cfg, basis, normalization, ekf_cfg
        )
    if name == "ekf":
        guess = pod.denormalize(np.full(plant_cfg.n_states, 0.5), normalization)
        spans = np.where(normalization.degenerate, 1.0, normalization.spans)
        return estimator.run_full_ekf(
            inputs,
            measurements,
            plant_cfg,
            ekf_cfg,
            guess,
            cfg.initial_cov * spans**2,
        )
    raise ConfigurationError(f"unknown filter '{name}'; choose from {FILTER_NAMES}")


def cmd_estimate(
    cfg: ExperimentConfig, filters: tuple[str, ...] = ("pod-mlp-ekf",)
) -> list[Path]:
    """Simulate the noisy run and estimate it with the chosen filters."""
    started = time.perf_counter()
    for name in filters:
        if name not in FILTER_NAMES:
            raise ConfigurationError(
                f"unknown filter '{name}'; choose from {FILTER_NAMES}"
            )
    basis_path = _require(cfg, "basis", "reduce")
    basis, normalization = persist.load_basis(basis_path)
    params = None
    if "pod-mlp-ekf" in filters:
        model_path = _require(cfg, "model", "train")
        params = mlp.load_model(model_path)

    plant_cfg, x_s = _steady_state(cfg)
    inputs, truth, measurements, noise = make_estimation_scenario(cfg, plant_cfg, x_s)
    selection = plant.temperature_indices(plant_cfg)
    ekf_cfg = estimator.EkfConfig(
        selection=selection, noise=noise, initial_cov=cfg.initial_cov
    )

    in_path = artifact_path(cfg, "estimation_inputs")
    truth_path = artifact_path(cfg, "truth")
    meas_path = artifact_path(cfg, "measurements")
    excitation.write_inputs_csv(in_path, inputs)
    persist.write_states_csv(truth_path, truth)
    persist.write_measurements_csv(meas_path, selection, measurements)
    written = [in_path, truth_path, meas_path]

    summary_rows = []
    health_rows = []
    for name in filters:
        result = _run_filter(
            name, cfg, plant_cfg, inputs, measurements, ekf_cfg, basis,
            normalization, params,
        )
        est_path = Path(cfg.output_dir) / _estimates_file(name)
        persist.write_states_csv(est_path, result.estimates, prefix="xhat")
        written.append(est_path)
        summary_rows.append(
            (
                name,
                float(
                    estimator.normalized_rmse(
                        normalization, truth, result.estimates, cfg.burn_in
                    )
                ),
                cfg.burn_in,
                cfg.estimation_horizon,
            )
        )
        health_rows.append(
            (
                name,
                float(result.min_eigenvalues.min()),
                float(result.symmetry_errors.max()),
                float(result.gain_residuals.max()),
            )
        )

    if params is not None:
        xi0 = basis.modes.T @ np.full(plant_cfg.n_states, 0.5)
        open_loop = mlp.rollout(params, xi0, inputs).T
        summary_rows.append(
            (
                "open-loop-rollout",
                float(
                    estimator.normalized_rmse(
                        normalization,
                        truth,
                        estimator.lift(basis, normalization, open_loop),
                        cfg.burn_in,
                    )
                ),
                cfg.burn_in,
                cfg.estimation_horizon,
            )
        )

    summary_path = artifact_path(cfg, "error_summary")
    health_path = artifact_path(cfg, "covariance_health")
    persist.write_table(
        summary_path,
        ("filter", "normalized_rmse", "burn_in", "horizon"),
        summary_rows,
    )
    persist.write_table(
        health_path,
        ("filter", "min_eigenvalue", "max_symmetry_error", "max_gain_residual"),
        health_rows,
    )
    written += [summary_path, health_path]

    manifest = _open_manifest(cfg)
    for path in written:
        manifest.record(path)
    manifest.record_wall_clock("estimate", time.perf_counter() - started)
    manifest.write()
    return written


def cmd_benchmark(cfg: ExperimentConfig) -> list[Path]:
    """Time all three filters on the identical recorded scenario."""
    started = time.perf_counter()
    basis_path = _require(cfg, "basis", "reduce")
    model_path = _require(cfg, "model", "train")
    in_path = _require(cfg, "estimation_inputs", "estimate")
    meas_path = _require(cfg, "measurements", "estimate")

    basis, normalization = persist.load_basis(basis_path)
    params = mlp.load_model(model_path)
    inputs = excitation.read_inputs_csv(in_path)
    selection, measurements = persist.read_measurements_csv(meas_path)

    plant_cfg, x_s = _steady_state(cfg)
    if selection != plant.temperature_indices(plant_cfg):
        raise ConfigurationError(
            f"{meas_path.name} was recorded with a different measurement set"
        )
    noise = estimator.build_noise_model(x_s, selection, cfg.noise_scale)
    ekf_cfg = estimator.EkfConfig(
        selection=selection, noise=noise, initial_cov=cfg.initial_cov
    )

    timing_rows = []
    totals = {}
    for name in FILTER_NAMES:
        result = _run_filter(
            name, cfg, plant_cfg, inputs, measurements, ekf_cfg, basis,
            normalization, params,
        )
        per_step = result.timings.per_step_ms()
        for phase in ("model_prediction", "discretization", "other"):
            phase_total = getattr(result.timings, f"{phase}_s")
            timing_rows.append((name, phase, per_step[phase], phase_total))
        timing_rows.append(
            (
                name,
                "total",
                1000.0 * result.timings.total_s / result.timings.steps,
                result.timings.total_s,
            )
        )
        totals[name] = result.timings.total_s

    summary_rows = [
        ("speedup_pod_mlp_ekf_vs_ekf", totals["ekf"] / totals["pod-mlp-ekf"]),
        ("ratio_pod_ekf_vs_ekf", totals["pod-ekf"] / totals["ekf"]),
        ("measurements_sha256", _open_manifest(cfg).artifact_digest(meas_path.name)),
    ]

    timing_path = artifact_path(cfg, "timing")
    summary_path = artifact_path(cfg, "benchmark_summary")
    persist.write_table(
        timing_path, ("filter", "phase", "mean_ms", "total_s"), timing_rows
    )
    persist.write_table(summary_path, ("quantity", "value"), summary_rows)

    manifest = _open_manifest(cfg)
    manifest.record(timing_path, deterministic=False)
    manifest.record(summary_path, deterministic=False)
    manifest.record_wall_clock("benchmark", time.perf_counter() - started)
    manifest.write()
    return [timing_path, summary_path]


def _markdown_table(header: tuple[str, ...], rows) -> list[str]:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(str(v) for v in row) + " |")
    return lines


def cmd_report(cfg: ExperimentConfig) -> list[Path]:
    """Collate earlier outputs into one markdown summary; no recompute."""
    started = time.perf_counter()
    sources = {
        "rmse_sweep": "reduce",
        "training_summary": "train",
        "error_summary": "estimate",
        "timing": "benchmark",
    }
    tables = {}
    for name, producer in sources.items():
        path = _require(cfg, name, producer)
        tables[name] = persist.read_table(path)

    manifest = _open_manifest(cfg)
    lines = ["# Pipeline report", ""]
    lines.append(f"Output directory: {cfg.output_dir}")
    lines.append(f"Base seed: {cfg.base_seed}")
    lines.append("")
    titles = {
        "rmse_sweep": "Reconstruction error vs order (log10)",
        "training_summary": "Surrogate training",
        "error_summary": "Estimation error",
        "timing": "Filter timing",
    }
    for name in sources:
        header, rows = tables[name]
        lines.append(f"## {titles[name]}")
        lines.append("")
        lines += _markdown_table(header, rows)
        lines.append("")
        lines.append(f"Source: `{FILES[name]}` (sha256 "
                     f"`{manifest.artifact_digest(FILES[name])}`)")
        lines.append("")

    report_path = artifact_path(cfg, "report")
    with open(report_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))

    manifest.record(report_path, deterministic=False)
    manifest.record_wall_clock("report", time.perf_counter() - started)
    manifest.write()
    return [report_path]
