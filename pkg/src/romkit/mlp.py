"""Feedforward one-step surrogate of the reduced plant dynamics.

The network maps the stacked vector [u; xi] (inputs first, then the
reduced state) to the reduced state one sampling interval later. Hidden
layers use tanh, the output layer is linear, and all arithmetic is
float64 numpy so that gradients and Jacobians can be checked against
finite differences tightly.

Training data is min-max scaled on the input side only, with statistics
taken from the training split; the scaling window is stored with the
weights so a persisted model is self-contained.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolationError,
    TrainingDivergenceError,
)

MODEL_MAGIC = b"ROMMLP1"

HIDDEN_ACTIVATIONS = ("tanh", "identity")


@dataclass
class MlpParams:
    """Weights of a fully connected network.

    ``weights[l]`` has shape (layer_dims[l+1], layer_dims[l]) and acts on
    column vectors as y = W z + b. ``hidden_activation`` is "tanh" in
    normal use; "identity" turns the whole network affine, which is
    handy for closed-form consistency tests. ``input_min``/``input_max``
    define the min-max window applied to raw [u; xi] inputs, or are
    ``None`` for a network that consumes its inputs as-is.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    input_min: np.ndarray | None = None
    input_max: np.ndarray | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigurationError(f"layer_dims needs >= 2 positive entries, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(
                f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}, "
                f"got {self.hidden_activation!r}"
            )
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ContractViolationError("need one weight and bias per layer transition")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]):
                raise ContractViolationError(
                    f"weight {l} must have shape {(dims[l + 1], dims[l])}, got {w.shape}"
                )
            if b.shape != (dims[l + 1],):
                raise ContractViolationError(
                    f"bias {l} must have shape {(dims[l + 1],)}, got {b.shape}"
                )
        self.layer_dims = dims

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            input_min=None if self.input_min is None else self.input_min.copy(),
            input_max=None if self.input_max is None else self.input_max.copy(),
        )


def init_params(
    layer_dims, seed: int, hidden_activation: str = "tanh"
) -> MlpParams:
    """Glorot-uniform initialization: U(+-sqrt(6 / (fan_in + fan_out)))."""
    dims = tuple(int(d) for d in layer_dims)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        hidden_activation=hidden_activation,
    )


def _input_spans(params: MlpParams) -> np.ndarray:
    """Scaling denominators; degenerate dimensions fall back to 1."""
    spans = params.input_max - params.input_min
    return np.where(spans > 0, spans, 1.0)


def scale_inputs(params: MlpParams, raw: np.ndarray) -> np.ndarray:
    """Apply the stored min-max window to raw network inputs."""
    if params.input_min is None:
        return raw
    return (raw - params.input_min) / _input_spans(params)


def _activate(params: MlpParams, pre: np.ndarray) -> np.ndarray:
    if params.hidden_activation == "tanh":
        return np.tanh(pre)
    return pre


def _activate_grad(params: MlpParams, post: np.ndarray) -> np.ndarray:
    # tanh' expressed through the activation value itself.
    if params.hidden_activation == "tanh":
        return 1.0 - post * post
    return np.ones_like(post)


def apply_batch(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Network output for a (samples, n_inputs) batch in network space.

    No input scaling is applied here; use :func:`forward` for raw
    [u; xi] arguments.
    """
    z = np.asarray(inputs, dtype=float)
    if z.ndim != 2 or z.shape[1] != params.n_inputs:
        raise ContractViolationError(
            f"batch must be (samples, {params.n_inputs}), got {z.shape}"
        )
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ w.T + b
        if l < last:
            z = _activate(params, z)
    return z


def forward(params: MlpParams, xi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One-step prediction for a single reduced state and input vector."""
    xi = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    if xi.ndim != 1 or u.ndim != 1 or xi.size + u.size != params.n_inputs:
        raise ContractViolationError(
            f"expected 1-D xi and u with {params.n_inputs} total entries, "
            f"got {xi.shape} and {u.shape}"
        )
    raw = np.concatenate([u, xi])
    return apply_batch(params, scale_inputs(params, raw)[None, :])[0]


def jacobian_state(params: MlpParams, xi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Derivative of :func:`forward` with respect to xi.

    This is the xi-block of the full input Jacobian, including the chain
    factor of the input scaling window; it is what a Kalman filter
    linearizing the surrogate needs.
    """
    xi = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    n_u = params.n_inputs - xi.size
    if xi.ndim != 1 or u.ndim != 1 or u.size != n_u:
        raise ContractViolationError(
            f"expected 1-D xi and u with {params.n_inputs} total entries, "
            f"got {xi.shape} and {u.shape}"
        )
    raw = np.concatenate([u, xi])
    z = scale_inputs(params, raw)
    jac = params.weights[0].copy()
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if l > 0:
            jac = w @ jac
        z = z @ w.T + b
        if l < last:
            z = _activate(params, z)
            jac = _activate_grad(params, z)[:, None] * jac
    if params.input_min is not None:
        jac = jac / _input_spans(params)[None, :]
    return jac[:, n_u:]


def loss(params: MlpParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error over all batch entries and output coordinates."""
    targets = np.asarray(targets, dtype=float)
    pred = apply_batch(params, inputs)
    if pred.shape != targets.shape:
        raise ContractViolationError(
            f"target shape {targets.shape} does not match prediction {pred.shape}"
        )
    diff = pred - targets
    return float(np.mean(diff * diff))


def gradient(
    params: MlpParams, inputs: np.ndarray, targets: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact MSE gradient via backpropagation.

    Returns per-layer weight and bias gradients matching the shapes in
    ``params``. Inputs are expected in network space, like
    :func:`apply_batch`.
    """
    z = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if z.ndim != 2 or z.shape[1] != params.n_inputs:
        raise ContractViolationError(
            f"batch must be (samples, {params.n_inputs}), got {z.shape}"
        )
    last = len(params.weights) - 1
    post = [z]
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ w.T + b
        if l < last:
            z = _activate(params, z)
        post.append(z)
    if post[-1].shape != targets.shape:
        raise ContractViolationError(
            f"target shape {targets.shape} does not match prediction {post[-1].shape}"
        )
    m = z.shape[0]
    delta = 2.0 * (post[-1] - targets) / (m * params.n_outputs)
    grad_w = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.biases)
    for l in range(last, -1, -1):
        grad_w[l] = delta.T @ post[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * _activate_grad(params, post[l])
    return grad_w, grad_b


@dataclass(frozen=True)
class TrainConfig:
    """Adam training settings with early stopping on validation loss.

    When the validation loss has not improved for ``lr_decay_patience``
    epochs the learning rate is multiplied by ``lr_decay`` (1.0 turns
    this off); the early-stop counter keeps running independently, so
    persistent plateaus still terminate the run.
    """

    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 2000
    early_stop_patience: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_mse_goal: float | None = None
    lr_decay: float = 0.5
    lr_decay_patience: int = 8

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigurationError("batch_size, max_epochs and patience must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.lr_decay_patience < 1:
            raise ConfigurationError("lr_decay_patience must be >= 1")


@dataclass(frozen=True)
class Dataset:
    """Supervised one-step transitions with a fixed three-way split.

    ``inputs`` rows are already min-max scaled with statistics from the
    training rows only; the window is kept so it can be stamped onto the
    trained model.
    """

    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    input_min: np.ndarray
    input_max: np.ndarray


def build_dataset(
    raw_inputs: np.ndarray,
    targets: np.ndarray,
    split: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> Dataset:
    """Shuffle, split and scale raw [u; xi] -> xi' pairs.

    The split is by count: floor(0.7 m) / floor(0.2 m) / remainder, on a
    seed-shuffled permutation, so the three parts are disjoint and
    exhaustive.
    """
    raw_inputs = np.asarray(raw_inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if raw_inputs.ndim != 2 or targets.ndim != 2 or raw_inputs.shape[0] != targets.shape[0]:
        raise ContractViolationError("inputs and targets must be 2-D with matching rows")
    if abs(sum(split) - 1.0) > 1e-12 or any(s <= 0 for s in split[:2]) or split[2] < 0:
        raise ConfigurationError(f"split fractions must be positive and sum to 1, got {split}")
    m = raw_inputs.shape[0]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(m)
    n_train = int(split[0] * m)
    n_val = int(split[1] * m)
    if n_train < 1 or n_val < 1:
        raise ConfigurationError(f"dataset of {m} rows is too small for split {split}")
    train_idx = perm[:n_train]
    val_idx = perm[n_train : n_train + n_val]
    test_idx = perm[n_train + n_val :]
    input_min = raw_inputs[train_idx].min(axis=0)
    input_max = raw_inputs[train_idx].max(axis=0)
    spans = np.where(input_max > input_min, input_max - input_min, 1.0)
    return Dataset(
        inputs=(raw_inputs - input_min) / spans,
        targets=targets.copy(),
        train_idx=np.sort(train_idx),
        val_idx=np.sort(val_idx),
        test_idx=np.sort(test_idx),
        input_min=input_min,
        input_max=input_max,
    )


@dataclass
class TrainHistory:
    """Per-epoch loss trace; epoch 0 is the evaluation before any update."""

    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def train(
    params: MlpParams, dataset: Dataset, config: TrainConfig
) -> tuple[MlpParams, TrainHistory]:
    """Adam on minibatches with early stopping on validation MSE.

    The learning rate decays by ``config.lr_decay`` whenever validation
    stalls for ``config.lr_decay_patience`` epochs (counted from the
    later of the last improvement and the last decay). Returns the
    parameters of the best validation epoch with the dataset's input
    window stamped on, plus the loss history. Epoch ordering, shuffling
    and arithmetic are all deterministic for a given seed.
    """
    x_train = dataset.inputs[dataset.train_idx]
    y_train = dataset.targets[dataset.train_idx]
    x_val = dataset.inputs[dataset.val_idx]
    y_val = dataset.targets[dataset.val_idx]
    work = params.copy()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))

    m_w = [np.zeros_like(w) for w in work.weights]
    v_w = [np.zeros_like(w) for w in work.weights]
    m_b = [np.zeros_like(b) for b in work.biases]
    v_b = [np.zeros_like(b) for b in work.biases]
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps

    history = TrainHistory()
    history.epochs.append(0)
    history.train_mse.append(loss(work, x_train, y_train))
    history.val_mse.append(loss(work, x_val, y_val))
    history.learning_rates.append(config.learning_rate)
    best_val = history.val_mse[0]
    best_params = work.copy()
    best_epoch = 0
    learning_rate = config.learning_rate
    last_decay_epoch = 0
    t = 0

    n_train = x_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_w, grad_b = gradient(work, x_train[batch], y_train[batch])
            t += 1
            correction = np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
            for l in range(len(work.weights)):
                m_w[l] = b1 * m_w[l] + (1 - b1) * grad_w[l]
                v_w[l] = b2 * v_w[l] + (1 - b2) * grad_w[l] ** 2
                work.weights[l] -= (
                    learning_rate * correction * m_w[l] / (np.sqrt(v_w[l]) + eps)
                )
                m_b[l] = b1 * m_b[l] + (1 - b1) * grad_b[l]
                v_b[l] = b2 * v_b[l] + (1 - b2) * grad_b[l] ** 2
                work.biases[l] -= (
                    learning_rate * correction * m_b[l] / (np.sqrt(v_b[l]) + eps)
                )
        train_mse = loss(work, x_train, y_train)
        val_mse = loss(work, x_val, y_val)
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch} "
                f"(learning_rate={learning_rate})"
            )
        history.epochs.append(epoch)
        history.train_mse.append(train_mse)
        history.val_mse.append(val_mse)
        history.learning_rates.append(learning_rate)
        if val_mse < best_val:
            best_val = val_mse
            best_params = work.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= config.early_stop_patience:
            history.stopped_early = True
            break
        elif (
            config.lr_decay < 1.0
            and epoch - max(best_epoch, last_decay_epoch) >= config.lr_decay_patience
        ):
            learning_rate *= config.lr_decay
            last_decay_epoch = epoch
        if config.train_mse_goal is not None and train_mse < config.train_mse_goal:
            best_params = work.copy()
            best_epoch = epoch
            break

    history.best_epoch = best_epoch
    best_params = replace(
        best_params,
        input_min=dataset.input_min.copy(),
        input_max=dataset.input_max.copy(),
    )
    return best_params, history


def rollout(params: MlpParams, xi0: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Iterate the surrogate open loop.

    ``inputs`` is (T, n_u); the result is (T+1, n_xi) with the initial
    condition in row 0.
    """
    xi0 = np.asarray(xi0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2:
        raise ContractViolationError("inputs must be (steps, n_u)")
    out = np.empty((inputs.shape[0] + 1, xi0.size))
    out[0] = xi0
    for k, u in enumerate(inputs):
        out[k + 1] = forward(params, out[k], u)
    return out


def save_model(path, params: MlpParams) -> None:
    """Serialize a model to the portable binary layout.

    Layout: magic "ROMMLP1", little-endian int32 layer count, the layer
    dims as int32, then per transition the row-major float64 weight and
    the float64 bias, then the float64 input window (min then max). A
    model without a stored window is written with the identity window
    [0, 1] per dimension.
    """
    dims = params.layer_dims
    in_min = params.input_min
    in_max = params.input_max
    if in_min is None:
        in_min = np.zeros(dims[0])
        in_max = np.ones(dims[0])
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<i", len(dims)))
        fh.write(np.asarray(dims, dtype="<i4").tobytes())
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.asarray(b, dtype="<f8").tobytes())
        fh.write(np.asarray(in_min, dtype="<f8").tobytes())
        fh.write(np.asarray(in_max, dtype="<f8").tobytes())


def load_model(path) -> MlpParams:
    """Read a model written by :func:`save_model`. Hidden layers are tanh."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ContractViolationError(
                f"bad model file magic {magic!r}, expected {MODEL_MAGIC!r}"
            )
        (n_dims,) = struct.unpack("<i", fh.read(4))
        if n_dims < 2:
            raise ContractViolationError(f"model file declares {n_dims} layer dims")
        dims = np.frombuffer(fh.read(4 * n_dims), dtype="<i4")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
            weights.append(w.reshape(fan_out, fan_in).copy())
            biases.append(np.frombuffer(fh.read(8 * fan_out), dtype="<f8").copy())
        input_min = np.frombuffer(fh.read(8 * dims[0]), dtype="<f8").copy()
        input_max = np.frombuffer(fh.read(8 * dims[0]), dtype="<f8").copy()
        trailer = fh.read()
    if len(trailer) != 0:
        raise ContractViolationError(f"model file has {len(trailer)} trailing bytes")
    return MlpParams(
        layer_dims=tuple(int(d) for d in dims),
        weights=weights,
        biases=biases,
        hidden_activation="tanh",
        input_min=input_min,
        input_max=input_max,
    )
