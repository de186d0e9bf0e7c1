"""romkit: reduced-order surrogate modeling and state estimation toolkit.

The package covers an end-to-end workflow for a deterministic nonlinear
reference plant: multi-level excitation design, snapshot collection,
normalized proper orthogonal decomposition, a neural one-step surrogate
of the reduced dynamics, and Kalman-type state estimators built on top
of it, together with a command line harness that chains the steps into
reproducible experiments.
"""

__version__ = "0.1.0"

from . import errors, estimator, excitation, harness, mlp, plant, pod

__all__ = ["errors", "excitation", "mlp", "plant", "pod", "__version__"]
