"""Artifact serialization shared by the pipeline commands.

Numeric tables are CSV with '.' decimals, '\\n' line endings and one
header line; floats are written with repr so a reread is bit-exact and
file digests are stable.  The only binary artifact besides the trained
model is the basis file, which bundles the normalization window with
the modes so downstream commands cannot pair them up wrongly.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .. import pod
from ..errors import ContractViolationError, MissingArtifactError

BASIS_MAGIC = b"ROMPOD1"


def save_basis(
    path: str | Path,
    basis: pod.ReducedBasis,
    normalization: pod.NormalizationParams,
) -> None:
    """Binary layout: magic, int32 (n, r), float64 total energy, then
    singular values, row-major modes, and the normalization window."""
    if basis.n_states != normalization.n_states:
        raise ContractViolationError(
            f"basis covers {basis.n_states} states, normalization "
            f"{normalization.n_states}"
        )
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<2i", basis.n_states, basis.order))
        fh.write(struct.pack("<d", basis.total_energy))
        fh.write(np.asarray(basis.singular_values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.modes, dtype="<f8").tobytes())
        fh.write(np.asarray(normalization.x_min, dtype="<f8").tobytes())
        fh.write(np.asarray(normalization.x_max, dtype="<f8").tobytes())


def load_basis(path: str | Path) -> tuple[pod.ReducedBasis, pod.NormalizationParams]:
    """Read a file written by :func:`save_basis`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(BASIS_MAGIC))
        if magic != BASIS_MAGIC:
            raise ContractViolationError(f"{path} is not a basis file")
        n, r = struct.unpack("<2i", fh.read(8))
        if n < 1 or r < 1 or r > n:
            raise ContractViolationError(f"basis header has invalid shape ({n}, {r})")
        (total_energy,) = struct.unpack("<d", fh.read(8))
        singular_values = np.frombuffer(fh.read(8 * r), dtype="<f8").copy()
        modes = (
            np.frombuffer(fh.read(8 * n * r), dtype="<f8").reshape(n, r).copy()
        )
        x_min = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        x_max = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        if fh.read(1):
            raise ContractViolationError(f"{path} has trailing bytes")
    basis = pod.ReducedBasis(
        modes=modes, singular_values=singular_values, total_energy=total_energy
    )
    return basis, pod.NormalizationParams(x_min=x_min, x_max=x_max)


def write_table(path: str | Path, header: tuple[str, ...], rows) -> None:
    """Write one CSV table; floats via repr, everything else via str."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else str(v) for v in row]
            )


def read_table(path: str | Path, expected_header: tuple[str, ...] | None = None):
    """Read a CSV table back as (header, list of string rows)."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if expected_header is not None and header != expected_header:
            raise ContractViolationError(
                f"{path} has header {header}, expected {expected_header}"
            )
        return header, [row for row in reader]


def state_header(n_states: int, prefix: str = "x") -> tuple[str, ...]:
    return ("sample_index",) + tuple(f"{prefix}_{i + 1}" for i in range(n_states))


def write_states_csv(path: str | Path, states: np.ndarray, prefix: str = "x") -> None:
    """States are column-per-sample; rows in the file are samples."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2:
        raise ContractViolationError(f"expected a 2-D state matrix, got {states.shape}")
    rows = (
        [k] + [float(v) for v in states[:, k]] for k in range(states.shape[1])
    )
    write_table(path, state_header(states.shape[0], prefix), rows)


def read_states_csv(path: str | Path, prefix: str = "x") -> np.ndarray:
    header, rows = read_table(path)
    n = len(header) - 1
    if header != state_header(n, prefix):
        raise ContractViolationError(f"{path} is not a {prefix}-state table")
    out = np.empty((n, len(rows)))
    for k, row in enumerate(rows):
        if int(row[0]) != k:
            raise ContractViolationError(f"{path} has non-contiguous sample indices")
        out[:, k] = [float(v) for v in row[1:]]
    return out


def write_measurements_csv(path: str | Path, selection, measurements: np.ndarray) -> None:
    """Measurements are row-per-sample, one column per selected state."""
    meas = np.asarray(measurements, dtype=float)
    if meas.ndim != 2 or meas.shape[1] != len(selection):
        raise ContractViolationError(
            f"expected (samples, {len(selection)}) measurements, got {meas.shape}"
        )
    header = ("sample_index",) + tuple(f"y_x{int(i)}" for i in selection)
    rows = ([k + 1] + [float(v) for v in meas[k]] for k in range(meas.shape[0]))
    write_table(path, header, rows)


def read_measurements_csv(path: str | Path) -> tuple[tuple[int, ...], np.ndarray]:
    header, rows = read_table(path)
    if not header or header[0] != "sample_index":
        raise ContractViolationError(f"{path} is not a measurement table")
    try:
        selection = tuple(int(name[3:]) for name in header[1:])
    except ValueError as exc:
        raise ContractViolationError(f"{path} has a malformed header") from exc
    out = np.empty((len(rows), len(selection)))
    for k, row in enumerate(rows):
        out[k] = [float(v) for v in row[1:]]
    return selection, out
