"""Shared domain types: parameter vectors, ensembles, observations.

All types are immutable value objects after construction and can be shared
across threads without locking.  Arrays handed to constructors are copied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch

# Box bounds of the five tissue parameters, in their natural units
# (time constants in ms, conductivity in cm^2/s).
MMS_NAMES = ("tau_in", "tau_out", "tau_open", "tau_close", "D")
MMS_BOUNDS = ((0.01, 0.3), (1.0, 30.0), (65.0, 215.0), (100.0, 150.0), (0.1, 5.0))

# Two-parameter polynomial test problem on [-5, 5]^2.
TOY_NAMES = ("theta1", "theta2")
TOY_BOUNDS = ((-5.0, 5.0), (-5.0, 5.0))


def _as_bounds(bounds) -> tuple[tuple[float, float], ...]:
    out = tuple((float(lo), float(hi)) for lo, hi in bounds)
    for lo, hi in out:
        if not lo < hi:
            raise ValueError(f"bounds must satisfy lo < hi, got ({lo}, {hi})")
    return out


@dataclass(frozen=True)
class ParameterVector:
    """A point in calibration space with named components and box bounds."""

    values: np.ndarray
    names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).copy())
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "bounds", _as_bounds(self.bounds))
        d = self.values.shape
        if self.values.ndim != 1 or d[0] < 1:
            raise DimensionMismatch(f"values must be a nonempty 1-d vector, got shape {d}")
        if len(self.names) != self.dim or len(self.bounds) != self.dim:
            raise DimensionMismatch(
                f"names ({len(self.names)}) and bounds ({len(self.bounds)}) "
                f"must match dimension {self.dim}"
            )
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"parameter names must be unique, got {self.names}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


class ClampResult(NamedTuple):
    vector: ParameterVector
    clamped: bool


def clamp_to_bounds(theta: ParameterVector) -> ClampResult:
    """Project each component into its [lo, hi] box.

    Returns the projected vector and a flag recording whether any component
    actually moved.  Idempotent.
    """
    lo = np.array([b[0] for b in theta.bounds])
    hi = np.array([b[1] for b in theta.bounds])
    clipped = np.clip(theta.values, lo, hi)
    moved = bool(np.any(clipped != theta.values))
    if not moved:
        return ClampResult(theta, False)
    return ClampResult(ParameterVector(clipped, theta.names, theta.bounds), True)


def clamp_matrix(values: np.ndarray, bounds) -> tuple[np.ndarray, int]:
    """Row-wise box projection for an (N, d) array.

    Returns the projected array and the number of rows that moved.
    """
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    clipped = np.clip(values, lo, hi)
    n_clamped = int(np.any(clipped != values, axis=1).sum())
    return clipped, n_clamped


@dataclass(frozen=True)
class GaussianSummary:
    """Mean and covariance reported for a (approximately Gaussian) posterior."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        cov = np.asarray(self.covariance, dtype=float).copy()
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"mean shape {mean.shape} incompatible with covariance shape {cov.shape}"
            )
        scale = np.max(np.abs(cov)) or 1.0
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric within 1e-12 relative tolerance")
        cov = 0.5 * (cov + cov.T)
        eigs = np.linalg.eigvalsh(cov)
        if eigs.size and eigs[0] < -1e-10 * max(eigs[-1], 0.0):
            raise ValueError(f"covariance has a significantly negative eigenvalue: {eigs[0]}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class Ensemble:
    """N parameter vectors plus iteration metadata.

    ``values`` has one member per row.  Members share names and bounds, so
    the heterogeneous list-of-vectors form is only used at the boundaries
    (``from_members`` / ``members``).
    """

    values: np.ndarray
    names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...] | None = None
    iteration: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.ndim != 2:
            raise DimensionMismatch(f"values must be (N, d), got shape {values.shape}")
        if values.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 members")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != values.shape[1]:
            raise DimensionMismatch(
                f"{len(self.names)} names for dimension {values.shape[1]}"
            )
        if self.bounds is not None:
            object.__setattr__(self, "bounds", _as_bounds(self.bounds))
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")

    @property
    def n_members(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_members(cls, members: Sequence[ParameterVector], iteration: int = 0,
                     rng_seed: int = 0) -> "Ensemble":
        if len(members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise DimensionMismatch(f"members have differing dimensions: {sorted(dims)}")
        first = members[0]
        return cls(
            np.stack([m.values for m in members]),
            first.names,
            first.bounds,
            iteration,
            rng_seed,
        )

    def members(self) -> list[ParameterVector]:
        bounds = self.bounds
        if bounds is None:
            # Synthesize unbounded boxes for boundary-only use.
            bounds = ((-np.inf, np.inf),) * self.dim
        return [ParameterVector(row, self.names, bounds) for row in self.values]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.names)
            writer.writerows(self.values.tolist())

    @classmethod
    def from_csv(cls, path, bounds=None, iteration: int = 0, rng_seed: int = 0) -> "Ensemble":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        names = tuple(rows[0])
        values = np.array([[float(x) for x in r] for r in rows[1:]])
        return cls(values, names, bounds, iteration, rng_seed)

    def to_json(self, path=None):
        doc = {
            "names": list(self.names),
            "bounds": [list(b) for b in self.bounds] if self.bounds is not None else None,
            "iteration": self.iteration,
            "rng_seed": self.rng_seed,
            "members": self.values.tolist(),
        }
        if path is None:
            return doc
        Path(path).write_text(json.dumps(doc, indent=1))
        return doc

    @classmethod
    def from_json(cls, source) -> "Ensemble":
        doc = json.loads(Path(source).read_text()) if not isinstance(source, dict) else source
        return cls(
            np.array(doc["members"], dtype=float),
            tuple(doc["names"]),
            tuple(tuple(b) for b in doc["bounds"]) if doc.get("bounds") else None,
            doc.get("iteration", 0),
            doc.get("rng_seed", 0),
        )


def ensemble_mean_cov(e: Ensemble) -> GaussianSummary:
    """Columnwise mean and unbiased (N-1) sample covariance of an ensemble.

    The covariance is symmetrized exactly after computation.
    """
    if e.n_members < 2:
        raise ValueError("sample covariance needs N >= 2")
    mean = e.values.mean(axis=0)
    dev = e.values - mean
    cov = dev.T @ dev / (e.n_members - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianSummary(mean, cov)


@dataclass(frozen=True)
class ObservationSet:
    """p scalar measurements with noise covariance R and output labels."""

    y: np.ndarray
    R: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).copy()
        R = np.asarray(self.R, dtype=float).copy()
        if y.ndim != 1 or y.size < 1:
            raise DimensionMismatch(f"y must be a nonempty vector, got shape {y.shape}")
        if R.shape != (y.size, y.size):
            raise DimensionMismatch(f"R shape {R.shape} incompatible with p={y.size}")
        if np.max(np.abs(R - R.T)) > 1e-12 * (np.max(np.abs(R)) or 1.0):
            raise ValueError("R must be symmetric")
        R = 0.5 * (R + R.T)
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("R must be positive definite")
        labels = tuple(self.labels) if self.labels else tuple(f"y{i}" for i in range(y.size))
        if len(labels) != y.size:
            raise DimensionMismatch(f"{len(labels)} labels for p={y.size}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.y.size

    def to_json(self, path=None):
        doc = {"y": self.y.tolist(), "R": self.R.tolist(), "labels": list(self.labels)}
        if path is None:
            return doc
        Path(path).write_text(json.dumps(doc, indent=1))
        return doc

    @classmethod
    def from_json(cls, source) -> "ObservationSet":
        doc = json.loads(Path(source).read_text()) if not isinstance(source, dict) else source
        R = doc["R"]
        if isinstance(R, dict):  # {"diag": [...]} shorthand
            R = np.diag(np.asarray(R["diag"], dtype=float))
        return cls(np.asarray(doc["y"], dtype=float), np.asarray(R, dtype=float),
                   tuple(doc.get("labels", ())))


def mms_parameter_vector(values) -> ParameterVector:
    return ParameterVector(values, MMS_NAMES, MMS_BOUNDS)


def toy_parameter_vector(values) -> ParameterVector:
    return ParameterVector(values, TOY_NAMES, TOY_BOUNDS)
