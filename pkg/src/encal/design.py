"""Multi-stage sampling pipeline that produces the emulator training set.

A space-filling design over the full parameter box is thinned in two
stages: first by a cheap cell-level feasibility classifier (trained on
single-cell simulations of the four cell parameters), then by running the
tissue protocol on the survivors and discarding any run with missing
markers.  Survivors are split into training and validation subsets.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import MMS_BOUNDS
from .errors import DegenerateLabels, InsufficientSurvivors
from .models.markers import cell_feasibility, output_labels, s1s2_outputs
from .models.mms import CellParams, Geometry, PacingProtocol, TissueParams, default_cable

CELL_BOUNDS = MMS_BOUNDS[:4]


@dataclass(frozen=True)
class LhsDesign:
    """Latin hypercube sample: one point per equal-probability stratum in
    every 1-d projection."""

    points: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]


def lhs_sample(M: int, bounds, seed: int, maximin_restarts: int = 1000) -> LhsDesign:
    """Maximin-refined Latin hypercube in the given box.

    Draws ``maximin_restarts`` independent LHS candidates and keeps the one
    with the largest minimal pairwise distance in the unit cube (so widely
    different parameter scales weigh equally).  Deterministic given seed.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    d = len(bounds)
    if M < d:
        raise ValueError(f"need at least d={d} points, got {M}")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    best_unit = None
    best_sep = -np.inf
    for _ in range(max(1, maximin_restarts)):
        unit = np.empty((M, d))
        for j in range(d):
            unit[:, j] = (rng.permutation(M) + rng.uniform(size=M)) / M
        if M > 1:
            diff = unit[:, None, :] - unit[None, :, :]
            dist2 = np.einsum("ijk,ijk->ij", diff, diff)
            np.fill_diagonal(dist2, np.inf)
            sep = dist2.min()
        else:
            sep = np.inf
        if sep > best_sep:
            best_sep = sep
            best_unit = unit
    return LhsDesign(lo + best_unit * (hi - lo), seed)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class FeasibilityClassifier:
    """Logistic regression on the standardized cell parameters."""

    weights: np.ndarray
    intercept: float
    x_mean: np.ndarray
    x_std: np.ndarray
    threshold: float = 0.5
    holdout_accuracy: float = float("nan")

    def probability(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = (X - self.x_mean) / self.x_std @ self.weights + self.intercept
        return _sigmoid(z)

    def accept(self, X: np.ndarray) -> np.ndarray:
        return self.probability(X) > self.threshold

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "intercept": self.intercept,
                "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "threshold": self.threshold, "holdout_accuracy": self.holdout_accuracy}

    @classmethod
    def from_dict(cls, doc) -> "FeasibilityClassifier":
        return cls(np.array(doc["weights"]), float(doc["intercept"]),
                   np.array(doc["x_mean"]), np.array(doc["x_std"]),
                   float(doc["threshold"]), float(doc["holdout_accuracy"]))


def train_classifier(X: np.ndarray, labels: np.ndarray, threshold: float = 0.5,
                     seed: int = 0, iterations: int = 4000, learning_rate: float = 0.5,
                     l2: float = 1e-4, holdout_fraction: float = 0.25) -> FeasibilityClassifier:
    """Maximum-likelihood logistic regression by full-batch gradient ascent.

    Raises DegenerateLabels when the labels contain a single class.  The
    reported accuracy comes from a seeded holdout split.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(labels, dtype=float)
    if y.min() == y.max():
        raise DegenerateLabels("all feasibility labels are identical")

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    perm = rng.permutation(n)
    n_hold = int(round(holdout_fraction * n))
    hold, train = perm[:n_hold], perm[n_hold:]
    if hold.size == 0 or train.size == 0:
        hold = train = perm

    x_mean = X[train].mean(axis=0)
    x_std = X[train].std(axis=0)
    x_std[x_std == 0.0] = 1.0
    Xs = (X - x_mean) / x_std

    w = np.zeros(X.shape[1])
    b = 0.0
    Xt, yt = Xs[train], y[train]
    for _ in range(iterations):
        p = _sigmoid(Xt @ w + b)
        err = yt - p
        w += learning_rate * (Xt.T @ err / len(yt) - l2 * w)
        b += learning_rate * err.mean()

    pred = _sigmoid(Xs[hold] @ w + b) > threshold
    acc = float(np.mean(pred == (y[hold] > 0.5)))
    return FeasibilityClassifier(w, b, x_mean, x_std, threshold, acc)


def label_cell_feasibility(cell_points: np.ndarray,
                           protocol: PacingProtocol | None = None,
                           threads: int = 1) -> tuple[np.ndarray, list[str]]:
    """Simulate each 4-parameter cell set and label it feasible/unfeasible."""
    protocol = protocol or PacingProtocol()

    def one(row):
        return cell_feasibility(CellParams.from_array(row), protocol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, cell_points))
    else:
        results = [one(row) for row in cell_points]
    labels = np.array([r.feasible for r in results], dtype=bool)
    reasons = [r.reason for r in results]
    return labels, reasons


@dataclass(frozen=True)
class DesignResult:
    """Survivors of the two rejection stages with their tissue outputs."""

    params: np.ndarray                 # (n, 5)
    outputs: np.ndarray                # (n, 3 * n_sensors), complete rows only
    ids: tuple[str, ...]
    train_idx: np.ndarray
    validation_idx: np.ndarray
    labels: tuple[str, ...]
    manifest: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.params.shape[0]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header_p = "id," + ",".join(("tau_in", "tau_out", "tau_open", "tau_close", "D"))
        with open(out / "parameters.csv", "w") as fh:
            fh.write(header_p + "\n")
            for pid, row in zip(self.ids, self.params):
                fh.write(pid + "," + ",".join(repr(v) for v in row) + "\n")
        with open(out / "outputs.csv", "w") as fh:
            fh.write("id," + ",".join(self.labels) + "\n")
            for pid, row in zip(self.ids, self.outputs):
                fh.write(pid + "," + ",".join(repr(v) for v in row) + "\n")
        manifest = dict(self.manifest)
        manifest["train_ids"] = [self.ids[i] for i in self.train_idx]
        manifest["validation_ids"] = [self.ids[i] for i in self.validation_idx]
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def read(cls, out_dir) -> "DesignResult":
        out = Path(out_dir)

        def read_csv(path):
            with open(path) as fh:
                rows = [line.rstrip("\n").split(",") for line in fh
                        if line.strip() and not line.startswith("#")]
            ids = tuple(r[0] for r in rows[1:])
            values = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
            return rows[0][1:], ids, values

        _, ids, params = read_csv(out / "parameters.csv")
        labels, ids2, outputs = read_csv(out / "outputs.csv")
        if ids != ids2:
            raise ValueError("parameters.csv and outputs.csv disagree on ids")
        manifest = json.loads((out / "manifest.json").read_text())
        index = {pid: i for i, pid in enumerate(ids)}
        train_idx = np.array([index[i] for i in manifest["train_ids"]], dtype=int)
        val_idx = np.array([index[i] for i in manifest["validation_ids"]], dtype=int)
        return cls(params, outputs, ids, train_idx, val_idx, tuple(labels), manifest)


def build_ensemble(M0: int, classifier: FeasibilityClassifier,
                   geometry: Geometry | None = None,
                   protocol: PacingProtocol | None = None,
                   bounds=MMS_BOUNDS, seed: int = 0,
                   train_fraction: float = 0.87, threads: int = 1,
                   maximin_restarts: int = 1000) -> DesignResult:
    """LHS -> classifier rejection -> tissue runs -> completeness rejection.

    Raises InsufficientSurvivors when fewer than 2*d sets survive.  The
    manifest records seeds, per-stage counts and a rejection reason per
    discarded point.
    """
    geometry = geometry or default_cable()
    protocol = protocol or PacingProtocol()
    design = lhs_sample(M0, bounds, seed, maximin_restarts)
    ids = [f"p{i:04d}" for i in range(M0)]
    rejection: dict[str, str] = {}

    accept = classifier.accept(design.points[:, :4])
    for pid, ok in zip(ids, accept):
        if not ok:
            rejection[pid] = "classifier"
    stage1_idx = np.nonzero(accept)[0]

    labels = output_labels(len(geometry.sensors))

    def run_tissue(i):
        p = TissueParams.from_array(design.points[i])
        try:
            vec, _ = s1s2_outputs(p, geometry, protocol)
        except Exception as exc:  # unstable or degenerate runs count as failures
            return i, None, type(exc).__name__
        return i, vec, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tissue = list(pool.map(run_tissue, stage1_idx))
    else:
        tissue = [run_tissue(i) for i in stage1_idx]

    surv_rows = []
    surv_out = []
    surv_ids = []
    for i, vec, err in tissue:
        if err is not None:
            rejection[ids[i]] = err
        elif not np.all(np.isfinite(vec)):
            rejection[ids[i]] = "missing_outputs"
        else:
            surv_rows.append(design.points[i])
            surv_out.append(vec)
            surv_ids.append(ids[i])

    n = len(surv_ids)
    d = len(bounds)
    if n < 2 * d:
        raise InsufficientSurvivors(
            f"only {n} of {M0} parameter sets survived; need at least {2 * d}")

    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:])

    manifest = {
        "seed": seed,
        "initial_points": M0,
        "after_classifier": int(len(stage1_idx)),
        "survivors": n,
        "train_fraction": train_fraction,
        "classifier": classifier.to_dict(),
        "rejection_reasons": rejection,
        "geometry": {"nx": geometry.nx, "ny": geometry.ny, "dx": geometry.dx,
                     "sensors": list(geometry.sensors)},
        "bounds": [list(b) for b in bounds],
    }
    return DesignResult(np.array(surv_rows), np.array(surv_out), tuple(surv_ids),
                        train_idx, val_idx, labels, manifest)
