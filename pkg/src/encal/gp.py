"""Exact Gaussian process regression used as the stochastic surrogate.

One independent scalar emulator per output.  Each emulator has a linear
prior mean and an anisotropic (per-dimension lengthscale) RBF kernel;
hyperparameters are chosen by multi-start maximization of the marginal
log-likelihood with an analytic gradient.  Inputs are standardized per
dimension and outputs standardized per emulator; all hyperparameter bounds
below live in those standardized units.  Predictions are mapped back to the
original units exactly.

The mean coefficients are profiled out by generalized least squares at each
hyperparameter setting and treated as known afterwards, so the predictive
variance is that of exact GP conditioning with the fitted mean: it never
exceeds the prior signal variance and it vanishes at training points as the
noise floor goes to zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DegenerateTargetsWarning, DimensionMismatch, SingularKernel

LOG_LENGTHSCALE_BOUNDS = (np.log(1e-2), np.log(1e2))
LOG_SIGNAL_VAR_BOUNDS = (np.log(1e-4), np.log(1e4))
LOG_NOISE_VAR_BOUNDS = (np.log(1e-10), np.log(1e-2))
MAX_JITTER = 1e-2

SCHEMA_VERSION = 1


def _design(Xs: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(Xs.shape[0]), Xs])


def _chol_escalating(K_noiseless: np.ndarray, noise_var: float):
    """Cholesky of K + jitter*I, escalating jitter x10 up to MAX_JITTER."""
    n = K_noiseless.shape[0]
    jitter = noise_var
    while True:
        try:
            L = np.linalg.cholesky(K_noiseless + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            if jitter >= MAX_JITTER:
                raise SingularKernel(
                    f"kernel factorization failed at maximum jitter {MAX_JITTER}"
                ) from None
            jitter = min(max(jitter, 1e-10) * 10.0, MAX_JITTER)


@dataclass(frozen=True)
class EmulatorModel:
    """A fitted scalar emulator (immutable; predict is thread-safe).

    ``mean_coeffs`` and the kernel hyperparameters live in standardized
    input/output space; ``X_train``/``y_train`` keep the raw data so the
    model is self-contained for serialization.
    """

    X_train: np.ndarray
    y_train: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_scale: float
    log_lengthscales: np.ndarray
    log_signal_var: float
    log_noise_var: float
    mean_coeffs: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X_train, dtype=float))
        y = np.asarray(self.y_train, dtype=float)
        object.__setattr__(self, "X_train", X)
        object.__setattr__(self, "y_train", y)
        object.__setattr__(self, "x_mean", np.asarray(self.x_mean, dtype=float))
        object.__setattr__(self, "x_std", np.asarray(self.x_std, dtype=float))
        object.__setattr__(self, "log_lengthscales",
                           np.asarray(self.log_lengthscales, dtype=float))
        object.__setattr__(self, "mean_coeffs", np.asarray(self.mean_coeffs, dtype=float))
        Xs = (X - self.x_mean) / self.x_std
        ys = (y - self.y_mean) / self.y_scale
        K = self._kernel(Xs, Xs)
        L, jitter = _chol_escalating(K, float(np.exp(self.log_noise_var)))
        if jitter != float(np.exp(self.log_noise_var)):
            object.__setattr__(self, "log_noise_var", float(np.log(jitter)))
        resid = ys - _design(Xs) @ self.mean_coeffs
        alpha = cho_solve((L, True), resid)
        lml = (-0.5 * float(resid @ alpha) - float(np.log(np.diag(L)).sum())
               - 0.5 * Xs.shape[0] * np.log(2.0 * np.pi))
        object.__setattr__(self, "_Xs", Xs)
        object.__setattr__(self, "_L", L)
        object.__setattr__(self, "_alpha", alpha)
        object.__setattr__(self, "_lml", lml)

    # hyperparameters in standardized units
    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_var(self) -> float:
        return float(np.exp(self.log_signal_var))

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))

    @property
    def signal_var_output(self) -> float:
        """Prior variance in output units (far-field predictive variance)."""
        return self.signal_var * self.y_scale**2

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]

    def _kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        ls = self.lengthscales
        sq = cdist(A / ls, B / ls, "sqeuclidean")
        return self.signal_var * np.exp(-0.5 * sq)

    def predict_batch(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (output units) at each row of theta."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != self.dim:
            raise DimensionMismatch(
                f"expected dimension {self.dim}, got {theta.shape[1]}")
        xs = (theta - self.x_mean) / self.x_std
        k_star = self._kernel(self._Xs, xs)            # (M, N)
        mean_s = _design(xs) @ self.mean_coeffs + k_star.T @ self._alpha
        V = solve_triangular(self._L, k_star, lower=True)
        var_s = np.clip(self.signal_var - np.einsum("ij,ij->j", V, V), 0.0, None)
        return self.y_mean + self.y_scale * mean_s, self.y_scale**2 * var_s

    def to_dict(self) -> dict:
        return {
            "X_train": self.X_train.tolist(),
            "y_train": self.y_train.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "log_lengthscales": self.log_lengthscales.tolist(),
            "log_signal_var": self.log_signal_var,
            "log_noise_var": self.log_noise_var,
            "mean_coeffs": self.mean_coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EmulatorModel":
        return cls(
            np.array(doc["X_train"], dtype=float),
            np.array(doc["y_train"], dtype=float),
            np.array(doc["x_mean"], dtype=float),
            np.array(doc["x_std"], dtype=float),
            float(doc["y_mean"]),
            float(doc["y_scale"]),
            np.array(doc["log_lengthscales"], dtype=float),
            float(doc["log_signal_var"]),
            float(doc["log_noise_var"]),
            np.array(doc["mean_coeffs"], dtype=float),
        )


def predict(model: EmulatorModel, theta) -> tuple[float, float]:
    """Posterior mean and variance of the emulator at a single point."""
    values = getattr(theta, "values", theta)
    mean, var = model.predict_batch(np.asarray(values, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def _gls_lml_grad(ys, F, K_rbf, noise_var, sq_dists_by_dim, lengthscales):
    """Profile log-likelihood (mean coefficients solved by GLS) and its
    gradient in (log lengthscales, log signal var, log noise var)."""
    M = ys.shape[0]
    K = K_rbf + noise_var * np.eye(M)
    L = np.linalg.cholesky(K)
    A = solve_triangular(L, F, lower=True)
    b = solve_triangular(L, ys, lower=True)
    beta, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = ys - F @ beta
    alpha = cho_solve((L, True), resid)
    lml = (-0.5 * float(resid @ alpha) - float(np.log(np.diag(L)).sum())
           - 0.5 * M * np.log(2.0 * np.pi))
    # d lml / d phi = 0.5 tr((alpha alpha^T - K^-1) dK/dphi); the GLS mean is
    # stationary so its phi-dependence drops out (envelope theorem).
    K_inv = cho_solve((L, True), np.eye(M))
    G = np.outer(alpha, alpha) - K_inv
    grad = np.empty(len(lengthscales) + 2)
    for j, sq in enumerate(sq_dists_by_dim):
        dK = K_rbf * (sq / lengthscales[j] ** 2)
        grad[j] = 0.5 * float(np.sum(G * dK))
    grad[-2] = 0.5 * float(np.sum(G * K_rbf))
    grad[-1] = 0.5 * noise_var * float(np.trace(G))
    return lml, grad, beta


def fit(X: np.ndarray, y: np.ndarray, restarts: int = 10, seed: int = 0) -> EmulatorModel:
    """Fit one scalar emulator, keeping the best of ``restarts`` starts.

    Deterministic given (X, y, restarts, seed).  Raises SingularKernel if no
    start can factorize the kernel;  constant targets succeed with the
    signal variance at its floor and a DegenerateTargetsWarning.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    M, d = X.shape
    if M < 2:
        raise ValueError("need at least 2 training points")
    if y.shape != (M,):
        raise DimensionMismatch(f"y shape {y.shape} does not match M={M}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std[x_std == 0.0] = 1.0
    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y_sd == 0.0:
        warnings.warn("constant targets: signal variance will sit at its floor",
                      DegenerateTargetsWarning)
    y_scale = y_sd if y_sd > 0.0 else 1.0

    Xs = (X - x_mean) / x_std
    ys = (y - y_mean) / y_scale
    F = _design(Xs)
    sq_dists = [np.subtract.outer(Xs[:, j], Xs[:, j]) ** 2 for j in range(d)]

    lo = np.array([LOG_LENGTHSCALE_BOUNDS[0]] * d
                  + [LOG_SIGNAL_VAR_BOUNDS[0], LOG_NOISE_VAR_BOUNDS[0]])
    hi = np.array([LOG_LENGTHSCALE_BOUNDS[1]] * d
                  + [LOG_SIGNAL_VAR_BOUNDS[1], LOG_NOISE_VAR_BOUNDS[1]])

    def objective(phi):
        ls = np.exp(phi[:d])
        sf2 = np.exp(phi[d])
        sn2 = np.exp(phi[d + 1])
        sq_scaled = sum(sq / l**2 for sq, l in zip(sq_dists, ls))
        K_rbf = sf2 * np.exp(-0.5 * sq_scaled)
        try:
            lml, grad, _ = _gls_lml_grad(ys, F, K_rbf, sn2, sq_dists, ls)
        except np.linalg.LinAlgError:
            return 1e12, np.zeros_like(phi)
        return -lml, -grad

    rng = np.random.default_rng(seed)
    starts = [np.concatenate([np.zeros(d), [0.0], [np.log(1e-6)]])]
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))

    best = None
    for x0 in starts:
        res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)))
        if np.isfinite(res.fun) and res.fun < 1e11 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise SingularKernel("all optimizer starts failed to factorize the kernel")

    phi = best.x
    return EmulatorModel(
        X_train=X, y_train=y, x_mean=x_mean, x_std=x_std,
        y_mean=y_mean, y_scale=y_scale,
        log_lengthscales=phi[:d], log_signal_var=float(phi[d]),
        log_noise_var=float(phi[d + 1]),
        mean_coeffs=_refit_mean(ys, F, Xs, phi, sq_dists),
    )


def _refit_mean(ys, F, Xs, phi, sq_dists):
    d = Xs.shape[1]
    ls = np.exp(phi[:d])
    sq_scaled = sum(sq / l**2 for sq, l in zip(sq_dists, ls))
    K_rbf = np.exp(phi[d]) * np.exp(-0.5 * sq_scaled)
    _, _, beta = _gls_lml_grad(ys, F, K_rbf, np.exp(phi[d + 1]), sq_dists, ls)
    return beta


def log_marginal_likelihood(model: EmulatorModel, X=None, y=None) -> float:
    """Gaussian log-density of targets under the model's prior mean/kernel.

    With no arguments, returns the value cached for the training data.
    """
    if X is None and y is None:
        return model._lml
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"expected dimension {model.dim}, got {X.shape[1]}")
    Xs = (X - model.x_mean) / model.x_std
    ys = (y - model.y_mean) / model.y_scale
    K = model._kernel(Xs, Xs) + model.noise_var * np.eye(X.shape[0])
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise SingularKernel("kernel matrix is not positive definite") from None
    resid = ys - _design(Xs) @ model.mean_coeffs
    alpha = cho_solve((L, True), resid)
    return (-0.5 * float(resid @ alpha) - float(np.log(np.diag(L)).sum())
            - 0.5 * X.shape[0] * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EmulatorBank:
    """Independent scalar emulators, one per output label."""

    emulators: tuple[EmulatorModel, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "emulators", tuple(self.emulators))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.emulators) != len(self.labels):
            raise DimensionMismatch(
                f"{len(self.emulators)} emulators vs {len(self.labels)} labels")
        dims = {m.dim for m in self.emulators}
        if len(dims) > 1:
            raise DimensionMismatch(f"emulators disagree on input dimension: {dims}")

    @property
    def p(self) -> int:
        return len(self.emulators)

    @property
    def dim(self) -> int:
        return self.emulators[0].dim

    def predict_matrix(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances, shape (p, N), at each row of theta."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        means = np.empty((self.p, theta.shape[0]))
        variances = np.empty((self.p, theta.shape[0]))
        for i, em in enumerate(self.emulators):
            means[i], variances[i] = em.predict_batch(theta)
        return means, variances

    def select(self, labels) -> "EmulatorBank":
        """Sub-bank restricted to the given labels, in the given order."""
        index = {lab: i for i, lab in enumerate(self.labels)}
        missing = [lab for lab in labels if lab not in index]
        if missing:
            raise KeyError(f"labels not in bank: {missing}")
        return EmulatorBank(tuple(self.emulators[index[lab]] for lab in labels),
                            tuple(labels))


def predict_bank(bank: EmulatorBank, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-output predictive means and variances at each ensemble member."""
    return bank.predict_matrix(theta)


def fit_bank(X: np.ndarray, Y: np.ndarray, labels, restarts: int = 10,
             seed: int = 0) -> EmulatorBank:
    """Fit one emulator per column of Y; deterministic given the seed."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    labels = tuple(labels)
    if Y.shape[1] != len(labels):
        raise DimensionMismatch(f"Y has {Y.shape[1]} columns for {len(labels)} labels")
    models = tuple(fit(X, Y[:, j], restarts=restarts, seed=seed + j)
                   for j in range(Y.shape[1]))
    return EmulatorBank(models, labels)


def save_bank(bank: EmulatorBank, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "labels": list(bank.labels),
        "emulators": [em.to_dict() for em in bank.emulators],
    }
    Path(path).write_text(json.dumps(doc))


def load_bank(path) -> EmulatorBank:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported bank schema {doc.get('schema_version')}")
    return EmulatorBank(tuple(EmulatorModel.from_dict(d) for d in doc["emulators"]),
                        tuple(doc["labels"]))


class CallableBank:
    """Bank-shaped wrapper around an exact forward map (zero variance).

    Used where the measurement operator is known in closed form: the
    linear-Gaussian checks and the exact-map variants of the experiments.
    """

    def __init__(self, fn, labels, variance: float = 0.0):
        self.fn = fn
        self.labels = tuple(labels)
        self.variance = float(variance)

    @property
    def p(self) -> int:
        return len(self.labels)

    def predict_matrix(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        out = np.asarray(self.fn(theta), dtype=float)
        if out.shape != (theta.shape[0], self.p):
            raise DimensionMismatch(
                f"forward map returned {out.shape}, expected {(theta.shape[0], self.p)}")
        return out.T, np.full((self.p, theta.shape[0]), self.variance)


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Proportion of variance explained on held-out data."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot
