"""Iterated ensemble Kalman update for static calibration.

The single observation y is assimilated over K iterations.  Each iteration
re-noises the data and applies a Kalman correction built from ensemble
anomalies, with the emulator's own predictive variance entering the
innovation covariance member by member.  So that K repeated assimilations
carry exactly the information of one observation, the per-step noise
covariance is the tempered K*(R + diag k(theta_n)) in both the gain and the
per-member observation perturbation: for a linear map this makes the final
ensemble an exact draw from the conjugate posterior (up to Monte Carlo
error), and in general the K-step scheme targets the same posterior density
the MCMC baseline samples.  Between assimilations the members take a small
Brownian step sigma_theta, which inflates the posterior covariance by at
most sigma_theta sigma_theta^T per iteration.

All randomness comes from one generator seeded by the config, drawn in a
fixed documented order per iteration: observation-noise block (N x p),
emulator-noise block (N x p), then parameter-noise block (N x d), each
filled member-major.  Identical seeds give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import Ensemble, GaussianSummary, ObservationSet, clamp_matrix, ensemble_mean_cov
from .errors import DimensionMismatch, NonFiniteMember, SingularInnovation


@dataclass(frozen=True)
class EnkfConfig:
    """Run settings for the iterated ensemble Kalman calibration."""

    ensemble_size: int
    n_iterations: int
    sigma_theta: np.ndarray
    initial: GaussianSummary
    R: np.ndarray
    seed: int = 0
    record_trajectory: bool = False
    names: tuple[str, ...] | None = None
    bounds: tuple[tuple[float, float], ...] | None = None
    # False drops the K-scaling of the per-step noise: every iteration then
    # re-counts the observation at full weight (the over-conditioning mode,
    # kept for diagnostics).
    temper_observations: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sigma_theta",
                           np.asarray(self.sigma_theta, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if np.any(self.sigma_theta < 0):
            raise ValueError("sigma_theta must be componentwise >= 0")
        d = self.initial.dim
        if self.sigma_theta.shape != (d,):
            raise DimensionMismatch(
                f"sigma_theta shape {self.sigma_theta.shape} for dimension {d}")
        if np.linalg.eigvalsh(self.R)[0] <= 0:
            raise ValueError("R must be positive definite")


@dataclass(frozen=True)
class EnkfResult:
    """Final ensemble plus the per-iteration record of a calibration run."""

    final_ensemble: Ensemble
    posterior: GaussianSummary
    trajectory: tuple[GaussianSummary, ...] | None
    clamp_counts: np.ndarray
    innovations: np.ndarray  # (K, p) mean residual y - <m(theta)> per iteration

    def to_json(self) -> dict:
        return {
            "posterior": {"mean": self.posterior.mean.tolist(),
                          "covariance": self.posterior.covariance.tolist()},
            "clamp_counts": self.clamp_counts.tolist(),
            "innovations": self.innovations.tolist(),
            "trajectory": None if self.trajectory is None else [
                {"mean": g.mean.tolist(), "covariance": g.covariance.tolist()}
                for g in self.trajectory],
            "final_ensemble": self.final_ensemble.to_json(),
        }


def default_sigma_theta(bounds, fraction: float = 0.005) -> np.ndarray:
    """Pseudo-dynamics intensity: a small fraction of each prior range."""
    return np.array([(hi - lo) * fraction for lo, hi in bounds])


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def perturb_observation(y: np.ndarray, R: np.ndarray, n_iterations: int,
                        rng: np.random.Generator) -> np.ndarray:
    """One re-noised copy of y with covariance n_iterations * R.

    Across the run's n_iterations independent calls, the precision-weighted
    combination of the perturbed copies carries the information of a single
    observation with covariance R.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    y = np.asarray(y, dtype=float)
    A = _psd_sqrt(float(n_iterations) * np.asarray(R, dtype=float))
    return y + A @ rng.standard_normal(y.size)


def kalman_gain(P: np.ndarray, H: np.ndarray, R: np.ndarray,
                gpe_var: np.ndarray) -> np.ndarray:
    """Gain P H^T (H H^T + R + diag(gpe_var))^-1, solved by factorization."""
    P = np.asarray(P, dtype=float)
    H = np.asarray(H, dtype=float)
    S = H @ H.T + np.asarray(R, dtype=float) + np.diag(np.asarray(gpe_var, dtype=float))
    try:
        c = cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is not positive definite") from None
    return cho_solve(c, (P @ H.T).T).T


def run_enkf(cfg: EnkfConfig, bank, obs: ObservationSet,
             snapshot_callback=None) -> EnkfResult:
    """Run the full iterated calibration loop.

    ``bank`` is anything with ``predict_matrix((N, d)) -> (p, N) means,
    (p, N) variances`` and a ``labels`` attribute matching the observation
    labels.  ``snapshot_callback(k, members)`` is invoked with the updated
    (N, d) array after every iteration when given.
    """
    labels = getattr(bank, "labels", None)
    if labels is not None and tuple(labels) != tuple(obs.labels):
        raise DimensionMismatch(
            f"bank labels {labels[:3]}... do not match observation labels "
            f"{obs.labels[:3]}...")
    p = obs.p
    if cfg.R.shape != (p, p):
        raise DimensionMismatch(f"R shape {cfg.R.shape} for p={p}")
    d = cfg.initial.dim
    N, K = cfg.ensemble_size, cfg.n_iterations
    scale = float(K) if cfg.temper_observations else 1.0
    R_step = scale * cfg.R
    chol_R = _psd_sqrt(R_step)
    sqrt_cov0 = _psd_sqrt(cfg.initial.covariance)

    rng = np.random.default_rng(cfg.seed)
    theta = cfg.initial.mean + rng.standard_normal((N, d)) @ sqrt_cov0.T

    clamp_counts = np.zeros(K, dtype=int)
    innovations = np.zeros((K, p))
    trajectory: list[GaussianSummary] = []
    norm = np.sqrt(N - 1.0)

    for k in range(K):
        z_obs = rng.standard_normal((N, p))
        z_gpe = rng.standard_normal((N, p))
        z_par = rng.standard_normal((N, d))

        theta_pred = theta + cfg.sigma_theta * z_par
        means, gpe_var = bank.predict_matrix(theta_pred)        # (p, N) each
        if not (np.all(np.isfinite(theta_pred)) and np.all(np.isfinite(means))):
            raise NonFiniteMember(
                f"non-finite member or prediction at iteration {k}")

        P = (theta_pred - theta_pred.mean(axis=0)).T / norm     # (d, N)
        H = (means - means.mean(axis=1, keepdims=True)) / norm  # (p, N)
        PHt = P @ H.T                                           # (d, p)
        HHt = H @ H.T

        gpe_step = scale * gpe_var                              # (p, N)
        y_pert = (obs.y + z_obs @ chol_R.T
                  + np.sqrt(gpe_step.T) * z_gpe)                # (N, p)

        S = HHt[None, :, :] + R_step[None, :, :] \
            + gpe_step.T[:, :, None] * np.eye(p)                # (N, p, p)
        try:
            # X[n] = S_n^-1 (P H^T)^T, so the member gain is X[n]^T.
            X = np.linalg.solve(S, np.broadcast_to(PHt.T, (N, p, d)))
        except np.linalg.LinAlgError:
            raise SingularInnovation(
                f"innovation covariance singular at iteration {k}; R may be "
                "too small for a degenerate ensemble") from None

        innov = y_pert - means.T                                # (N, p)
        theta = theta_pred + np.einsum("np,npd->nd", innov, X)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteMember(f"member diverged at iteration {k}")

        if cfg.bounds is not None:
            theta, clamp_counts[k] = clamp_matrix(theta, cfg.bounds)
        if snapshot_callback is not None:
            snapshot_callback(k, theta)
        innovations[k] = obs.y - means.mean(axis=1)
        if cfg.record_trajectory:
            mean_k = theta.mean(axis=0)
            dev = theta - mean_k
            cov_k = dev.T @ dev / (N - 1)
            trajectory.append(GaussianSummary(mean_k, 0.5 * (cov_k + cov_k.T)))

    names = cfg.names if cfg.names is not None else tuple(f"theta{i}" for i in range(d))
    final = Ensemble(theta, names, cfg.bounds, iteration=K, rng_seed=cfg.seed)
    return EnkfResult(
        final_ensemble=final,
        posterior=ensemble_mean_cov(final),
        trajectory=tuple(trajectory) if cfg.record_trajectory else None,
        clamp_counts=clamp_counts,
        innovations=innovations,
    )
