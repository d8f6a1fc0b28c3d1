"""Random-walk Metropolis baseline over the emulated likelihood.

Chains are independent, each with its own RNG substream derived from the
run seed, so per-chain results do not depend on execution order (chains are
advanced in lockstep only to batch the emulator evaluations).  The proposal
is a componentwise Gaussian whose global scale is adapted during burn-in
(Robbins-Monro toward a target acceptance rate) and frozen afterwards, which
preserves the invariant distribution of the kept samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import GaussianSummary, ObservationSet
from .errors import DimensionMismatch, ZeroAcceptanceWarning


@dataclass(frozen=True)
class TruncatedGaussianPrior:
    """Gaussian prior restricted to a box (log-density up to a constant)."""

    summary: GaussianSummary
    bounds: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.bounds is not None:
            object.__setattr__(self, "bounds",
                               tuple((float(lo), float(hi)) for lo, hi in self.bounds))
            if len(self.bounds) != self.summary.dim:
                raise DimensionMismatch("bounds do not match prior dimension")

    @property
    def dim(self) -> int:
        return self.summary.dim

    def in_support(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        if self.bounds is None:
            return np.ones(theta.shape[0], dtype=bool)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.all((theta >= lo) & (theta <= hi), axis=1)

    def log_density_batch(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        out = np.full(theta.shape[0], -np.inf)
        ok = self.in_support(theta)
        if np.any(ok):
            dev = theta[ok] - self.summary.mean
            sol = np.linalg.solve(self.summary.covariance, dev.T).T
            out[ok] = -0.5 * np.einsum("ij,ij->i", dev, sol)
        return out

    def sample(self, rng: np.random.Generator, max_tries: int = 200) -> np.ndarray:
        L = np.linalg.cholesky(self.summary.covariance)
        for _ in range(max_tries):
            x = self.summary.mean + L @ rng.standard_normal(self.dim)
            if self.in_support(x[None, :])[0]:
                return x
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.clip(x, lo, hi)


def _gaussian_loglik_batch(resid: np.ndarray, R: np.ndarray,
                           gpe_var: np.ndarray) -> np.ndarray:
    """log N(resid; 0, R + diag(gpe_var_n)) for each row n."""
    n, p = resid.shape
    S = R[None, :, :] + gpe_var[:, :, None] * np.eye(p)
    sign, logdet = np.linalg.slogdet(S)
    sol = np.linalg.solve(S, resid[:, :, None])[:, :, 0]
    quad = np.einsum("ij,ij->i", resid, sol)
    return -0.5 * (quad + logdet + p * np.log(2.0 * np.pi))


def log_posterior_batch(theta: np.ndarray, bank, obs: ObservationSet,
                        prior: TruncatedGaussianPrior) -> np.ndarray:
    """Unnormalized log posterior at each row of theta (-inf outside support).

    The likelihood covariance is R plus the emulator's own predictive
    variance at theta, mirroring the Kalman-gain treatment.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    out = prior.log_density_batch(theta)
    ok = np.isfinite(out)
    if np.any(ok):
        means, gpe_var = bank.predict_matrix(theta[ok])
        resid = obs.y - means.T
        out[ok] += _gaussian_loglik_batch(resid, obs.R, gpe_var.T)
    return out


def log_posterior(theta, bank, obs: ObservationSet,
                  prior: TruncatedGaussianPrior) -> float:
    values = np.asarray(getattr(theta, "values", theta), dtype=float)
    return float(log_posterior_batch(values[None, :], bank, obs, prior)[0])


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 10
    n_samples: int = 40_000
    burn_in: int = 10_000
    thin: int = 10
    proposal_scale: np.ndarray | None = None  # default 10% of prior sd
    seed: int = 0
    adapt: bool = True
    target_acceptance: float = 0.25

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_samples:
            raise ValueError("need 0 <= burn_in < n_samples")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if self.proposal_scale is not None:
            object.__setattr__(self, "proposal_scale",
                               np.asarray(self.proposal_scale, dtype=float))


@dataclass(frozen=True)
class McmcResult:
    samples: np.ndarray            # pooled post-burn-in, thinned (n, d)
    acceptance_rates: np.ndarray   # per chain, post burn-in
    rhat: np.ndarray               # per parameter
    ess: np.ndarray                # per parameter, summed over chains
    chains: np.ndarray             # (n_chains, kept, d) thinned per-chain draws


def _ess_1d(x: np.ndarray) -> float:
    """Effective sample size by the initial-positive-sequence estimator."""
    n = x.size
    x = x - x.mean()
    if n < 4 or np.allclose(x, 0):
        return float(n)
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f))[:n].real / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    # tau = 2 * sum of initial positive autocorrelation pairs - 1
    tau = -1.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        k += 1
    return float(n / max(tau, 1e-8))


def gelman_rubin(chains: np.ndarray) -> np.ndarray:
    """Potential scale reduction factor per parameter; chains (m, n, d)."""
    m, n, d = chains.shape
    if m < 2:
        return np.ones(d)
    means = chains.mean(axis=1)
    B = n * means.var(axis=0, ddof=1)
    W = chains.var(axis=1, ddof=1).mean(axis=0)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(var_hat / W)
    return np.where(W > 0, out, 1.0)


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    m, n, d = chains.shape
    return np.array([sum(_ess_1d(chains[c, :, j]) for c in range(m))
                     for j in range(d)])


def run_mcmc(cfg: McmcConfig, bank, obs: ObservationSet | None,
             prior: TruncatedGaussianPrior, log_density=None) -> McmcResult:
    """Sample the posterior with independent adaptive random-walk chains.

    ``log_density`` (batch callable (n, d) -> (n,)) replaces the emulated
    posterior when given; used to validate the sampler on known targets.
    """
    d = prior.dim
    if log_density is None:
        def log_density(theta):
            return log_posterior_batch(theta, bank, obs, prior)

    if cfg.proposal_scale is None:
        base_scale = 0.1 * np.sqrt(np.diag(prior.summary.covariance))
    else:
        base_scale = np.broadcast_to(cfg.proposal_scale, (d,)).astype(float)

    m = cfg.n_chains
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(m)]
    current = np.stack([prior.sample(rng) for rng in rngs])
    lp = log_density(current)
    log_mult = np.zeros(m)  # per-chain adapted log scale multiplier

    chains = np.empty((m, cfg.n_samples, d))
    chains[:, 0] = current
    accepted_post = np.zeros(m, dtype=int)

    for t in range(1, cfg.n_samples):
        z = np.stack([rng.standard_normal(d) for rng in rngs])
        u = np.array([rng.uniform() for rng in rngs])
        props = current + np.exp(log_mult)[:, None] * base_scale * z
        lp_prop = log_density(props)
        accept = np.log(u) < lp_prop - lp
        current = np.where(accept[:, None], props, current)
        lp = np.where(accept, lp_prop, lp)
        chains[:, t] = current
        if t > cfg.burn_in:
            accepted_post += accept
        elif cfg.adapt:
            log_mult += t ** -0.6 * (accept.astype(float) - cfg.target_acceptance)

    acceptance = accepted_post / max(cfg.n_samples - cfg.burn_in - 1, 1)
    if np.any(acceptance < 0.01):
        warnings.warn(f"chain acceptance below 1%: {acceptance.round(4)}",
                      ZeroAcceptanceWarning)

    kept = chains[:, cfg.burn_in:][:, ::cfg.thin]
    pooled = kept.reshape(-1, d)
    return McmcResult(
        samples=pooled,
        acceptance_rates=acceptance,
        rhat=gelman_rubin(kept),
        ess=effective_sample_size(kept),
        chains=kept,
    )
