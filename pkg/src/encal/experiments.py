"""Synthetic calibration studies.

Ground-truth parameters are drawn from the held-out validation subset of the
design ensemble, noisy synthetic measurements are built from their stored
outputs, and calibration quality is scored by (i) truth-vs-estimate scatter
per parameter and (ii) RMSE of the re-simulated marker fields over every
grid node, for each measurement combination.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import MMS_BOUNDS, MMS_NAMES, GaussianSummary, ObservationSet
from .design import DesignResult
from .enkf import EnkfConfig, EnkfResult, default_sigma_theta, run_enkf
from .mcmc import McmcConfig, TruncatedGaussianPrior, run_mcmc
from .models.markers import OUTPUT_KINDS, s1s2_fields
from .models.mms import Geometry, PacingProtocol, TissueParams, default_cable

MEASUREMENT_SETS = (("S1",), ("S1", "S2"), ("S1", "S2", "APD"))
DEFAULT_NOISE_SD = {"S1": 1.0, "S2": 1.0, "APD": 2.0}


def set_name(measurement_set) -> str:
    return "+".join(measurement_set)


@dataclass(frozen=True)
class CalibrationCase:
    """One synthetic calibration: a truth, a measurement combination, noise."""

    truth_id: str
    measurement_set: tuple[str, ...]
    noise_sd: dict = field(default_factory=lambda: dict(DEFAULT_NOISE_SD))
    seed: int = 0

    def __post_init__(self):
        if not self.measurement_set:
            raise ValueError("measurement_set must be nonempty")
        unknown = set(self.measurement_set) - set(OUTPUT_KINDS)
        if unknown:
            raise ValueError(f"unknown output kinds: {unknown}")


def select_labels(labels, measurement_set) -> list[str]:
    kinds = set(measurement_set)
    return [lab for lab in labels if lab.split("@")[0] in kinds]


def make_synthetic_obs(truth_outputs: np.ndarray, labels,
                       case: CalibrationCase) -> ObservationSet:
    """Noisy observations of the selected output kinds (R = diag sd^2)."""
    labels = list(labels)
    picked = select_labels(labels, case.measurement_set)
    idx = [labels.index(lab) for lab in picked]
    sd = np.array([case.noise_sd[lab.split("@")[0]] for lab in picked])
    rng = np.random.default_rng(case.seed)
    y = np.asarray(truth_outputs, dtype=float)[idx] + sd * rng.standard_normal(len(idx))
    return ObservationSet(y, np.diag(np.maximum(sd, 1e-12) ** 2), tuple(picked))


def default_study_prior(bounds=MMS_BOUNDS) -> GaussianSummary:
    """Box midpoint with sd = range/4, so +-2 sd spans each box."""
    mid = np.array([(lo + hi) / 2 for lo, hi in bounds])
    sd = np.array([(hi - lo) / 4 for lo, hi in bounds])
    return GaussianSummary(mid, np.diag(sd**2))


@dataclass(frozen=True)
class CaseReport:
    truth_id: str
    measurement_set: tuple[str, ...]
    truth: np.ndarray
    estimate: np.ndarray                # posterior mean
    posterior: GaussianSummary
    rmse: dict                          # kind -> RMSE over all grid nodes
    clamp_total: int


@dataclass
class StudyReport:
    names: tuple[str, ...]
    measurement_sets: tuple[tuple[str, ...], ...]
    cases: list[CaseReport]
    failures: list[dict]
    seed: int

    def _per_set(self, measurement_set):
        return [c for c in self.cases if c.measurement_set == tuple(measurement_set)]

    def correlation(self, param: str, measurement_set) -> float:
        j = self.names.index(param)
        cs = self._per_set(measurement_set)
        truth = np.array([c.truth[j] for c in cs])
        est = np.array([c.estimate[j] for c in cs])
        if truth.size < 3 or truth.std() == 0 or est.std() == 0:
            return float("nan")
        return float(np.corrcoef(truth, est)[0, 1])

    def median_rmse(self, kind: str, measurement_set) -> float:
        vals = [c.rmse[kind] for c in self._per_set(measurement_set)
                if np.isfinite(c.rmse.get(kind, np.nan))]
        return float(np.median(vals)) if vals else float("nan")

    def scatter_rows(self):
        for i, c in enumerate(self.cases):
            for j, name in enumerate(self.names):
                yield {"case": i, "set": set_name(c.measurement_set), "param": name,
                       "truth": c.truth[j], "estimate": c.estimate[j]}

    def rmse_rows(self):
        for i, c in enumerate(self.cases):
            for kind in OUTPUT_KINDS:
                yield {"case": i, "set": set_name(c.measurement_set), "kind": kind,
                       "rmse": c.rmse.get(kind, float("nan"))}

    def summary(self) -> dict:
        sets = [set_name(s) for s in self.measurement_sets]
        return {
            "seed": self.seed,
            "n_cases": len(self.cases),
            "failures": self.failures,
            "median_rmse": {
                kind: {name: self.median_rmse(kind, s)
                       for name, s in zip(sets, self.measurement_sets)}
                for kind in OUTPUT_KINDS},
            "correlation": {
                param: {name: self.correlation(param, s)
                        for name, s in zip(sets, self.measurement_sets)}
                for param in self.names},
        }

    def write(self, out_dir, extra: dict | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = self.summary()
        if extra:
            doc.update(extra)
        (out / "study.json").write_text(json.dumps(doc, indent=1))
        stamp = f"# config_hash={extra.get('config_hash', '')}\n" if extra else ""
        with open(out / "scatter.csv", "w") as fh:
            fh.write(stamp + "case,set,param,truth,estimate\n")
            for r in self.scatter_rows():
                fh.write(f"{r['case']},{r['set']},{r['param']},"
                         f"{r['truth']!r},{r['estimate']!r}\n")
        with open(out / "rmse.csv", "w") as fh:
            fh.write(stamp + "case,set,kind,rmse\n")
            for r in self.rmse_rows():
                fh.write(f"{r['case']},{r['set']},{r['kind']},{r['rmse']!r}\n")


def _field_rmse(truth_fields: np.ndarray, est_fields: np.ndarray) -> dict:
    out = {}
    for k, kind in enumerate(OUTPUT_KINDS):
        valid = np.isfinite(truth_fields[k]) & np.isfinite(est_fields[k])
        if valid.sum() == 0:
            out[kind] = float("nan")
        else:
            diff = truth_fields[k][valid] - est_fields[k][valid]
            out[kind] = float(np.sqrt(np.mean(diff**2)))
    return out


def run_study(design: DesignResult, bank, n_cases: int = 50,
              measurement_sets=MEASUREMENT_SETS, noise_sd=None,
              geometry: Geometry | None = None,
              protocol: PacingProtocol | None = None,
              ensemble_size: int = 500, n_iterations: int = 50,
              prior: GaussianSummary | None = None, seed: int = 0,
              threads: int = 1) -> StudyReport:
    """Calibrate n_cases synthetic truths under each measurement combination.

    Per-case failures are recorded and skipped, not raised.  Fully
    deterministic given the seed.
    """
    noise_sd = dict(noise_sd or DEFAULT_NOISE_SD)
    geometry = geometry or default_cable()
    protocol = protocol or PacingProtocol()
    prior = prior or default_study_prior()
    sigma_theta = default_sigma_theta(MMS_BOUNDS)

    rng = np.random.default_rng(seed)
    val_ids = [design.ids[i] for i in design.validation_idx]
    if not val_ids:
        raise ValueError("design has no validation members to draw truths from")
    truth_ids = [val_ids[i] for i in rng.integers(0, len(val_ids), size=n_cases)]
    index = {pid: i for i, pid in enumerate(design.ids)}

    truth_field_cache: dict[str, np.ndarray] = {}

    def truth_fields(pid: str) -> np.ndarray:
        if pid not in truth_field_cache:
            p = TissueParams.from_array(design.params[index[pid]])
            from .models.mms import simulate_tissue
            trace = simulate_tissue(p, geometry, protocol)
            truth_field_cache[pid] = s1s2_fields(trace, protocol)
        return truth_field_cache[pid]

    jobs = []
    for i, pid in enumerate(truth_ids):
        for s, mset in enumerate(measurement_sets):
            case_seed = int(rng.integers(0, 2**31 - 1))
            jobs.append((i, pid, tuple(mset), case_seed))

    def run_one(job):
        i, pid, mset, case_seed = job
        case = CalibrationCase(pid, mset, noise_sd, case_seed)
        truth_vec = design.params[index[pid]]
        obs = make_synthetic_obs(design.outputs[index[pid]], design.labels, case)
        sub = bank.select(obs.labels)
        cfg = EnkfConfig(
            ensemble_size=ensemble_size, n_iterations=n_iterations,
            sigma_theta=sigma_theta, initial=prior, R=obs.R, seed=case_seed,
            names=MMS_NAMES, bounds=MMS_BOUNDS,
        )
        result = run_enkf(cfg, sub, obs)
        est = result.posterior.mean
        from .models.mms import simulate_tissue
        trace = simulate_tissue(TissueParams.from_array(est), geometry, protocol)
        est_fields = s1s2_fields(trace, protocol)
        rmse = _field_rmse(truth_fields(pid), est_fields)
        return CaseReport(pid, mset, truth_vec.copy(), est.copy(),
                          result.posterior, rmse,
                          int(result.clamp_counts.sum()))

    # Pre-compute the truth fields serially so the cache stays simple.
    for pid in dict.fromkeys(truth_ids):
        truth_fields(pid)

    cases: list[CaseReport] = []
    failures: list[dict] = []

    def safe_run(job):
        try:
            return run_one(job), None
        except Exception as exc:
            return None, {"truth_id": job[1], "set": set_name(job[2]),
                          "error": f"{type(exc).__name__}: {exc}"}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(safe_run, jobs))
    else:
        outcomes = [safe_run(job) for job in jobs]
    for report, failure in outcomes:
        if failure is not None:
            failures.append(failure)
        else:
            cases.append(report)

    return StudyReport(MMS_NAMES, tuple(tuple(s) for s in measurement_sets),
                       cases, failures, seed)


@dataclass(frozen=True)
class ComparisonReport:
    """EnKF-vs-MCMC posterior comparison for one calibration case."""

    enkf_mean: np.ndarray
    enkf_sd: np.ndarray
    enkf_mean_se: np.ndarray      # across replicate runs
    mcmc_mean: np.ndarray
    mcmc_sd: np.ndarray
    mcmc_mean_se: np.ndarray      # sd / sqrt(ESS)
    mean_diff_in_se: np.ndarray   # |mean difference| / combined SE
    sd_ratio: np.ndarray
    enkf_samples: np.ndarray
    mcmc_samples: np.ndarray

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("enkf_mean", "enkf_sd", "enkf_mean_se", "mcmc_mean",
                          "mcmc_sd", "mcmc_mean_se", "mean_diff_in_se", "sd_ratio")}


def compare_enkf_mcmc(bank, obs: ObservationSet, prior: GaussianSummary,
                      bounds=None, sigma_theta=None, ensemble_size: int = 500,
                      n_iterations: int = 50, n_replicates: int = 10,
                      mcmc_cfg: McmcConfig | None = None,
                      seed: int = 0) -> ComparisonReport:
    """Run both samplers against the same observation and prior."""
    d = prior.dim
    if sigma_theta is None:
        sigma_theta = (default_sigma_theta(bounds) if bounds is not None
                       else np.zeros(d))
    results: list[EnkfResult] = []
    for r in range(n_replicates):
        cfg = EnkfConfig(ensemble_size=ensemble_size, n_iterations=n_iterations,
                         sigma_theta=sigma_theta, initial=prior, R=obs.R,
                         seed=seed + 1000 * r, bounds=bounds)
        results.append(run_enkf(cfg, bank, obs))
    means = np.stack([r.posterior.mean for r in results])
    sds = np.stack([np.sqrt(np.diag(r.posterior.covariance)) for r in results])
    enkf_mean = means.mean(axis=0)
    enkf_mean_se = means.std(axis=0, ddof=1) / np.sqrt(n_replicates)
    enkf_sd = sds.mean(axis=0)

    mcmc_cfg = mcmc_cfg or McmcConfig(seed=seed + 77)
    mprior = TruncatedGaussianPrior(prior, bounds)
    mres = run_mcmc(mcmc_cfg, bank, obs, mprior)
    mcmc_mean = mres.samples.mean(axis=0)
    mcmc_sd = mres.samples.std(axis=0, ddof=1)
    mcmc_mean_se = mcmc_sd / np.sqrt(np.maximum(mres.ess, 1.0))

    combined = np.sqrt(enkf_mean_se**2 + mcmc_mean_se**2)
    diff = np.abs(enkf_mean - mcmc_mean) / np.maximum(combined, 1e-300)
    ratio = enkf_sd / np.where(mcmc_sd > 0, mcmc_sd, np.nan)
    return ComparisonReport(
        enkf_mean, enkf_sd, enkf_mean_se, mcmc_mean, mcmc_sd, mcmc_mean_se,
        diff, ratio, results[0].final_ensemble.values, mres.samples)


def variance_inflation(bank, obs: ObservationSet, prior: GaussianSummary,
                       sigma_theta: np.ndarray, ensemble_size: int = 500,
                       n_iterations: int = 50, n_seeds: int = 50,
                       seed: int = 0, bounds=None) -> dict:
    """Posterior-covariance traces with and without parameter pseudo-dynamics.

    The pseudo-dynamics add at most trace(sigma sigma^T) per iteration, so
    the mean trace difference must lie in [0, K * sum(sigma^2)] up to Monte
    Carlo error.  Returns the per-seed traces and that analytic bound.
    """
    sigma_theta = np.asarray(sigma_theta, dtype=float)
    traces_on = np.empty(n_seeds)
    traces_off = np.empty(n_seeds)
    for i in range(n_seeds):
        for label, sig in (("on", sigma_theta), ("off", np.zeros_like(sigma_theta))):
            cfg = EnkfConfig(ensemble_size=ensemble_size, n_iterations=n_iterations,
                             sigma_theta=sig, initial=prior, R=obs.R,
                             seed=seed + i, bounds=bounds)
            res = run_enkf(cfg, bank, obs)
            tr = float(np.trace(res.posterior.covariance))
            if label == "on":
                traces_on[i] = tr
            else:
                traces_off[i] = tr
    delta = traces_on - traces_off
    return {
        "traces_on": traces_on,
        "traces_off": traces_off,
        "delta_mean": float(delta.mean()),
        "delta_se": float(delta.std(ddof=1) / np.sqrt(n_seeds)),
        "bound": float(n_iterations * np.sum(sigma_theta**2)),
    }
