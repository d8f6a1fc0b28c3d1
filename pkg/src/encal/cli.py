"""Command-line orchestration.

Subcommands mirror the offline-train / online-calibrate split:

    design     build the screened training ensemble
    emulate    fit the emulator bank and validate it
    calibrate  run the ensemble Kalman calibration against observations
    mcmc       run the Metropolis baseline against the same observations
    study      run the synthetic identifiability study
    verify     re-check the config hash stamped into every output file

Every output directory gets a ``config.resolved.json`` copy of the resolved
configuration; all JSON outputs embed its hash and all CSV outputs carry it
in a leading comment line.

Exit codes: 0 success, 1 usage/config error, 2 design failure, 3 emulation
quality failure, 4 calibration numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import design as design_mod
from . import experiments as exp_mod
from .config import RunConfig, load_config
from .core import (MMS_BOUNDS, MMS_NAMES, TOY_BOUNDS, TOY_NAMES, GaussianSummary,
                   ObservationSet)
from .design import DesignResult, build_ensemble, label_cell_feasibility, lhs_sample, train_classifier
from .enkf import EnkfConfig, default_sigma_theta, run_enkf
from .errors import (ConfigError, EmulationQualityError, EncalError,
                     InsufficientSurvivors, NonFiniteMember, SingularInnovation,
                     SingularKernel, UnstableStep)
from .gp import fit_bank, load_bank, predict_bank, r2_score, save_bank
from .mcmc import McmcConfig, TruncatedGaussianPrior, run_mcmc
from .models.mms import PacingProtocol, default_cable
from .models.toy import TOY_LABELS, toy_forward


def _problem_names_bounds(problem: str):
    if problem == "toy":
        return TOY_NAMES, TOY_BOUNDS
    return MMS_NAMES, MMS_BOUNDS


def _prior_from(section: dict, bounds) -> GaussianSummary:
    if section.get("prior_mean") is not None and section.get("prior_sd") is not None:
        mean = np.asarray(section["prior_mean"], dtype=float)
        sd = np.asarray(section["prior_sd"], dtype=float)
        return GaussianSummary(mean, np.diag(sd**2))
    return exp_mod.default_study_prior(bounds)


def _write_json(path: Path, doc: dict, cfg_hash: str) -> None:
    doc = dict(doc)
    doc["config_hash"] = cfg_hash
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


def _prepare_outdir(cfg: RunConfig, sub: str) -> tuple[Path, str]:
    out = cfg.output_dir() / sub
    out.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir() / "config.resolved.json").write_text(json.dumps(cfg.doc, indent=1))
    return out, cfg.hash()


def cmd_design(cfg: RunConfig, threads: int) -> int:
    sec = cfg.section("design")
    seed = cfg["master_seed"]
    out, h = _prepare_outdir(cfg, "design")
    if cfg["problem"] == "toy":
        des = lhs_sample(sec["initial_lhs"], TOY_BOUNDS, seed, sec["maximin_restarts"])
        outputs = toy_forward(des.points)
        n = des.n
        rng = np.random.default_rng(seed + 1)
        perm = rng.permutation(n)
        n_train = int(round(sec["train_fraction"] * n))
        result = DesignResult(
            des.points, outputs, tuple(f"p{i:04d}" for i in range(n)),
            np.sort(perm[:n_train]), np.sort(perm[n_train:]), TOY_LABELS,
            {"seed": seed, "initial_points": n, "after_classifier": n,
             "survivors": n, "train_fraction": sec["train_fraction"],
             "problem": "toy"},
        )
    else:
        cell_lhs = lhs_sample(sec["cell_lhs"], design_mod.CELL_BOUNDS, seed + 10,
                              maximin_restarts=1)
        labels, _ = label_cell_feasibility(cell_lhs.points, threads=threads)
        clf = train_classifier(cell_lhs.points, labels,
                               threshold=sec["classifier_threshold"], seed=seed + 11)
        result = build_ensemble(
            sec["initial_lhs"], clf, geometry=default_cable(),
            protocol=PacingProtocol(), seed=seed,
            train_fraction=sec["train_fraction"], threads=threads,
            maximin_restarts=sec["maximin_restarts"],
        )
        result.manifest["cell_lhs"] = sec["cell_lhs"]
        result.manifest["classifier_holdout_accuracy"] = clf.holdout_accuracy
    result.manifest["config_hash"] = h
    result.write(out)
    print(f"design: {result.manifest['initial_points']} initial -> "
          f"{result.n} survivors ({len(result.train_idx)} train / "
          f"{len(result.validation_idx)} validation) -> {out}")
    return 0


def _load_design(cfg: RunConfig, section: str) -> DesignResult:
    given = cfg.section(section).get("ensemble_dir")
    path = cfg.resolve_path(given) if given else cfg.output_dir() / "design"
    if not Path(path).exists():
        raise ConfigError(f"ensemble directory {path} not found; run 'design' first")
    return DesignResult.read(path)


def cmd_emulate(cfg: RunConfig, threads: int) -> int:
    sec = cfg.section("emulation")
    seed = cfg["master_seed"]
    out, h = _prepare_outdir(cfg, "emulation")
    result = _load_design(cfg, "emulation")
    X_train = result.params[result.train_idx]
    Y_train = result.outputs[result.train_idx]
    X_val = result.params[result.validation_idx]
    Y_val = result.outputs[result.validation_idx]

    bank = fit_bank(X_train, Y_train, result.labels, restarts=sec["restarts"],
                    seed=seed + 20)
    means, _ = predict_bank(bank, X_val)
    scores = {lab: r2_score(Y_val[:, j], means[j]) for j, lab in enumerate(result.labels)}
    save_bank(bank, out / "bank.json")
    _write_json(out / "emulation_report.json",
                {"r2": scores, "r2_floor": sec["r2_floor"],
                 "n_train": len(result.train_idx), "n_validation": len(result.validation_idx)},
                h)
    worst = min(scores, key=scores.get)
    print(f"emulate: {len(bank.labels)} emulators; worst held-out R^2 "
          f"{scores[worst]:.4f} ({worst}) -> {out}")
    if scores[worst] < sec["r2_floor"]:
        raise EmulationQualityError(
            f"held-out R^2 {scores[worst]:.4f} for {worst} below floor {sec['r2_floor']}")
    return 0


def _load_bank_obs(cfg: RunConfig, section: str):
    sec = cfg.section(section)
    bank_path = cfg.resolve_path(sec.get("bank")) or cfg.output_dir() / "emulation" / "bank.json"
    obs_path = cfg.resolve_path(sec.get("observations"))
    if obs_path is None:
        raise ConfigError(f"'{section}.observations' is required")
    bank = load_bank(bank_path)
    obs = ObservationSet.from_json(obs_path)
    if set(obs.labels) - set(bank.labels):
        raise ConfigError(f"observation labels not covered by the bank: "
                          f"{sorted(set(obs.labels) - set(bank.labels))}")
    return bank.select(obs.labels), obs


def cmd_calibrate(cfg: RunConfig, threads: int) -> int:
    sec = cfg.section("calibration")
    names, bounds = _problem_names_bounds(cfg["problem"])
    out, h = _prepare_outdir(cfg, "calibration")
    bank, obs = _load_bank_obs(cfg, "calibration")
    prior = _prior_from(sec, bounds)
    enkf_cfg = EnkfConfig(
        ensemble_size=sec["ensemble_size"], n_iterations=sec["iterations"],
        sigma_theta=default_sigma_theta(bounds, sec["sigma_theta_fraction"]),
        initial=prior, R=obs.R, seed=cfg["master_seed"],
        record_trajectory=sec["record_trajectory"], names=names, bounds=bounds,
        temper_observations=sec["temper_observations"],
    )

    snapshots = None
    if sec["record_trajectory"]:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)

        def snapshots(k, members):
            np.savetxt(snap_dir / f"ensemble_{k:04d}.csv", members, delimiter=",",
                       header=f"config_hash={h}\n" + ",".join(names))

    result = run_enkf(enkf_cfg, bank, obs, snapshot_callback=snapshots)
    doc = result.to_json()
    doc["seed"] = cfg["master_seed"]
    _write_json(out / "enkf_result.json", doc, h)
    result.final_ensemble.to_csv(out / "final_ensemble.csv")
    with open(out / "final_ensemble.csv") as fh:
        body = fh.read()
    with open(out / "final_ensemble.csv", "w") as fh:
        fh.write(f"# config_hash={h}\n" + body)
    mean = ", ".join(f"{n}={v:.5g}" for n, v in zip(names, result.posterior.mean))
    print(f"calibrate: posterior mean {mean} -> {out}")
    return 0


def cmd_mcmc(cfg: RunConfig, threads: int) -> int:
    sec = cfg.section("mcmc")
    names, bounds = _problem_names_bounds(cfg["problem"])
    out, h = _prepare_outdir(cfg, "mcmc")
    bank, obs = _load_bank_obs(cfg, "mcmc")
    prior = TruncatedGaussianPrior(_prior_from(sec, bounds), bounds)
    mcfg = McmcConfig(n_chains=sec["chains"], n_samples=sec["samples"],
                      burn_in=sec["burn_in"], thin=sec["thin"],
                      seed=cfg["master_seed"], adapt=sec["adapt"])
    result = run_mcmc(mcfg, bank, obs, prior)
    with open(out / "samples.csv", "w") as fh:
        fh.write(f"# config_hash={h}\n" + ",".join(names) + "\n")
        np.savetxt(fh, result.samples, delimiter=",")
    _write_json(out / "mcmc_diagnostics.json", {
        "acceptance_rates": result.acceptance_rates.tolist(),
        "rhat": dict(zip(names, result.rhat.tolist())),
        "ess": dict(zip(names, result.ess.tolist())),
        "n_samples": int(result.samples.shape[0]),
        "seed": cfg["master_seed"],
    }, h)
    print(f"mcmc: {result.samples.shape[0]} pooled samples, "
          f"max rhat {result.rhat.max():.3f} -> {out}")
    return 0


def cmd_study(cfg: RunConfig, threads: int) -> int:
    sec = cfg.section("experiments")
    out, h = _prepare_outdir(cfg, "study")
    if cfg["problem"] != "mms":
        raise ConfigError("the study command applies to the mms problem")
    design = _load_design(cfg, "experiments")
    bank_path = cfg.resolve_path(sec.get("bank")) or cfg.output_dir() / "emulation" / "bank.json"
    bank = load_bank(bank_path)
    report = exp_mod.run_study(
        design, bank, n_cases=sec["cases"], noise_sd=sec["noise_sd"],
        ensemble_size=sec["ensemble_size"], n_iterations=sec["iterations"],
        seed=cfg["master_seed"], threads=threads,
    )
    report.write(out, extra={"config_hash": h, "seed": cfg["master_seed"]})
    print(f"study: {len(report.cases)} calibrations, {len(report.failures)} failures "
          f"-> {out}")
    return 0


def cmd_verify(cfg: RunConfig, threads: int) -> int:
    out = cfg.output_dir()
    resolved = out / "config.resolved.json"
    if not resolved.exists():
        raise ConfigError(f"no config.resolved.json under {out}")
    h = RunConfig(json.loads(resolved.read_text()), out).hash()
    bad = []
    n_checked = 0
    for path in sorted(out.rglob("*")):
        if path.suffix == ".json" and path.name != "config.resolved.json":
            doc = json.loads(path.read_text())
            stamp = doc.get("config_hash")
            if stamp is not None:
                n_checked += 1
                if stamp != h:
                    bad.append(path)
        elif path.suffix == ".csv":
            first = path.read_text().splitlines()[0] if path.stat().st_size else ""
            if "config_hash=" in first:
                n_checked += 1
                if first.split("config_hash=")[1].strip() != h:
                    bad.append(path)
    if bad:
        print(f"verify: {len(bad)} stale outputs under {out}: "
              + ", ".join(str(b) for b in bad), file=sys.stderr)
        return 1
    print(f"verify: {n_checked} stamped outputs match config hash {h}")
    return 0


_COMMANDS = {
    "design": cmd_design,
    "emulate": cmd_emulate,
    "calibrate": cmd_calibrate,
    "mcmc": cmd_mcmc,
    "study": cmd_study,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encal", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=(name != "verify"))
        sp.add_argument("--seed", type=int, default=None,
                        help="override master_seed from the config")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--dry-run", action="store_true")
        sp.add_argument("--output-dir", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify" and args.config is None:
            if args.output_dir is None:
                raise ConfigError("verify needs --config or --output-dir")
            cfg = RunConfig({"output_dir": str(args.output_dir)}, Path.cwd())
        else:
            cfg = load_config(args.config,
                              {"seed": args.seed, "output_dir": args.output_dir})
        if args.dry_run:
            print(json.dumps(cfg.doc, indent=1))
            print(f"config_hash={cfg.hash()}")
            return 0
        return _COMMANDS[args.command](cfg, max(1, args.threads))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InsufficientSurvivors as exc:
        print(f"design failure: {exc}", file=sys.stderr)
        return 2
    except EmulationQualityError as exc:
        print(f"emulation quality failure: {exc}", file=sys.stderr)
        return 3
    except (SingularKernel, SingularInnovation, NonFiniteMember, UnstableStep) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except EncalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
