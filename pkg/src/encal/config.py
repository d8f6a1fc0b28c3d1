"""Run configuration: one JSON document per run, hashed for provenance.

Unknown keys are rejected and every referenced file must exist at load time,
so a config hash pins down a run completely (together with the seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# section -> key -> (type, default).  None defaults mean "computed later".
_SCHEMA: dict = {
    "problem": (str, "mms"),
    "master_seed": (int, 0),
    "output_dir": (str, "runs/out"),
    "design": {
        "initial_lhs": (int, 350),
        "cell_lhs": (int, 2000),
        "classifier_threshold": (float, 0.5),
        "maximin_restarts": (int, 1000),
        "train_fraction": (float, 0.87),
    },
    "emulation": {
        "restarts": (int, 10),
        "r2_floor": (float, 0.95),
        "training_size": (int, 50),     # toy problem only
        "ensemble_dir": (str, None),
    },
    "calibration": {
        "ensemble_size": (int, 500),
        "iterations": (int, 50),
        "sigma_theta_fraction": (float, 0.005),
        "record_trajectory": (bool, False),
        "temper_observations": (bool, True),
        "bank": (str, None),
        "observations": (str, None),
        "prior_mean": (list, None),
        "prior_sd": (list, None),
    },
    "mcmc": {
        "chains": (int, 10),
        "samples": (int, 40000),
        "burn_in": (int, 10000),
        "thin": (int, 10),
        "adapt": (bool, True),
        "bank": (str, None),
        "observations": (str, None),
        "prior_mean": (list, None),
        "prior_sd": (list, None),
    },
    "experiments": {
        "cases": (int, 50),
        "ensemble_size": (int, 500),
        "iterations": (int, 50),
        "noise_sd": (dict, {"S1": 1.0, "S2": 1.0, "APD": 2.0}),
        "bank": (str, None),
        "ensemble_dir": (str, None),
    },
}

_PATH_KEYS = {
    ("emulation", "ensemble_dir"),
    ("calibration", "bank"),
    ("calibration", "observations"),
    ("mcmc", "bank"),
    ("mcmc", "observations"),
    ("experiments", "bank"),
    ("experiments", "ensemble_dir"),
}


def _check_section(name: str, schema: dict, given: dict) -> dict:
    out = {}
    for key, value in given.items():
        if key not in schema:
            raise ConfigError(f"unknown key '{name}.{key}'" if name else
                              f"unknown key '{key}'")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{name + '.' if name else ''}{key}' must be a section")
            out[key] = _check_section(f"{name}.{key}" if name else key, expected, value)
        else:
            typ, _default = expected
            if value is not None and not isinstance(value, typ) \
                    and not (typ is float and isinstance(value, int)):
                raise ConfigError(
                    f"'{name + '.' if name else ''}{key}' must be {typ.__name__}, "
                    f"got {type(value).__name__}")
            out[key] = value
    return out


def _fill_defaults(schema: dict, given: dict) -> dict:
    out = {}
    for key, expected in schema.items():
        if isinstance(expected, dict):
            out[key] = _fill_defaults(expected, given.get(key, {}))
        else:
            typ, default = expected
            out[key] = given.get(key, default)
    return out


@dataclass(frozen=True)
class RunConfig:
    doc: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.doc[key]

    def section(self, name: str) -> dict:
        return self.doc[name]

    def resolve_path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def output_dir(self) -> Path:
        return self.resolve_path(self.doc["output_dir"])

    def hash(self) -> str:
        return config_hash(self.doc)


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(path, overrides: dict | None = None,
                check_paths: bool = True) -> RunConfig:
    """Parse, validate and default-fill a run config.

    Raises ConfigError with a line-numbered diagnostic on malformed JSON,
    on unknown keys, and on referenced files that do not exist.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")

    checked = _check_section("", _SCHEMA, raw)
    doc = _fill_defaults(_SCHEMA, checked)
    if doc["problem"] not in ("toy", "mms"):
        raise ConfigError(f"problem must be 'toy' or 'mms', got {doc['problem']!r}")
    for section, key in sorted(_PATH_KEYS):
        if overrides and (section, key) in overrides.get("skip_paths", set()):
            continue
        value = doc[section][key]
        if value is not None:
            ref = Path(value)
            ref = ref if ref.is_absolute() else path.parent / ref
            if check_paths and not ref.exists():
                raise ConfigError(f"'{section}.{key}' references missing file {ref}")

    if overrides:
        if overrides.get("seed") is not None:
            doc["master_seed"] = int(overrides["seed"])
        if overrides.get("output_dir") is not None:
            doc["output_dir"] = str(overrides["output_dir"])
    return RunConfig(doc, path.parent)
