"""Stepper backend selection.

The compiled extension is preferred; the pure-numpy twin is the fallback.
Set ``ENCAL_PURE_PYTHON=1`` before import to force the fallback (used by the
benchmark and the twin-equivalence tests).
"""

from __future__ import annotations

import os

from . import _stepper_py

try:
    from . import _stepper  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - build without the extension
    _stepper = None

_FORCE_PY = os.environ.get("ENCAL_PURE_PYTHON", "") not in ("", "0")

HAVE_COMPILED = _stepper is not None
_active = _stepper_py if (_FORCE_PY or _stepper is None) else _stepper


def active_backend() -> str:
    """Name of the backend used by the simulators ("compiled" or "python")."""
    return _active.BACKEND_NAME


def get_kernel(name: str | None = None):
    """Return a stepper function by backend name (default: the active one)."""
    if name is None:
        return _active.run_mms_kernel
    if name == "python":
        return _stepper_py.run_mms_kernel
    if name == "compiled":
        if _stepper is None:
            raise RuntimeError("compiled stepper extension is not available")
        return _stepper.run_mms_kernel
    raise ValueError(f"unknown backend {name!r}")
