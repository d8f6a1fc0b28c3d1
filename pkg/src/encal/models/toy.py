"""Two-parameter polynomial test problem.

Scalar outputs y(x) = -theta1^3 * x + theta2^3 * x^2 observed at a handful of
locations x; cheap enough to evaluate exactly, nonlinear enough that the
calibration has to work for it.
"""

from __future__ import annotations

import numpy as np

TOY_X = np.array([0.5, 1.0, 2.0])
TOY_TRUTH = np.array([-1.5, 2.0])
TOY_LABELS = tuple(f"x={x:g}" for x in TOY_X)


def toy_forward(theta, x=None) -> np.ndarray:
    """Evaluate the outputs at locations ``x`` (default the standard three).

    ``theta`` may be a single (2,) vector or an (N, 2) batch; returns (p,)
    or (N, p) accordingly.
    """
    x = TOY_X if x is None else np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    t = theta[None, :] if single else theta
    out = -t[:, 0:1] ** 3 * x[None, :] + t[:, 1:2] ** 3 * x[None, :] ** 2
    return out[0] if single else out
