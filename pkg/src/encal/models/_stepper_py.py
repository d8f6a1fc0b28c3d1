"""Pure-numpy reference stepper for the two-variable excitable-tissue model.

Twin of the compiled ``_stepper`` extension: identical update sequence per
substep (explicit diffusion, explicit reaction + stimulus, exact-exponential
gate update branched on the freshly updated voltage).  Slower by roughly two
orders of magnitude because the substep loop stays in Python; used when the
extension is unavailable and as the correctness oracle for it.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"


def run_mms_kernel(v0, h0, nx, ny, dx, diff, tau_in, tau_out, tau_open, tau_close,
                   v_gate, stim_mask, stim_starts, stim_duration, stim_amplitude,
                   n_sub, n_ms):
    """March the reaction-diffusion system and sample once per millisecond.

    Parameters are in ms and cm (``diff`` in cm^2/ms).  ``n_sub`` substeps of
    dt = 1/n_sub ms are taken per stored sample.  Returns
    ``(v_out, h_out, status)`` with arrays of shape (n_ms + 1, nx * ny);
    status is 0 on success, 1 if the voltage left [-0.5, 1.5] (the remaining
    samples are then left untouched).
    """
    n_nodes = nx * ny
    v = np.asarray(v0, dtype=float).copy()
    h = np.asarray(h0, dtype=float).copy()
    mask = np.asarray(stim_mask, dtype=bool)
    starts = np.asarray(stim_starts, dtype=float)

    dt = 1.0 / n_sub
    e_open = math.exp(-dt / tau_open)
    e_close = math.exp(-dt / tau_close)
    inv_dx2 = 1.0 / (dx * dx)

    v_out = np.zeros((n_ms + 1, n_nodes))
    h_out = np.zeros((n_ms + 1, n_nodes))
    v_out[0] = v
    h_out[0] = h

    is_2d = ny > 1
    if is_2d:
        v = v.reshape(ny, nx)
        h = h.reshape(ny, nx)
        mask = mask.reshape(ny, nx)

    status = 0
    for block in range(n_ms):
        for sub in range(n_sub):
            t = block + sub * dt
            if diff > 0.0 and n_nodes > 1:
                lap = np.empty_like(v)
                if is_2d:
                    lap[:, 1:-1] = v[:, :-2] - 2.0 * v[:, 1:-1] + v[:, 2:]
                    lap[:, 0] = 2.0 * (v[:, 1] - v[:, 0])
                    lap[:, -1] = 2.0 * (v[:, -2] - v[:, -1])
                    lap[1:-1, :] += v[:-2, :] - 2.0 * v[1:-1, :] + v[2:, :]
                    lap[0, :] += 2.0 * (v[1, :] - v[0, :])
                    lap[-1, :] += 2.0 * (v[-2, :] - v[-1, :])
                else:
                    lap[1:-1] = v[:-2] - 2.0 * v[1:-1] + v[2:]
                    lap[0] = 2.0 * (v[1] - v[0])
                    lap[-1] = 2.0 * (v[-2] - v[-1])
                v = v + (dt * diff * inv_dx2) * lap

            react = h * v * (v - v_gate) * (1.0 - v) / tau_in - (1.0 - h) * v / tau_out
            stim_on = bool(np.any((starts <= t) & (t < starts + stim_duration)))
            if stim_on:
                react = react + stim_amplitude * mask
            v = v + dt * react

            below = v <= v_gate
            h = np.where(below, 1.0 + (h - 1.0) * e_open, h * e_close)
            if __debug__:
                assert h.min() >= 0.0 and h.max() <= 1.0

        flat_v = v.ravel()
        if not np.all(np.isfinite(flat_v)) or flat_v.min() < -0.5 or flat_v.max() > 1.5:
            status = 1
            break
        v_out[block + 1] = flat_v
        h_out[block + 1] = h.ravel()

    return v_out, h_out, status
