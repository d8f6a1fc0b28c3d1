# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepper for the two-variable excitable-tissue model.

Hot inner loop of every simulation; see ``_stepper_py`` for the reference
semantics (the two must stay step-for-step identical).
"""

from libc.math cimport exp, isfinite

import numpy as np

BACKEND_NAME = "compiled"


def run_mms_kernel(v0, h0, int nx, int ny, double dx, double diff,
                   double tau_in, double tau_out, double tau_open, double tau_close,
                   double v_gate, stim_mask, stim_starts, double stim_duration,
                   double stim_amplitude, int n_sub, int n_ms):
    """Same contract as ``_stepper_py.run_mms_kernel``."""
    cdef int n_nodes = nx * ny
    cdef double[::1] v = np.ascontiguousarray(v0, dtype=np.float64).copy()
    cdef double[::1] h = np.ascontiguousarray(h0, dtype=np.float64).copy()
    cdef unsigned char[::1] mask = np.ascontiguousarray(stim_mask, dtype=np.uint8)
    cdef double[::1] starts = np.ascontiguousarray(stim_starts, dtype=np.float64)
    cdef double[::1] lap = np.zeros(n_nodes)

    v_out_arr = np.zeros((n_ms + 1, n_nodes))
    h_out_arr = np.zeros((n_ms + 1, n_nodes))
    cdef double[:, ::1] v_out = v_out_arr
    cdef double[:, ::1] h_out = h_out_arr

    cdef double dt = 1.0 / n_sub
    cdef double e_open = exp(-dt / tau_open)
    cdef double e_close = exp(-dt / tau_close)
    cdef double inv_dx2 = 1.0 / (dx * dx)
    cdef double dcoef = dt * diff * inv_dx2

    cdef int n_starts = starts.shape[0]
    cdef int use_diff = 1 if (diff > 0.0 and n_nodes > 1) else 0
    cdef int status = 0
    cdef int block, sub, i, ix, iy, s, stim_on
    cdef double t, vi, hi, react, vmin, vmax, xp, yp

    v_out_arr[0] = np.asarray(v0, dtype=np.float64)
    h_out_arr[0] = np.asarray(h0, dtype=np.float64)

    with nogil:
        for block in range(n_ms):
            for sub in range(n_sub):
                t = block + sub * dt
                stim_on = 0
                for s in range(n_starts):
                    if starts[s] <= t and t < starts[s] + stim_duration:
                        stim_on = 1
                        break

                if use_diff:
                    if ny > 1:
                        # Edge terms written as 2*(neighbor - edge) to match
                        # the numpy twin bit for bit.
                        for iy in range(ny):
                            for ix in range(nx):
                                i = iy * nx + ix
                                if ix == 0:
                                    xp = 2.0 * (v[i + 1] - v[i])
                                elif ix == nx - 1:
                                    xp = 2.0 * (v[i - 1] - v[i])
                                else:
                                    xp = v[i - 1] - 2.0 * v[i] + v[i + 1]
                                if iy == 0:
                                    yp = 2.0 * (v[i + nx] - v[i])
                                elif iy == ny - 1:
                                    yp = 2.0 * (v[i - nx] - v[i])
                                else:
                                    yp = v[i - nx] - 2.0 * v[i] + v[i + nx]
                                lap[i] = xp + yp
                    else:
                        for i in range(1, n_nodes - 1):
                            lap[i] = v[i - 1] - 2.0 * v[i] + v[i + 1]
                        lap[0] = 2.0 * (v[1] - v[0])
                        lap[n_nodes - 1] = 2.0 * (v[n_nodes - 2] - v[n_nodes - 1])
                    for i in range(n_nodes):
                        v[i] = v[i] + dcoef * lap[i]

                for i in range(n_nodes):
                    vi = v[i]
                    hi = h[i]
                    react = hi * vi * (vi - v_gate) * (1.0 - vi) / tau_in \
                        - (1.0 - hi) * vi / tau_out
                    if stim_on and mask[i]:
                        react = react + stim_amplitude
                    vi = vi + dt * react
                    v[i] = vi
                    if vi <= v_gate:
                        h[i] = 1.0 + (hi - 1.0) * e_open
                    else:
                        h[i] = hi * e_close

            vmin = v[0]
            vmax = v[0]
            for i in range(n_nodes):
                if not isfinite(v[i]):
                    status = 1
                    break
                if v[i] < vmin:
                    vmin = v[i]
                if v[i] > vmax:
                    vmax = v[i]
            if status == 0 and (vmin < -0.5 or vmax > 1.5):
                status = 1
            if status:
                break
            for i in range(n_nodes):
                v_out[block + 1, i] = v[i]
                h_out[block + 1, i] = h[i]

    return v_out_arr, h_out_arr, status
