"""Activation-time and repolarization markers extracted from traces.

Local activation time (LAT) is the earliest instant the voltage crosses
0.75 from below (positive slope), linearly interpolated between samples.
Action potential duration (APD) is the local recovery time minus LAT,
where recovery is the first decay to 10% of the beat's own peak after the
peak.  Markers are reported in absolute trace time; both are invariant
under a uniform time shift of the trace (APD exactly so).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import NoCapture, NoCaptureWarning, NoRecovery
from .mms import (CellParams, Geometry, PacingProtocol, SimulationTrace,
                  TissueParams, simulate_cell, simulate_tissue)

LAT_THRESHOLD = 0.75
RECOVERY_FRACTION = 0.1
# Optional skip after the premature-stimulus onset before its LAT window
# opens.  Only needed when sensors sit inside the stimulus region (the
# forcing itself would count as activation); for disjoint sensors any skip
# loses fast-conducting beats that arrive within it, so the default is 0.
S2_LAT_SKIP_MS = 0.0

OUTPUT_KINDS = ("S1", "S2", "APD")


def _window_slice(times: np.ndarray, series: np.ndarray, window):
    t0, t1 = window
    if t0 < times[0] - 1e-9 or t1 > times[-1] + 1e-9:
        raise ValueError(f"window {window} outside trace span "
                         f"[{times[0]}, {times[-1]}]")
    sel = (times >= t0) & (times <= t1)
    return times[sel], series[sel]


def _first_upcross(t: np.ndarray, x: np.ndarray, threshold: float) -> float | None:
    if t.size < 2:
        return None
    hits = np.nonzero((x[:-1] < threshold) & (x[1:] >= threshold))[0]
    if hits.size == 0:
        return None
    i = hits[0]
    return float(t[i] + (threshold - x[i]) * (t[i + 1] - t[i]) / (x[i + 1] - x[i]))


def count_upcrossings(times, series, window, threshold: float = LAT_THRESHOLD) -> int:
    t, x = _window_slice(np.asarray(times, float), np.asarray(series, float), window)
    if t.size < 2:
        return 0
    return int(np.count_nonzero((x[:-1] < threshold) & (x[1:] >= threshold)))


def extract_lat(trace: SimulationTrace, window, sensor: int,
                threshold: float = LAT_THRESHOLD) -> float:
    """Earliest upward crossing of the threshold in the window, interpolated.

    Raises NoCapture when the sensor voltage never crosses in the window.
    """
    t, x = _window_slice(trace.times, trace.v[sensor], window)
    lat = _first_upcross(t, x, threshold)
    if lat is None:
        raise NoCapture(f"no upward crossing of {threshold} at sensor {sensor} "
                        f"in window {window}")
    return lat


def _apd_from_series(t: np.ndarray, x: np.ndarray, threshold: float,
                     recovery_fraction: float, sensor: int, window) -> float:
    lat = _first_upcross(t, x, threshold)
    if lat is None:
        raise NoCapture(f"no activation at sensor {sensor} in window {window}")
    after = t >= lat
    ta, xa = t[after], x[after]
    ipk = int(np.argmax(xa))
    target = recovery_fraction * xa[ipk]
    tr, xr = ta[ipk:], xa[ipk:]
    hits = np.nonzero((xr[:-1] > target) & (xr[1:] <= target))[0]
    if hits.size == 0:
        raise NoRecovery(f"sensor {sensor}: voltage never fell to "
                         f"{recovery_fraction:.0%} of the beat peak in window {window}")
    j = hits[0]
    lrt = float(tr[j] + (target - xr[j]) * (tr[j + 1] - tr[j]) / (xr[j + 1] - xr[j]))
    return lrt - lat


def extract_apd(trace: SimulationTrace, window, sensor: int,
                recovery_fraction: float = RECOVERY_FRACTION,
                threshold: float = LAT_THRESHOLD) -> float:
    """Recovery time minus activation time for the beat inside the window.

    The recovery reference is the beat's own peak within the window.  Raises
    NoCapture if there is no activation and NoRecovery if the window ends
    before the voltage falls back to the recovery fraction.
    """
    t, x = _window_slice(trace.times, trace.v[sensor], window)
    return _apd_from_series(t, x, threshold, recovery_fraction, sensor, window)


def lat_field(trace: SimulationTrace, window,
              threshold: float = LAT_THRESHOLD) -> np.ndarray:
    """LAT at every node (NaN where there is no capture)."""
    t0, t1 = window
    sel = (trace.times >= t0) & (trace.times <= t1)
    t = trace.times[sel]
    x = trace.v[:, sel]
    out = np.full(trace.n_nodes, np.nan)
    if t.size < 2:
        return out
    cross = (x[:, :-1] < threshold) & (x[:, 1:] >= threshold)
    has = cross.any(axis=1)
    idx = np.argmax(cross, axis=1)
    rows = np.nonzero(has)[0]
    i = idx[rows]
    x0 = x[rows, i]
    x1 = x[rows, i + 1]
    out[rows] = t[i] + (threshold - x0) * (t[i + 1] - t[i]) / (x1 - x0)
    return out


def apd_field(trace: SimulationTrace, window,
              recovery_fraction: float = RECOVERY_FRACTION,
              threshold: float = LAT_THRESHOLD) -> np.ndarray:
    """APD at every node (NaN where capture or recovery is missing)."""
    t0, t1 = window
    sel = (trace.times >= t0) & (trace.times <= t1)
    t = trace.times[sel]
    out = np.full(trace.n_nodes, np.nan)
    for node in range(trace.n_nodes):
        try:
            out[node] = _apd_from_series(t, trace.v[node, sel], threshold,
                                         recovery_fraction, node, window)
        except (NoCapture, NoRecovery):
            pass
    return out


@dataclass(frozen=True)
class BeatMarkers:
    """Per-sensor markers of the last regular beat and the premature beat."""

    lat_s1: np.ndarray   # LAT of the final S1 beat, NaN = no capture
    lat_s2: np.ndarray   # LAT of the S2 beat
    apd_s2: np.ndarray   # APD of the S2 beat
    capture: np.ndarray  # (n_sensors, 3) bool

    def flatten(self) -> np.ndarray:
        """Output-type major, sensor minor: [S1 lats | S2 lats | S2 apds]."""
        return np.concatenate([self.lat_s1, self.lat_s2, self.apd_s2])

    @property
    def complete(self) -> bool:
        return bool(np.all(np.isfinite(self.flatten())))


def output_labels(n_sensors: int = 15) -> tuple[str, ...]:
    return tuple(f"{kind}@{i:02d}" for kind in OUTPUT_KINDS for i in range(n_sensors))


def beat_windows(protocol: PacingProtocol, t_end: float,
                 s2_skip: float = S2_LAT_SKIP_MS):
    """Measurement windows for the final S1 beat and the S2 beat.

    The S1 window ends at the premature stimulus so its wave cannot be
    attributed to the regular beat; the S2 window starts after a short skip.
    """
    last_s1 = (protocol.s1_count - 1) * protocol.s1_interval
    return (last_s1, protocol.s2_time), (protocol.s2_time + s2_skip, t_end)


def s1s2_markers(trace: SimulationTrace, protocol: PacingProtocol,
                 sensors=None, s2_skip: float = S2_LAT_SKIP_MS) -> BeatMarkers:
    sensors = tuple(sensors) if sensors is not None else trace.sensors
    w_s1, w_s2 = beat_windows(protocol, trace.times[-1], s2_skip)
    n = len(sensors)
    lat_s1 = np.full(n, np.nan)
    lat_s2 = np.full(n, np.nan)
    apd_s2 = np.full(n, np.nan)
    for k, sensor in enumerate(sensors):
        try:
            lat_s1[k] = extract_lat(trace, w_s1, sensor)
        except NoCapture:
            pass
        try:
            lat_s2[k] = extract_lat(trace, w_s2, sensor)
            apd_s2[k] = extract_apd(trace, w_s2, sensor)
        except (NoCapture, NoRecovery):
            pass
    for name, row in (("S1", lat_s1), ("S2", lat_s2)):
        if np.all(np.isnan(row)):
            warnings.warn(f"{name} beat did not reach any sensor", NoCaptureWarning)
    capture = np.column_stack([np.isfinite(lat_s1), np.isfinite(lat_s2),
                               np.isfinite(apd_s2)])
    return BeatMarkers(lat_s1, lat_s2, apd_s2, capture)


def s1s2_outputs(p: TissueParams, geometry: Geometry,
                 protocol: PacingProtocol | None = None, sensors=None,
                 dt: float | None = None, t_end: float | None = None):
    """Simulate the pacing protocol and return the flattened sensor outputs.

    Returns ``(vector, markers)`` where the vector has one entry per
    (output type, sensor) in output-type-major order; missing entries are
    NaN and mark the parameter set for rejection downstream.
    """
    protocol = protocol or PacingProtocol()
    trace = simulate_tissue(p, geometry, protocol, dt=dt, t_end=t_end)
    markers = s1s2_markers(trace, protocol, sensors)
    return markers.flatten(), markers


def s1s2_fields(trace: SimulationTrace, protocol: PacingProtocol,
                s2_skip: float = S2_LAT_SKIP_MS) -> np.ndarray:
    """All-node (3, n_nodes) array of S1-LAT, S2-LAT and S2-APD fields."""
    w_s1, w_s2 = beat_windows(protocol, trace.times[-1], s2_skip)
    return np.vstack([
        lat_field(trace, w_s1),
        lat_field(trace, w_s2),
        apd_field(trace, w_s2),
    ])


class FeasibilityLabel(NamedTuple):
    feasible: bool
    reason: str


def cell_feasibility(p: CellParams, protocol: PacingProtocol | None = None,
                     dt: float | None = None, apd_limit: float = 500.0,
                     alternans_ms: float = 5.0) -> FeasibilityLabel:
    """Label a cell parameter set from its paced single-cell run.

    Unfeasible when any regular beat fails to capture (or fires more than
    once), fails to recover inside its own cycle, exceeds the APD limit, or
    when consecutive beats alternate by more than ``alternans_ms``.
    """
    protocol = protocol or PacingProtocol()
    from ..errors import UnstableStep
    try:
        trace = simulate_cell(p, protocol, dt=dt)
    except UnstableStep:
        return FeasibilityLabel(False, "unstable")

    s1 = protocol.s1_times
    ends = np.append(s1[1:], protocol.s2_time)
    apds = []
    for t0, t1 in zip(s1, ends):
        n_up = count_upcrossings(trace.times, trace.v[0], (t0, t1))
        if n_up == 0:
            return FeasibilityLabel(False, "no_capture")
        if n_up > 1:
            return FeasibilityLabel(False, "extra_upstrokes")
        try:
            apd = extract_apd(trace, (t0, t1), 0)
        except NoRecovery:
            return FeasibilityLabel(False, "no_recovery")
        if apd > apd_limit:
            return FeasibilityLabel(False, "apd_gt_limit")
        apds.append(apd)
    diffs = np.abs(np.diff(apds))
    if diffs.size and diffs.max() > alternans_ms:
        return FeasibilityLabel(False, "alternans")
    return FeasibilityLabel(True, "ok")
