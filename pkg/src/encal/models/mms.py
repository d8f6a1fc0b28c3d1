"""Desk-scale excitable-tissue simulators.

A two-variable cell model (voltage ``v`` in [0, 1], recovery gate ``h`` in
[0, 1]) coupled by isotropic diffusion on a 1D cable or a small 2D sheet,
with no-flux boundaries, paced by a train of regular stimuli followed by one
premature stimulus.  Time is in ms, space in cm, conductivity in cm^2/s.

The gate is integrated exactly within its active branch (it relaxes linearly
toward 1 below the excitation threshold and decays toward 0 above it), which
keeps h in [0, 1] for any step size; voltage uses explicit steps for the
diffusion and reaction parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import UnstableStep
from . import backend


@dataclass(frozen=True)
class CellParams:
    """Time constants (ms) of the four action-potential phases."""

    tau_in: float
    tau_out: float
    tau_open: float
    tau_close: float
    v_gate: float = 0.1

    def __post_init__(self):
        for name in ("tau_in", "tau_out", "tau_open", "tau_close"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_array(cls, values) -> "CellParams":
        ti, to, topen, tclose = (float(x) for x in values)
        return cls(ti, to, topen, tclose)


@dataclass(frozen=True)
class TissueParams:
    """Cell parameters plus tissue conductivity D (cm^2/s).

    The calibration box keeps D >= 0.1; D = 0 is allowed here so decoupled
    (diffusion-off) runs can be compared against the single-cell model.
    """

    cell: CellParams
    D: float

    def __post_init__(self):
        if self.D < 0:
            raise ValueError(f"conductivity must be non-negative, got {self.D}")

    @classmethod
    def from_array(cls, values) -> "TissueParams":
        return cls(CellParams.from_array(values[:4]), float(values[4]))


@dataclass(frozen=True)
class PacingProtocol:
    """Regular S1 train followed by one premature S2 stimulus.

    ``stim_region`` is a node index set; None means the geometry default
    (for single-cell runs, the one node).
    """

    s1_count: int = 3
    s1_interval: float = 800.0
    s2_coupling: float = 500.0
    stim_amplitude: float = 1.0
    stim_duration: float = 2.0
    stim_region: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.s1_count < 1:
            raise ValueError("need at least one regular stimulus")
        if self.s1_interval <= 0 or self.s2_coupling <= 0:
            raise ValueError("pacing intervals must be positive")

    @property
    def s1_times(self) -> np.ndarray:
        return np.arange(self.s1_count) * self.s1_interval

    @property
    def s2_time(self) -> float:
        return (self.s1_count - 1) * self.s1_interval + self.s2_coupling

    @property
    def stim_times(self) -> np.ndarray:
        return np.append(self.s1_times, self.s2_time)

    def default_t_end(self, tail: float = 600.0) -> float:
        return self.s2_time + tail


@dataclass(frozen=True)
class Geometry:
    """Finite-difference grid: a cable (ny == 1) or a rectangular sheet."""

    nx: int
    ny: int = 1
    dx: float = 0.025
    stim_nodes: tuple[int, ...] = ()
    sensors: tuple[int, ...] = ()

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.dx <= 0:
            raise ValueError("invalid grid")
        if self.n_nodes > 10_000:
            raise ValueError("desk-scale solver: node count must stay <= 10^4")
        object.__setattr__(self, "stim_nodes", tuple(int(i) for i in self.stim_nodes))
        object.__setattr__(self, "sensors", tuple(int(i) for i in self.sensors))
        for idx in (*self.stim_nodes, *self.sensors):
            if not 0 <= idx < self.n_nodes:
                raise ValueError(f"node index {idx} outside grid of {self.n_nodes}")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def kind(self) -> str:
        return "cable" if self.ny == 1 else "sheet"

    def node_x(self) -> np.ndarray:
        """x-coordinate (cm) of every node, repeating across rows for sheets."""
        return np.tile(np.arange(self.nx) * self.dx, self.ny)

    def stim_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=np.uint8)
        mask[list(self.stim_nodes)] = 1
        return mask


def default_cable(length: float = 3.0, dx: float = 0.025, stim_extent: float = 0.2,
                  sensor_span: tuple[float, float] = (0.3, 2.9),
                  n_sensors: int = 15) -> Geometry:
    """Default cable: 3 cm, 121 nodes, stimulus on the first 0.2 cm,
    15 sensors spread over [0.3, 2.9] cm (snapped to the grid)."""
    nx = int(round(length / dx)) + 1
    stim = tuple(i for i in range(nx) if i * dx <= stim_extent + 1e-12)
    sensor_x = np.linspace(sensor_span[0], sensor_span[1], n_sensors)
    sensors = tuple(int(round(x / dx)) for x in sensor_x)
    return Geometry(nx=nx, dx=dx, stim_nodes=stim, sensors=sensors)


def default_sheet(lx: float = 1.0, ly: float = 0.5, dx: float = 0.025) -> Geometry:
    nx = int(round(lx / dx)) + 1
    ny = int(round(ly / dx)) + 1
    stim = tuple(iy * nx + ix for iy in range(ny) for ix in range(nx)
                 if ix * dx <= 0.1 + 1e-12)
    sensors = tuple(iy * nx + nx // 2 for iy in range(0, ny, max(1, ny // 4)))
    return Geometry(nx=nx, ny=ny, dx=dx, stim_nodes=stim, sensors=sensors)


@dataclass(frozen=True)
class SimulationTrace:
    """Sampled space-time fields of one run (node-major arrays)."""

    times: np.ndarray            # (n_t,) ms, one sample per ms
    v: np.ndarray                # (n_nodes, n_t)
    h: np.ndarray                # (n_nodes, n_t)
    sensors: tuple[int, ...]
    dt: float                    # internal step actually used (ms)

    @property
    def n_nodes(self) -> int:
        return self.v.shape[0]

    def sensor_v(self, sensor: int) -> np.ndarray:
        return self.v[sensor]

    def to_csv(self, path) -> None:
        """Time column plus one voltage column per sensor."""
        header = "time_ms," + ",".join(f"sensor_{i}" for i in self.sensors)
        data = np.column_stack([self.times, self.v[list(self.sensors)].T])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def stable_dt(tau_in: float, D_cm2_s: float, dx: float, ndim: int = 1,
              cap: float = 0.02) -> float:
    """Step-size rule: min(cap, 0.25 dx^2 / D, 0.1 tau_in), with the
    diffusion bound tightened by the grid dimension for sheets."""
    dt = min(cap, 0.1 * tau_in)
    if D_cm2_s > 0:
        diff = D_cm2_s / 1000.0  # cm^2/ms
        dt = min(dt, 0.25 * dx * dx / (diff * ndim))
    return dt


def _substeps_per_ms(dt_rule: float) -> int:
    # Round dt down to divide the 1 ms sampling interval so samples and the
    # integer-ms stimulus windows align exactly with step boundaries.
    return int(math.ceil(1.0 / dt_rule - 1e-12))


def _run(params_cell: CellParams, diff_cm2_s: float, geometry: Geometry,
         protocol: PacingProtocol, dt: float | None, t_end: float | None,
         v0: np.ndarray | None = None, h0: np.ndarray | None = None) -> SimulationTrace:
    n_nodes = geometry.n_nodes
    if dt is None:
        ndim = 1 if geometry.ny == 1 else 2
        dt = stable_dt(params_cell.tau_in, diff_cm2_s, geometry.dx, ndim)
    n_sub = _substeps_per_ms(dt)
    if t_end is None:
        t_end = protocol.default_t_end()
    n_ms = int(math.ceil(t_end))

    stim_nodes = protocol.stim_region
    if stim_nodes is None:
        stim_nodes = geometry.stim_nodes if geometry.stim_nodes else tuple(range(n_nodes))
    mask = np.zeros(n_nodes, dtype=np.uint8)
    mask[list(stim_nodes)] = 1

    v_init = np.zeros(n_nodes) if v0 is None else np.asarray(v0, dtype=float)
    h_init = np.ones(n_nodes) if h0 is None else np.asarray(h0, dtype=float)

    kernel = backend.get_kernel()
    v_out, h_out, status = kernel(
        v_init, h_init, geometry.nx, geometry.ny, geometry.dx, diff_cm2_s / 1000.0,
        params_cell.tau_in, params_cell.tau_out, params_cell.tau_open,
        params_cell.tau_close, params_cell.v_gate, mask,
        np.asarray(protocol.stim_times, dtype=float), protocol.stim_duration,
        protocol.stim_amplitude, n_sub, n_ms,
    )
    if status != 0:
        raise UnstableStep(
            f"voltage left [-0.5, 1.5]; dt={1.0 / n_sub:.4g} ms is too large for "
            f"tau_in={params_cell.tau_in}, D={diff_cm2_s}"
        )
    times = np.arange(n_ms + 1, dtype=float)
    return SimulationTrace(times, v_out.T.copy(), h_out.T.copy(),
                           geometry.sensors, 1.0 / n_sub)


def simulate_cell(p: CellParams, protocol: PacingProtocol | None = None,
                  dt: float | None = None, t_end: float | None = None) -> SimulationTrace:
    """Single-node run (no diffusion); the stimulus drives the one node."""
    protocol = protocol or PacingProtocol()
    geom = Geometry(nx=1, stim_nodes=(0,), sensors=(0,))
    if dt is None:
        dt = stable_dt(p.tau_in, 0.0, geom.dx)
    return _run(p, 0.0, geom, protocol, dt, t_end)


def simulate_tissue(p: TissueParams, geometry: Geometry,
                    protocol: PacingProtocol | None = None,
                    dt: float | None = None, t_end: float | None = None,
                    v0: np.ndarray | None = None,
                    h0: np.ndarray | None = None) -> SimulationTrace:
    """Finite-difference monodomain run with no-flux boundaries.

    Initial condition is rest (v = 0, h = 1) unless ``v0``/``h0`` are given.
    The stimulus enters as an additive forcing on the stimulated nodes during
    each stimulus window.
    """
    protocol = protocol or PacingProtocol()
    return _run(p.cell, p.D, geometry, protocol, dt, t_end, v0, h0)
