import numpy as np
import pytest

from encal.errors import NoCapture, NoRecovery, UnstableStep
from encal.models import (CellParams, Geometry, PacingProtocol, SimulationTrace,
                          TissueParams, cell_feasibility, count_upcrossings,
                          default_cable, default_sheet, extract_apd, extract_lat,
                          s1s2_fields, s1s2_markers, s1s2_outputs, simulate_cell,
                          simulate_tissue, toy_forward)
from encal.models.mms import stable_dt

MID_CELL = CellParams(0.15, 6.0, 140.0, 125.0)


def synthetic_trace(times, v):
    times = np.asarray(times, dtype=float)
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return SimulationTrace(times, v, np.ones_like(v), tuple(range(v.shape[0])), 1.0)


class TestToyForward:
    def test_zero_parameters(self):
        np.testing.assert_array_equal(toy_forward([0.0, 0.0]), np.zeros(3))

    def test_ground_truth_value(self):
        # -(-1.5)^3 * 0.5 + 2^3 * 0.25 = 1.6875 + 2.0
        out = toy_forward([-1.5, 2.0], x=np.array([0.5]))
        np.testing.assert_allclose(out, [3.6875], rtol=1e-15)

    def test_cancellation(self):
        np.testing.assert_allclose(toy_forward([1.0, 1.0], x=np.array([1.0])), [0.0])

    def test_batch_matches_single(self):
        thetas = np.array([[-1.5, 2.0], [1.0, 1.0], [0.3, -0.7]])
        batch = toy_forward(thetas)
        for row, theta in zip(batch, thetas):
            np.testing.assert_allclose(row, toy_forward(theta), rtol=1e-15)


class TestCellModel:
    def test_rest_state_is_invariant(self):
        quiet = PacingProtocol(stim_amplitude=0.0)
        trace = simulate_cell(MID_CELL, quiet, t_end=500.0)
        assert np.max(np.abs(trace.v)) == 0.0
        assert np.min(trace.h) == 1.0

    def test_one_upstroke_per_stimulus_and_diastolic_return(self):
        protocol = PacingProtocol()
        trace = simulate_cell(MID_CELL, protocol)
        starts = protocol.stim_times
        ends = np.append(starts[1:], trace.times[-1])
        for t0, t1 in zip(starts, ends):
            assert count_upcrossings(trace.times, trace.v[0], (t0, t1)) == 1
            # back below the excitation threshold before the next stimulus
            idx = np.searchsorted(trace.times, t1) - 1
            assert trace.v[0, idx] < 0.1

    def test_gate_stays_in_unit_interval(self):
        for cell in (MID_CELL, CellParams(0.01, 1.0, 65.0, 100.0),
                     CellParams(0.3, 30.0, 215.0, 150.0)):
            trace = simulate_cell(cell, t_end=900.0)
            assert trace.h.min() >= 0.0 and trace.h.max() <= 1.0

    def test_long_apd_labelled_unfeasible(self):
        label = cell_feasibility(CellParams(0.3, 30.0, 65.0, 150.0))
        assert label.feasible is False

    def test_mid_range_labelled_feasible(self):
        assert cell_feasibility(MID_CELL).feasible is True

    def test_unstable_step_detected(self):
        with pytest.raises(UnstableStep):
            simulate_cell(CellParams(0.01, 6.0, 140.0, 125.0), dt=1.0, t_end=50.0)


class TestTissueModel:
    def test_diffusion_off_matches_cell(self):
        geom = Geometry(nx=5, stim_nodes=(0, 1, 2, 3, 4), sensors=(0, 2, 4))
        protocol = PacingProtocol()
        dt = stable_dt(MID_CELL.tau_in, 0.0, geom.dx)
        cell = simulate_cell(MID_CELL, protocol, dt=dt)
        tissue = simulate_tissue(TissueParams(MID_CELL, 0.0), geom, protocol, dt=dt)
        for node in range(5):
            np.testing.assert_allclose(tissue.v[node], cell.v[0], atol=1e-10)
            np.testing.assert_allclose(tissue.h[node], cell.h[0], atol=1e-10)

    def test_uniform_excitation_stays_uniform(self):
        geom = default_sheet()
        quiet = PacingProtocol(stim_amplitude=0.0)
        v0 = np.full(geom.n_nodes, 0.3)
        trace = simulate_tissue(TissueParams(MID_CELL, 2.0), geom, quiet,
                                t_end=300.0, v0=v0)
        spread = trace.v.max(axis=0) - trace.v.min(axis=0)
        assert spread.max() < 1e-12

    def test_conduction_velocity_scales_like_sqrt_d(self):
        geom = default_cable()
        protocol = PacingProtocol(s1_count=1, s1_interval=800.0, s2_coupling=700.0)
        a, b = 40, 80  # nodes at 1.0 cm and 2.0 cm
        speeds = {}
        for D in (0.5, 2.0):
            trace = simulate_tissue(TissueParams(MID_CELL, D), geom, protocol,
                                    t_end=400.0)
            lat_a = extract_lat(trace, (0.0, 400.0), a)
            lat_b = extract_lat(trace, (0.0, 400.0), b)
            speeds[D] = (b - a) * geom.dx / (lat_b - lat_a)
        assert speeds[2.0] / speeds[0.5] == pytest.approx(2.0, rel=0.10)

    def test_lat_convergence_under_dt_halving(self):
        geom = default_cable()
        p = TissueParams(MID_CELL, 1.0)
        dt = stable_dt(MID_CELL.tau_in, 1.0, geom.dx)
        lats = []
        for step in (dt, dt / 2):
            trace = simulate_tissue(p, geom, dt=step)
            lats.append(np.array([extract_lat(trace, (1600.0, 2100.0), s)
                                  for s in geom.sensors]))
        rel = np.abs(lats[0] - lats[1]) / (lats[1] - 1600.0)
        assert rel.max() < 0.005


class TestMarkers:
    def test_linear_ramp_lat(self):
        times = np.arange(101, dtype=float)
        trace = synthetic_trace(times, times / 100.0)
        assert extract_lat(trace, (0.0, 100.0), 0) == pytest.approx(75.0, abs=1e-12)

    def test_no_crossing_raises(self):
        trace = synthetic_trace(np.arange(50.0), np.full(50, 0.5))
        with pytest.raises(NoCapture):
            extract_lat(trace, (0.0, 49.0), 0)

    def test_sine_crossing_against_arcsin(self):
        times = np.arange(0.0, 100.0, 0.25)
        v = 0.9 * np.sin(2 * np.pi * times / 200.0)
        trace = synthetic_trace(times, v)
        expected = 200.0 / (2 * np.pi) * np.arcsin(0.75 / 0.9)
        assert extract_lat(trace, (0.0, 99.0), 0) == pytest.approx(expected, abs=1e-3)

    def test_triangular_apd(self):
        times = np.concatenate([np.linspace(0, 1, 21), np.linspace(1.5, 11, 20)])
        v = np.where(times <= 1.0, times, 1.0 - (times - 1.0) / 10.0)
        trace = synthetic_trace(times, v)
        assert extract_apd(trace, (0.0, 11.0), 0) == pytest.approx(9.25, abs=1e-9)

    def test_flat_zero_no_capture(self):
        trace = synthetic_trace(np.arange(20.0), np.zeros(20))
        with pytest.raises(NoCapture):
            extract_apd(trace, (0.0, 19.0), 0)

    def test_window_ending_at_peak_no_recovery(self):
        times = np.arange(0.0, 5.0, 0.25)
        v = times / times[-1]
        trace = synthetic_trace(times, v)
        with pytest.raises(NoRecovery):
            extract_apd(trace, (0.0, times[-1]), 0)

    def test_time_shift_invariance(self):
        times = np.arange(0.0, 60.0)
        v = np.exp(-0.5 * ((times - 20.0) / 6.0) ** 2)
        shift = 1234.0
        t1 = synthetic_trace(times, v)
        t2 = synthetic_trace(times + shift, v)
        lat1 = extract_lat(t1, (0.0, 59.0), 0)
        lat2 = extract_lat(t2, (shift, 59.0 + shift), 0)
        assert lat2 - lat1 == pytest.approx(shift, abs=1e-9)
        apd1 = extract_apd(t1, (0.0, 59.0), 0)
        apd2 = extract_apd(t2, (shift, 59.0 + shift), 0)
        assert apd1 == pytest.approx(apd2, abs=1e-9)

    def test_window_outside_span_rejected(self):
        trace = synthetic_trace(np.arange(10.0), np.zeros(10))
        with pytest.raises(ValueError):
            extract_lat(trace, (5.0, 50.0), 0)


class TestS1S2Outputs:
    def test_decoupled_uniform_case(self):
        geom = Geometry(nx=15, stim_nodes=tuple(range(15)), sensors=tuple(range(15)))
        protocol = PacingProtocol()
        vec, markers = s1s2_outputs(TissueParams(MID_CELL, 0.0), geom, protocol)
        cell = simulate_cell(MID_CELL, protocol)
        lat_cell = extract_lat(cell, (1600.0, 2100.0), 0)
        np.testing.assert_allclose(markers.lat_s1, lat_cell, atol=1e-9)
        assert vec.shape == (45,)

    def test_s1_lat_increases_with_distance(self):
        geom = default_cable()
        vec, markers = s1s2_outputs(TissueParams(MID_CELL, 1.0), geom)
        assert markers.complete
        assert np.all(np.diff(markers.lat_s1) > 0)

    def test_missing_entries_for_failing_parameters(self):
        import warnings
        geom = default_cable()
        # slow conduction with a long plateau: the premature beat blocks
        # before reaching the distal sensors
        p = TissueParams(CellParams(0.25, 15.0, 100.0, 150.0), 0.2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vec, markers = s1s2_outputs(p, geom)
        assert not markers.complete
        assert np.isnan(vec).any()

    def test_fields_match_sensor_markers(self):
        geom = default_cable()
        protocol = PacingProtocol()
        trace = simulate_tissue(TissueParams(MID_CELL, 1.0), geom, protocol)
        markers = s1s2_markers(trace, protocol)
        fields = s1s2_fields(trace, protocol)
        np.testing.assert_allclose(fields[0, list(geom.sensors)], markers.lat_s1,
                                   rtol=1e-12)
        np.testing.assert_allclose(fields[2, list(geom.sensors)], markers.apd_s2,
                                   rtol=1e-12)

    def test_trace_csv_export(self, tmp_path):
        geom = Geometry(nx=4, stim_nodes=(0,), sensors=(1, 3))
        trace = simulate_tissue(TissueParams(MID_CELL, 1.0), geom,
                                PacingProtocol(s1_count=1), t_end=50.0)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (51, 3)
