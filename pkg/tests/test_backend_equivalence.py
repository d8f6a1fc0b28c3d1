import numpy as np
import pytest

from encal.models import HAVE_COMPILED, get_kernel
from encal.models.mms import PacingProtocol, default_cable, default_sheet

pytestmark = pytest.mark.skipif(not HAVE_COMPILED,
                                reason="compiled stepper not built")


def run_both(nx, ny, dx, diff, n_sub, n_ms, stim_mask):
    protocol = PacingProtocol(s1_count=1)
    args = (np.zeros(nx * ny), np.ones(nx * ny), nx, ny, dx, diff,
            0.15, 6.0, 140.0, 125.0, 0.1, stim_mask,
            np.asarray(protocol.stim_times, dtype=float), 2.0, 1.0, n_sub, n_ms)
    vc, hc, sc = get_kernel("compiled")(*args)
    vp, hp, sp = get_kernel("python")(*args)
    return (vc, hc, sc), (vp, hp, sp)


def test_cable_twins_agree():
    geom = default_cable()
    (vc, hc, sc), (vp, hp, sp) = run_both(geom.nx, 1, geom.dx, 1.0 / 1000.0,
                                          50, 120, geom.stim_mask())
    assert sc == sp == 0
    np.testing.assert_allclose(vc, vp, rtol=0, atol=1e-12)
    np.testing.assert_allclose(hc, hp, rtol=0, atol=1e-12)


def test_sheet_twins_agree():
    geom = default_sheet()
    (vc, hc, sc), (vp, hp, sp) = run_both(geom.nx, geom.ny, geom.dx, 0.5 / 1000.0,
                                          50, 80, geom.stim_mask())
    assert sc == sp == 0
    np.testing.assert_allclose(vc, vp, rtol=0, atol=1e-12)
    np.testing.assert_allclose(hc, hp, rtol=0, atol=1e-12)


def test_single_node_twins_agree():
    (vc, hc, sc), (vp, hp, sp) = run_both(1, 1, 0.025, 0.0, 67, 200,
                                          np.ones(1, dtype=np.uint8))
    assert sc == sp == 0
    np.testing.assert_array_equal(vc, vp)
    np.testing.assert_array_equal(hc, hp)


def test_unstable_status_agrees():
    # dt far above the reaction stability limit for tau_in = 0.01
    args = (np.zeros(1), np.ones(1), 1, 1, 0.025, 0.0,
            0.01, 6.0, 140.0, 125.0, 0.1, np.ones(1, dtype=np.uint8),
            np.array([0.0]), 2.0, 1.0, 1, 50)
    _, _, sc = get_kernel("compiled")(*args)
    _, _, sp = get_kernel("python")(*args)
    assert sc == sp == 1
