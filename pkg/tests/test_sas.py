import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from lockloop.lti import PidConfig, bode, closed_loop_suppression, unity_gain_frequency
from lockloop.pdh import CavityModel
from lockloop.sas import (
    LoopSeparationError,
    SasConfig,
    SasLine,
    outer_loop_open_tf,
    sas_background,
    sas_error,
    sas_slope,
    sas_transmission,
)

CFG = SasConfig()


def test_background_tail_tends_to_one():
    far = CFG.doppler_center + np.array([-6, 6]) * CFG.doppler_sigma
    assert np.all(np.abs(sas_background(CFG, far) - 1) < 1e-5)


def test_transmission_in_unit_interval():
    d = np.linspace(-1e9, 1e9, 4001)
    t = sas_transmission(CFG, d)
    assert np.all(t > 0) and np.all(t <= 1)


def test_lock_line_is_local_maximum():
    c = CFG.lock_line.center
    h = CFG.lock_line.fwhm / 10
    t0 = sas_transmission(CFG, c)
    assert t0 > sas_transmission(CFG, c - h) and t0 > sas_transmission(CFG, c + h)


def test_doubling_small_depths_doubles_deficit():
    small = dataclasses.replace(CFG, lines=[dataclasses.replace(l, depth=l.depth * 0.01) for l in CFG.lines])
    double = dataclasses.replace(small, lines=[dataclasses.replace(l, depth=l.depth * 2) for l in small.lines])
    d = np.linspace(-500e6, 50e6, 301)
    bg = sas_background(CFG, d)
    ratio = (sas_transmission(double, d) - bg) / (sas_transmission(small, d) - bg)
    assert np.max(np.abs(ratio - 2)) < 0.04  # 2% of 2


def test_config_invariants():
    with pytest.raises(ValueError):
        SasConfig(lines=())
    with pytest.raises(ValueError):
        SasConfig(lock_line_index=10)
    with pytest.raises(ValueError):
        SasConfig(lockin_bandwidth=5e6)
    with pytest.raises(ValueError):
        SasLine(0.0, 0.0, 0.1)


def test_error_zero_at_isolated_line_center():
    cfg = SasConfig(lines=(SasLine(3e6, 6e6, 0.05),))
    assert abs(sas_error(cfg, 3e6)) < 1e-15


def test_error_at_lock_center_small_with_neighbours():
    # neighbouring lines add a small slope; the offset is checked via the zero crossing
    w = CFG.lock_line.fwhm
    peak = np.max(np.abs(sas_error(CFG, np.linspace(-2 * w, 2 * w, 801))))
    assert abs(sas_error(CFG, CFG.lock_line.center)) < 1e-3 * peak


def test_error_locally_odd():
    c, w = CFG.lock_line.center, CFG.lock_line.fwhm
    delta = np.linspace(0, w / 4, 60)
    e_plus, e_minus = sas_error(CFG, c + delta), sas_error(CFG, c - delta)
    peak = np.max(np.abs(sas_error(CFG, np.linspace(c - 2 * w, c + 2 * w, 801))))
    assert np.max(np.abs(e_plus + e_minus)) < 0.02 * peak


def test_error_demod_pi_negates():
    d = np.linspace(-20e6, 20e6, 81)
    flipped = dataclasses.replace(CFG, demod_phase=math.pi)
    assert np.allclose(sas_error(flipped, d), -sas_error(CFG, d), atol=1e-15)


def test_zero_crossing_within_mod_depth_over_100():
    c = CFG.lock_line.center
    root = brentq(lambda d: sas_error(CFG, d), c - 1e6, c + 1e6, xtol=1.0)
    assert abs(root - c) < CFG.mod_depth / 100


def test_error_proportional_to_derivative_small_dither():
    # first-harmonic lock-in of a small dither: e ~ mod_depth * dT/dd
    cfg = dataclasses.replace(CFG, mod_depth=1e4)
    d = 1e6
    line_sum = lambda x: sum(l(x) for l in cfg.lines)
    deriv = (line_sum(d + 10) - line_sum(d - 10)) / 20
    assert sas_error(cfg, d) == pytest.approx(cfg.mod_depth * deriv, rel=1e-3)


def test_large_dither_warns():
    with pytest.warns(RuntimeWarning):
        sas_error(dataclasses.replace(CFG, mod_depth=7e6), 0.0)


# -- outer loop ----------------------------------------------------------------

@pytest.fixture(scope="module")
def outer(default_scenario):
    return default_scenario.outer_open_loop()


def test_outer_dc_gain_above_80_db(outer):
    mag, _ = bode(outer, 0.01)
    assert 20 * np.log10(mag) > 80


def test_outer_rolls_off_above_pzt_bandwidth(outer, default_scenario):
    mag, _ = bode(outer, 1e6)
    assert mag < 1e-6
    assert unity_gain_frequency(outer) < 1e3


def test_doubling_pzt_gain_doubles_magnitude(default_scenario):
    sc = default_scenario
    cav2 = dataclasses.replace(sc.cavity, pzt_gain=2 * sc.cavity.pzt_gain)
    f = np.logspace(-2, 5, 40)
    g1 = outer_loop_open_tf(sc.sas, sc.cavity, sc.pid2)
    g2 = outer_loop_open_tf(sc.sas, cav2, sc.pid2)
    assert np.allclose(np.abs(g2.response(f)), 2 * np.abs(g1.response(f)), rtol=1e-12)


def test_loop_separation_refused(default_scenario):
    sc = default_scenario
    with pytest.raises(LoopSeparationError, match="exceeds"):
        outer_loop_open_tf(sc.sas, sc.cavity, sc.pid2.scaled(1e4), inner_ugf=1e5)
    # default design passes against the default inner loop
    outer_loop_open_tf(sc.sas, sc.cavity, sc.pid2, inner_ugf=1.5e6)


def test_suppression_negligible_above_lockin_corner(outer, default_scenario):
    f = np.logspace(np.log10(default_scenario.sas.lockin_bandwidth), 6, 40)
    s = 20 * np.log10(closed_loop_suppression(outer, f))
    assert np.all(s > -3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 6e6), st.floats(1e3, 2e6))
def test_error_odd_about_isolated_line(delta, mod):
    cfg = SasConfig(lines=(SasLine(0.0, 6e6, 0.05),), mod_depth=mod)
    assert sas_error(cfg, delta) == pytest.approx(-sas_error(cfg, -delta), abs=1e-12)
