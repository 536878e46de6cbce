import dataclasses
import math

import pytest

from lockloop.calibration import (
    calibrate_cavity_noise,
    cascade_linewidth,
    suppression_db,
    with_noise_scale,
)
from lockloop.cascade import synthesize_noise
from lockloop.config import default_config_text, parse_config
from lockloop.lti import closed_loop_suppression


def test_suppression_target_met(default_scenario):
    assert suppression_db(default_scenario, 1e3) >= 60


def test_suppression_is_ratio_of_closed_loops(default_scenario):
    tight = closed_loop_suppression(default_scenario.inner_open_loop(), 1e3)
    loose = closed_loop_suppression(default_scenario.loosened(300).inner_open_loop(), 1e3)
    assert suppression_db(default_scenario, 1e3) == pytest.approx(20 * math.log10(loose / tight))


def test_with_noise_scale_edits_one_line():
    text = default_config_text()
    new = with_noise_scale(text, 2.5)
    diff = [(a, b) for a, b in zip(text.splitlines(), new.splitlines()) if a != b]
    assert len(diff) == 1 and diff[0][1].strip() == "noise_scale: 2.5"
    assert parse_config(new).scenario.cavity.noise(100.0) == pytest.approx(
        2.5 * parse_config(text).scenario.cavity.noise(100.0))


def test_with_noise_scale_needs_the_key():
    with pytest.raises(ValueError):
        with_noise_scale("seed: 1\n", 2.0)


@pytest.fixture(scope="module")
def quick(short_scenario):
    sc = short_scenario.with_lock("cascade")
    return sc, synthesize_noise(sc)


def test_bisection_recovers_known_scale(quick):
    sc, base = quick
    k_true = 1.7
    target = cascade_linewidth(sc, dataclasses.replace(base, cavity=base.cavity * math.sqrt(k_true)))
    res = calibrate_cavity_noise(sc, target, bracket=(0.5, 4.0), rel_tol=0.005)
    assert res.converged
    assert res.linewidth == pytest.approx(target, rel=0.005)
    assert res.noise_scale == pytest.approx(k_true, rel=0.1)
    assert "converged               yes" in res.report()


def test_bracket_must_straddle(quick):
    sc, _ = quick
    with pytest.raises(ValueError, match="straddling"):
        calibrate_cavity_noise(sc, 1e9, bracket=(0.5, 1.0))
