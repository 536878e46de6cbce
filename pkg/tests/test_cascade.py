import dataclasses

import numpy as np
import pytest

from lockloop.cascade import (
    LOCK_CONFIGS,
    Rates,
    analytic_residual_psd,
    residual_series,
    run_comparison,
    simulate,
)
from lockloop.errors import DomainError, LoopInstabilityError
from lockloop.lti import PidConfig, bode, closed_loop_suppression, low_pass, unity_gain_frequency
from lockloop.noise import PsdModel, psd_eval
from lockloop.pdh import discriminator_slope
from lockloop.spectral import welch_psd

from conftest import band_db


def _silent(sc):
    return dataclasses.replace(
        sc, laser_noise=PsdModel(), ule_noise=PsdModel(),
        cavity=dataclasses.replace(sc.cavity, noise=PsdModel()),
        pdh=dataclasses.replace(sc.pdh, detector_noise=PsdModel(), intensity_noise=PsdModel()),
        sas=dataclasses.replace(sc.sas, detector_noise=PsdModel()))


# -- scenario ---------------------------------------------------------------------

def test_rates_must_divide():
    with pytest.raises(ValueError):
        Rates(60e6, 70e3)


def test_unknown_lock_config_lists_valid(default_scenario):
    with pytest.raises(ValueError, match="cascade"):
        default_scenario.with_lock("ule_only")


def test_actuator_delay_rejected(default_scenario):
    with pytest.raises(ValueError):
        dataclasses.replace(default_scenario, fast_actuator=low_pass(1e6).with_delay(1e-7))


def test_fast_rate_must_cover_inner_loop(default_scenario):
    slow = dataclasses.replace(default_scenario, rates=Rates(4e6, 100e3))
    with pytest.raises(ValueError, match="4x inner"):
        slow.validate()


# -- time domain ------------------------------------------------------------------

@pytest.mark.parametrize("lock", LOCK_CONFIGS)
def test_zero_noise_gives_zero_outputs(short_scenario, lock):
    res = simulate(_silent(short_scenario).with_lock(lock))
    for x in (res.absolute_freq_noise, res.relative_freq_noise, res.cavity_mode_noise):
        assert not np.any(x.samples)


@pytest.fixture(scope="module")
def short_cascade(short_scenario):
    return simulate(short_scenario.with_lock("cascade"))


def test_relative_is_absolute_minus_cavity(short_cascade):
    r = short_cascade
    diff = r.absolute_freq_noise.samples - r.cavity_mode_noise.samples
    assert np.allclose(r.relative_freq_noise.samples, diff, rtol=0, atol=1e-9)


def test_deterministic(short_scenario, short_cascade):
    again = simulate(short_scenario.with_lock("cascade"))
    assert np.array_equal(again.absolute_freq_noise.samples, short_cascade.absolute_freq_noise.samples)


def test_no_saturation_by_default(short_cascade):
    assert short_cascade.saturation_events == 0


def test_outer_loop_dead_time(short_scenario):
    sc = dataclasses.replace(short_scenario, settle=0.0)
    runs = residual_series(sc, ("lc_only", "cascade"))
    a, b = runs["lc_only"].samples, runs["cascade"].samples
    block = sc.rates.block
    # the first SAS correction is held from the second block on
    assert np.array_equal(a[:block], b[:block])
    assert not np.array_equal(a[block:2 * block], b[block:2 * block])


def test_free_run_follows_laser_model(short_scenario):
    res = simulate(short_scenario.with_lock("free_run"))
    x = res.absolute_freq_noise
    p = welch_psd(x, 2**14)
    assert p.averaging >= 50
    lo, hi = 10 * p.resolution, x.sample_rate / 8
    assert band_db(p.frequencies, p.values, psd_eval(short_scenario.laser_noise, p.frequencies), lo, hi) < 1.0


def test_inner_instability_named(short_scenario):
    sc = dataclasses.replace(short_scenario, pid1=short_scenario.pid1.scaled(5.0), lock_config="lc_only")
    sc.validate()
    with pytest.raises(LoopInstabilityError) as err:
        simulate(sc)
    assert err.value.loop == "inner"


def test_outer_instability_named(short_scenario):
    sc = dataclasses.replace(short_scenario, pid2=short_scenario.pid2.scaled(1e4), lock_config="sas_only")
    with pytest.raises(LoopInstabilityError) as err:
        simulate(sc)
    assert err.value.loop == "outer"


# -- analytic oracle ------------------------------------------------------------

def test_transparent_far_above_ugfs(default_scenario):
    for lock in LOCK_CONFIGS[:4]:
        sc = default_scenario.with_lock(lock)
        v = analytic_residual_psd(sc, 50e6)
        assert abs(10 * np.log10(v / psd_eval(sc.laser_noise, 50e6))) < 3


def test_cascade_vs_lc_only_is_outer_suppression(default_scenario):
    g2 = default_scenario.outer_open_loop()
    for f in (100.0, 1e3):
        lc = analytic_residual_psd(default_scenario.with_lock("lc_only"), f)
        cas = analytic_residual_psd(default_scenario.with_lock("cascade"), f)
        expected = 20 * np.log10(closed_loop_suppression(g2, f))
        assert 10 * np.log10(cas / lc) == pytest.approx(expected, abs=0.1)


def test_lc_only_copies_cavity_at_low_frequency(default_scenario):
    sc = default_scenario.with_lock("lc_only")
    f = np.array([10.0, 100.0, 1e3])
    assert np.all(np.abs(10 * np.log10(analytic_residual_psd(sc, f) / sc.cavity.noise(f))) < 1.0)


def test_cascade_low_frequency_is_suppressed_cavity(default_scenario):
    sc = default_scenario.with_lock("cascade")
    f = np.array([1.0, 10.0])
    cav = sc.cavity.noise(f) * closed_loop_suppression(sc.outer_open_loop(), f) ** 2
    assert np.all(np.abs(10 * np.log10(analytic_residual_psd(sc, f) / cav)) < 1.0)


def test_detector_noise_limit(default_scenario):
    sc = _silent(default_scenario)
    s_v = 1e-16  # V^2/Hz at the PDH error point
    sc = dataclasses.replace(sc, pdh=dataclasses.replace(sc.pdh, detector_noise=PsdModel(floor=s_v)),
                             lock_config="lc_only")
    slope = discriminator_slope(sc.pdh, sc.cavity)
    assert analytic_residual_psd(sc, 100.0) == pytest.approx(s_v / slope**2, rel=0.01)


def test_outer_loop_separation(default_scenario):
    fu2 = unity_gain_frequency(default_scenario.outer_open_loop())
    f = np.logspace(np.log10(10 * fu2), 7, 60)
    lc = analytic_residual_psd(default_scenario.with_lock("lc_only"), f)
    cas = analytic_residual_psd(default_scenario.with_lock("cascade"), f)
    assert np.max(np.abs(10 * np.log10(cas / lc))) < 1.0


def test_analytic_argument_errors(default_scenario):
    with pytest.raises(DomainError):
        analytic_residual_psd(default_scenario, 0.0)
    with pytest.raises(ValueError):
        analytic_residual_psd(default_scenario, 1.0, quantity="phase")


# -- outer loop at desk-scale rates ------------------------------------------------

def test_outer_residual_matches_suppressed_cavity(default_scenario):
    """Cavity-mode residual = S_cavity |1/(1+G_outer)|^2 over 10 Hz..1 kHz.

    Inner loop slowed to 25 kHz so a 20 s record fits at 1 MHz.
    """
    sc = default_scenario
    cav = dataclasses.replace(sc.cavity, linewidth=200e3)
    desk = dataclasses.replace(
        sc, cavity=cav, rates=Rates(1e6, 10e3), duration=20.0, settle=0.5,
        pdh=dataclasses.replace(sc.pdh, detector_noise=PsdModel(), loop_delay=0.0),
        sas=dataclasses.replace(sc.sas, detector_noise=PsdModel()),
        pid1=PidConfig(ki=1.0, output_low_pass=200e3), pid1_aux=None,
        fast_actuator=low_pass(200e3, 1e8), pid2=dataclasses.replace(sc.pid2, output_low_pass=2e3))
    ki = 1.0 / abs(desk.inner_open_loop().response(25e3))
    desk = dataclasses.replace(desk, pid1=PidConfig(ki=ki, output_low_pass=200e3))
    res = simulate(desk)
    p = welch_psd(res.cavity_mode_noise, 2**20)
    f = p.frequencies
    oracle = desk.cavity.noise(f) * closed_loop_suppression(desk.outer_open_loop(), f) ** 2
    assert band_db(f, p.values, oracle, 10.0, 1e3) < 1.0


# -- comparison ------------------------------------------------------------------

def test_comparison_rejects_mismatched_noise(short_scenario):
    other = dataclasses.replace(short_scenario, laser_noise=PsdModel(floor=1.0))
    with pytest.raises(ValueError, match="laser_noise"):
        run_comparison([short_scenario.with_lock("cascade"), other.with_lock("lc_only")])


def test_comparison_rejects_duplicate_locks(short_scenario):
    with pytest.raises(ValueError):
        run_comparison([short_scenario, short_scenario])


def test_comparison_entries(default_comparison):
    assert set(default_comparison) == {"free_run", "sas_only", "lc_only", "cascade"}
    for entry in default_comparison.values():
        assert entry.saturation_events == 0
        assert set(entry.fits) == {"gaussian", "lorentzian"}
        assert entry.beat.values.sum() == pytest.approx(1.0, abs=1e-3)
