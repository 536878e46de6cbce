import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockloop.errors import DomainError, SingularPointError
from lockloop.lti import (
    PidConfig,
    TransferFunction,
    bode,
    closed_loop_suppression,
    discretize,
    filter_apply,
    integrator,
    low_pass,
    make_pid,
    phase_margin,
    pure_delay,
    unity_gain_frequency,
)
from lockloop.noise import TimeSeries, Unit, synthesize, white

TWO_PI = 2 * math.pi


# -- make_pid ------------------------------------------------------------------

def test_integrator_unity_gain_at_ki_over_two_pi():
    pid = make_pid(PidConfig(0.0, TWO_PI * 1e4, 0.0, output_low_pass=1e12))
    assert abs(pid.response(1e4)) == pytest.approx(1.0, rel=1e-6)


def test_proportional_gain_in_db():
    pid = make_pid(PidConfig(10.0, 0.0, 0.0, output_low_pass=1e12))
    mag, _ = bode(pid, 10.0)
    assert 20 * np.log10(mag) == pytest.approx(20.0, abs=1e-6)


def test_pi_corner_phase():
    # kp = ki / (2 pi 1 kHz): phase of kp + ki/s is -45 deg at the corner
    pid = make_pid(PidConfig(1.0, TWO_PI * 1e3, 0.0, output_low_pass=1e12))
    _, ph = bode(pid, 1e3)
    assert math.degrees(ph) == pytest.approx(-45.0, abs=0.01)


def test_pid_rejects_all_zero_gains():
    with pytest.raises(ValueError):
        make_pid(PidConfig(0.0, 0.0, 0.0))


def test_pid_rejects_nonpositive_low_pass():
    with pytest.raises(ValueError):
        PidConfig(1.0, 0.0, 0.0, output_low_pass=0.0)


def test_derivative_rolloff_keeps_pid_proper():
    pid = make_pid(PidConfig(1.0, 1.0, 1e-3, derivative_rolloff=1e5))
    assert pid.is_proper
    # derivative arm bounded at high frequency by kd * 2 pi f_roll
    assert abs(pid.response(1e9)) < 1e-3 * TWO_PI * 1e5 * 1.01


# -- bode --------------------------------------------------------------------

def test_low_pass_at_corner():
    mag, ph = bode(low_pass(1e6), 1e6)
    assert mag == pytest.approx(1 / math.sqrt(2), rel=1e-9)
    assert ph == pytest.approx(-math.pi / 4, abs=1e-9)


def test_pure_delay_phase():
    mag, ph = bode(pure_delay(100e-9), 2.5e6)
    assert mag == pytest.approx(1.0)
    assert ph == pytest.approx(-math.pi / 2, abs=1e-12)


def test_bode_rejects_nonpositive_frequency():
    with pytest.raises(DomainError):
        bode(low_pass(1.0), 0.0)


def test_delay_phase_is_unwrapped():
    _, ph = bode(pure_delay(1e-6), np.array([1e5, 1e6, 5e6]))
    assert np.allclose(ph, -TWO_PI * np.array([1e5, 1e6, 5e6]) * 1e-6)


def test_improper_transfer_function_rejected():
    tf = TransferFunction(1.0, zeros=[-1.0, -2.0], poles=[-3.0])
    assert not tf.is_proper
    with pytest.raises(ValueError):
        discretize(tf, 1e6)


freqs = st.floats(1.0, 1e7)
corners = st.floats(10.0, 1e7)


@given(corners, corners, st.floats(0, 1e-6), freqs)
def test_bode_of_cascade(fa, fb, tau, f):
    a, b = low_pass(fa, 3.0), low_pass(fb).with_delay(tau)
    ma, pa = bode(a, f)
    mb, pb = bode(b, f)
    m, p = bode(a * b, f)
    assert m == pytest.approx(ma * mb, rel=1e-9)
    assert p == pytest.approx(pa + pb, abs=1e-9)


@given(corners, st.floats(1e-3, 1e3), freqs)
def test_parallel_sum_response(fc, k, f):
    a, b = low_pass(fc, k), integrator(fc)
    assert (a + b).response(f) == pytest.approx(a.response(f) + b.response(f), rel=1e-9)


# -- closed loop -------------------------------------------------------------

def test_suppression_minus_40_db():
    # |G| = 100 and -90 deg at 1 kHz: pure integrator
    g = integrator(TWO_PI * 1e3 * 100)
    assert 20 * np.log10(closed_loop_suppression(g, 1e3)) == pytest.approx(-40.0, abs=0.01)


def test_suppression_tends_to_one():
    g = integrator(TWO_PI * 1e3) * low_pass(1e4)
    assert closed_loop_suppression(g, 1e9) == pytest.approx(1.0, abs=1e-6)


def test_singular_point_reported():
    g = TransferFunction(-1.0, (), ())
    with pytest.raises(SingularPointError):
        closed_loop_suppression(g, 1e3)


def test_ugf_and_margin_of_integrator_with_delay():
    ki = TWO_PI * 1e5
    g = integrator(ki).with_delay(1e-6)
    assert unity_gain_frequency(g) == pytest.approx(1e5, rel=1e-3)
    # 90 deg minus delay phase at the UGF
    expected = 90.0 - math.degrees(TWO_PI * 1e5 * 1e-6)
    assert phase_margin(g) == pytest.approx(expected, abs=0.2)


# -- discretize ----------------------------------------------------------------

def test_low_pass_step_settles_to_dc_gain():
    filt = discretize(low_pass(1e3), 1e6)
    y = filt.process(np.ones(20000))
    assert y[-1] == pytest.approx(1.0, abs=1e-6)


def test_integrator_ramp_per_sample():
    ki, fs = 1e3, 1e6
    filt = discretize(integrator(ki), fs)
    y = filt.process(np.ones(100))
    assert np.allclose(np.diff(y[10:]), ki / fs, rtol=1e-9)


def test_discrete_response_matches_continuous():
    fs = 60e6
    tf = make_pid(PidConfig(0.01, 2e4, 0.0, output_low_pass=12e6))
    filt = discretize(tf, fs)
    f100 = fs / 100
    assert abs(20 * np.log10(abs(filt.response(f100) / tf.response(f100)))) < 0.1
    f = np.logspace(2, np.log10(fs / 8), 200)
    hd, hc = filt.response(f), tf.response(f)
    assert np.max(np.abs(20 * np.log10(np.abs(hd / hc)))) < 0.5
    assert np.max(np.abs(np.degrees(np.angle(hd / hc)))) < 5.0


def test_discretize_refuses_unstable():
    with pytest.raises(ValueError):
        discretize(TransferFunction(1.0, (), (TWO_PI * 1e3,)), 1e6)


def test_discretize_warns_on_high_corner():
    filt = discretize(low_pass(4e5), 1e6)
    assert filt.warnings and filt.is_stable
    assert not discretize(low_pass(1e3), 1e6).warnings


def test_discrete_poles_inside_unit_circle():
    filt = discretize(low_pass(1e3) * low_pass(3e4, 2.0), 1e6)
    assert np.all(np.abs(filt.poles) < 1)


# -- filter_apply --------------------------------------------------------------

def test_zero_in_zero_out():
    out = filter_apply(discretize(low_pass(1e3), 1e6), TimeSeries(1e6, np.zeros(256)))
    assert not np.any(out.samples)


def test_two_sample_delay_shifts_impulse():
    filt = discretize(pure_delay(2e-6), 1e6)
    x = np.zeros(16)
    x[3] = 1.0
    y = filter_apply(filt, TimeSeries(1e6, x)).samples
    assert np.argmax(y) == 5 and y[5] == pytest.approx(1.0)


def test_low_pass_noise_bandwidth():
    fs, fc = 1e6, 1e3
    x = synthesize(white(1.0), fs, 2**21, 4)
    y = filter_apply(discretize(low_pass(fc), fs), x)
    # single-pole ENBW is pi fc / 2
    expected = (math.pi * fc / 2) / (fs / 2)
    assert np.var(y.samples) / np.var(x.samples) == pytest.approx(expected, rel=0.03)


def test_unit_tag_preserved():
    x = TimeSeries(1e3, np.ones(8), Unit.VOLTS)
    assert filter_apply(discretize(low_pass(10.0), 1e3), x).unit is Unit.VOLTS


def test_sample_rate_mismatch_rejected():
    with pytest.raises(ValueError):
        filter_apply(discretize(low_pass(10.0), 1e3), TimeSeries(2e3, np.ones(8)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 300), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_chunked_processing_equals_single_shot(chunks, seed):
    tf = make_pid(PidConfig(0.5, 2e3, 0.0, output_low_pass=5e4)).with_delay(3e-6)
    x = np.random.default_rng(seed).standard_normal(sum(chunks))
    whole = discretize(tf, 1e6).process(x)
    filt = discretize(tf, 1e6)
    parts, i = [], 0
    for c in chunks:
        parts.append(filt.process(x[i:i + c]))
        i += c
    assert np.allclose(np.concatenate(parts), whole, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e2, 1e5), st.floats(1e-3, 1e3))
def test_reset_restores_initial_state(fc, k):
    filt = discretize(low_pass(fc, k), 1e6)
    x = np.linspace(-1, 1, 200)
    a = filt.process(x)
    filt.reset()
    assert np.array_equal(filt.process(x), a)
