"""Continuous-time transfer functions, PID controllers and their digital twins.

Poles and zeros are in rad/s, Fourier frequencies in Hz.  A transfer
function is ``gain * prod(s - z) / prod(s - p) * exp(-s * delay)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.optimize import brentq

from .errors import DomainError, SingularPointError
from .noise import TimeSeries

__all__ = [
    "TransferFunction",
    "PidConfig",
    "DigitalFilter",
    "make_pid",
    "bode",
    "discretize",
    "filter_apply",
    "closed_loop_suppression",
    "low_pass",
    "integrator",
    "pure_delay",
    "unity_gain_frequency",
    "phase_margin",
]

TWO_PI = 2.0 * math.pi


def _as_roots(values):
    arr = np.atleast_1d(np.asarray(values, dtype=complex))
    # snap numerically-real roots so conjugate pairing stays exact
    arr = np.where(np.abs(arr.imag) <= 1e-12 * np.maximum(np.abs(arr), 1.0), arr.real + 0j, arr)
    return tuple(arr.tolist())


@dataclass(frozen=True)
class TransferFunction:
    gain: complex = 1.0
    zeros: tuple = ()
    poles: tuple = ()
    delay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "zeros", _as_roots(self.zeros))
        object.__setattr__(self, "poles", _as_roots(self.poles))
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        g = complex(self.gain)
        object.__setattr__(self, "gain", g.real if g.imag == 0 else g)

    # --- evaluation -----------------------------------------------------
    def at_s(self, s):
        s = np.asarray(s, dtype=complex)
        num = np.ones(s.shape, dtype=complex) * self.gain
        for z in self.zeros:
            num = num * (s - z)
        for p in self.poles:
            num = num / (s - p)
        if self.delay:
            num = num * np.exp(-s * self.delay)
        return num

    def response(self, f):
        """Complex response at ``s = j 2 pi f``."""
        return self.at_s(1j * TWO_PI * np.asarray(f, dtype=float))

    __call__ = response

    def phase(self, f):
        """Phase built factor by factor, so cascades add exactly (no wrapping)."""
        w = TWO_PI * np.asarray(f, dtype=float)
        jw = 1j * w
        ph = np.full(w.shape, np.angle(self.gain), dtype=float)
        for z in self.zeros:
            ph = ph + np.angle(jw - z)
        for p in self.poles:
            ph = ph - np.angle(jw - p)
        return ph - w * self.delay

    # --- algebra --------------------------------------------------------
    def __mul__(self, other):
        if isinstance(other, TransferFunction):
            return TransferFunction(
                self.gain * other.gain,
                self.zeros + other.zeros,
                self.poles + other.poles,
                self.delay + other.delay,
            )
        return TransferFunction(self.gain * other, self.zeros, self.poles, self.delay)

    __rmul__ = __mul__

    def __add__(self, other):
        """Parallel connection.  Both branches must carry the same delay."""
        if not isinstance(other, TransferFunction):
            other = TransferFunction(other)
        if not math.isclose(self.delay, other.delay, rel_tol=0, abs_tol=1e-15):
            raise ValueError("parallel branches must share the same delay")
        # work in a scaled variable to keep polynomial coefficients tame
        roots = [abs(r) for r in self.zeros + self.poles + other.zeros + other.poles if abs(r) > 0]
        scale = math.exp(np.mean(np.log(roots))) if roots else 1.0
        n1 = np.poly(np.asarray(self.zeros) / scale) * self.gain * scale ** (len(self.zeros) - len(self.poles))
        n2 = np.poly(np.asarray(other.zeros) / scale) * other.gain * scale ** (len(other.zeros) - len(other.poles))
        d1 = np.poly(np.asarray(self.poles) / scale)
        d2 = np.poly(np.asarray(other.poles) / scale)
        num = np.polyadd(np.polymul(n1, d2), np.polymul(n2, d1))
        num = np.trim_zeros(np.where(np.abs(num) < 1e-14 * np.abs(num).max(), 0, num), "f")
        gain = num[0] * scale ** (len(self.poles) + len(other.poles) - (len(num) - 1))
        zeros = np.roots(num) * scale
        return TransferFunction(gain, tuple(zeros), self.poles + other.poles, self.delay)

    def with_delay(self, delay):
        return TransferFunction(self.gain, self.zeros, self.poles, delay)

    @property
    def is_proper(self):
        return len(self.zeros) <= len(self.poles)

    @property
    def is_stable(self):
        """True when no pole lies in the open right half-plane (integrators allowed)."""
        return all(p.real <= 0 for p in self.poles)

    def corners(self):
        """Magnitudes (rad/s) of all non-zero poles and zeros."""
        return [abs(r) for r in self.zeros + self.poles if abs(r) > 0]


def low_pass(f_c, gain=1.0) -> TransferFunction:
    """One-pole low-pass with DC gain ``gain`` and corner ``f_c`` Hz."""
    w = TWO_PI * f_c
    return TransferFunction(gain * w, (), (-w,))


def integrator(ki) -> TransferFunction:
    return TransferFunction(ki, (), (0.0,))


def pure_delay(tau) -> TransferFunction:
    return TransferFunction(1.0, (), (), tau)


@dataclass(frozen=True)
class PidConfig:
    """PID gains plus the output low-pass and symmetric saturation limit.

    ``kp`` is dimensionless (V/V), ``ki`` in 1/s, ``kd`` in s; corner
    frequencies in Hz.  ``saturation`` is the output limit in volts.
    """

    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    derivative_rolloff: float = 1e7
    output_low_pass: float = 1e7
    saturation: float = math.inf

    def __post_init__(self):
        if not self.output_low_pass > 0:
            raise ValueError("output_low_pass must be positive")
        if self.kd != 0 and not (0 < self.derivative_rolloff < math.inf):
            raise ValueError("derivative path needs a finite rolloff")
        if not self.saturation > 0:
            raise ValueError("saturation limit must be positive")

    def scaled(self, k):
        return PidConfig(self.kp * k, self.ki * k, self.kd * k, self.derivative_rolloff,
                         self.output_low_pass, self.saturation)


def _pid_core(cfg: PidConfig) -> TransferFunction:
    """``kp + ki/s + kd s/(1 + s/wd)`` without the output low-pass."""
    wd = TWO_PI * cfg.derivative_rolloff
    num = np.zeros(1)
    den = np.ones(1)
    if cfg.kd:
        # common denominator s (1 + s/wd) or (1 + s/wd)
        lead = np.array([1.0 / wd, 1.0])
        den = np.polymul(lead, [1.0, 0.0]) if cfg.ki else lead
        num = np.polyadd(num, np.polymul([cfg.kp], den))
        d_term = np.polymul([cfg.kd, 0.0], [1.0, 0.0]) if cfg.ki else np.array([cfg.kd, 0.0])
        num = np.polyadd(num, d_term)
        if cfg.ki:
            num = np.polyadd(num, np.polymul([cfg.ki], lead))
    else:
        if cfg.ki:
            den = np.array([1.0, 0.0])
            num = np.array([cfg.kp, cfg.ki])
        else:
            num = np.array([cfg.kp])
    num = np.trim_zeros(num, "f")
    gain = num[0] / den[0]
    return TransferFunction(gain, tuple(np.roots(num)), tuple(np.roots(den)))


def make_pid(config: PidConfig) -> TransferFunction:
    """Linear PID transfer function cascaded with its output low-pass."""
    if config.kp == 0 and config.ki == 0 and config.kd == 0:
        raise ValueError("PID needs at least one non-zero gain")
    return _pid_core(config) * low_pass(config.output_low_pass)


def _check_freq(f):
    f = np.asarray(f, dtype=float)
    if np.any(~(f > 0)):
        raise DomainError("frequency must be > 0")
    return f


def bode(tf: TransferFunction, f):
    """Magnitude and phase (radians, unwrapped by construction) at ``f`` Hz."""
    f_arr = _check_freq(f)
    mag = np.abs(tf.response(f_arr))
    ph = tf.phase(f_arr)
    if np.ndim(f) == 0:
        return float(mag), float(ph)
    return mag, ph


def closed_loop_suppression(open_loop: TransferFunction, f):
    """``|1 / (1 + G(j 2 pi f))|`` -- the factor a loop applies to in-loop noise."""
    f_arr = _check_freq(f)
    g = open_loop.response(f_arr)
    den = np.abs(1.0 + g)
    if np.any(den <= 1e-12 * np.maximum(1.0, np.abs(g))):
        raise SingularPointError("1 + G vanishes at a queried frequency")
    out = 1.0 / den
    return float(out) if np.ndim(f) == 0 else out


def unity_gain_frequency(tf: TransferFunction, f_lo=1e-2, f_hi=1e9, n=4000):
    """Highest frequency where ``|G| = 1``; ``nan`` if there is no crossing."""
    f = np.logspace(math.log10(f_lo), math.log10(f_hi), n)
    m = np.log(np.abs(tf.response(f)))
    idx = np.where((m[:-1] > 0) & (m[1:] <= 0))[0]
    if idx.size == 0:
        return math.nan
    i = idx[-1]
    return brentq(lambda x: math.log(abs(tf.response(x))), f[i], f[i + 1], xtol=1e-9 * f[i])


def phase_margin(tf: TransferFunction, **kw):
    """Phase margin in degrees at the (highest) unity-gain crossing."""
    fu = unity_gain_frequency(tf, **kw)
    if math.isnan(fu):
        return math.nan
    ph = math.degrees(float(np.angle(tf.response(fu))))
    return (ph + 180.0) % 360.0


# --------------------------------------------------------------------------
# discretization


def _group_roots(roots):
    """Split roots into conjugate pairs and real singles."""
    roots = list(roots)
    groups = []
    used = [False] * len(roots)
    for i, r in enumerate(roots):
        if used[i]:
            continue
        used[i] = True
        if r.imag == 0:
            groups.append((r,))
            continue
        # nearest unused conjugate partner
        best, best_d = None, math.inf
        for j in range(len(roots)):
            if not used[j]:
                d = abs(roots[j] - r.conjugate())
                if d < best_d:
                    best, best_d = j, d
        if best is None or best_d > 1e-6 * max(abs(r), 1.0):
            raise ValueError("complex roots must come in conjugate pairs")
        used[best] = True
        groups.append((r, r.conjugate()))
    return groups


def _logmag(r):
    return math.log(abs(r)) if abs(r) > 0 else -1e9


def _sections(tf):
    pole_groups = sorted(_group_roots(tf.poles), key=lambda g: _logmag(g[0]))
    zero_groups = sorted(_group_roots(tf.zeros), key=lambda g: _logmag(g[0]))
    sections = [[list(pg), []] for pg in pole_groups]
    # fill sections in ascending-corner order so each zero lands with the
    # nearest pole above it (a PI zero pairs with its integrator)
    for zg in zero_groups:
        target = next((s for s in sections if len(s[1]) + len(zg) <= len(s[0])), None)
        if target is None:
            raise ValueError("could not pair zeros with poles; transfer function not proper")
        target[1].extend(zg)
    if not sections and zero_groups:
        raise ValueError("improper transfer function")
    return sections


class DigitalFilter:
    """Biquad cascade plus an integer-sample delay, with streaming state.

    A :class:`DigitalFilter` owns mutable state; use one instance per stream.
    """

    def __init__(self, sos, sample_rate, delay_samples=0, warnings=()):
        self.sos = np.atleast_2d(np.asarray(sos, dtype=float))
        self.sample_rate = float(sample_rate)
        self.delay_samples = int(delay_samples)
        self.warnings = tuple(warnings)
        self.reset()

    def reset(self):
        self.zi = np.zeros((self.sos.shape[0], 2))
        self._delay_buf = np.zeros(self.delay_samples)

    @property
    def poles(self):
        return np.concatenate([np.roots(s[3:]) for s in self.sos]) if self.sos.size else np.array([])

    @property
    def is_stable(self):
        return bool(np.all(np.abs(self.poles) < 1.0))

    def response(self, f):
        """Complex frequency response at ``f`` Hz (``z = exp(j 2 pi f / fs)``)."""
        f = np.asarray(f, dtype=float)
        w = TWO_PI * f / self.sample_rate
        z1 = np.exp(-1j * w)
        h = np.ones(f.shape, dtype=complex)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h = h * (b0 + b1 * z1 + b2 * z1**2) / (a0 + a1 * z1 + a2 * z1**2)
        return h * z1**self.delay_samples

    def process(self, x):
        x = np.asarray(x, dtype=float)
        y, self.zi = signal.sosfilt(self.sos, x, zi=self.zi)
        d = self.delay_samples
        if d == 0:
            return y
        joined = np.concatenate([self._delay_buf, y])
        self._delay_buf = joined[joined.size - d:]
        return joined[: y.size]


def _bilinear_section(poles, zeros, fs):
    corners = [abs(p) for p in poles if abs(p) > 0] or [abs(z) for z in zeros if abs(z) > 0]
    if corners:
        w0 = max(corners)
        fs_eff = w0 / (2.0 * math.tan(w0 / (2.0 * fs)))
    else:
        fs_eff = fs
    zd, pd, kd = signal.bilinear_zpk(np.asarray(zeros, complex), np.asarray(poles, complex), 1.0, fs_eff)
    b = np.real(kd * np.poly(zd))
    a = np.real(np.poly(pd))
    b = np.concatenate([b, np.zeros(3 - b.size)])
    a = np.concatenate([a, np.zeros(3 - a.size)])
    return np.concatenate([b, a])


def discretize(tf: TransferFunction, sample_rate) -> DigitalFilter:
    """Bilinear transform, each section prewarped at its own corner.

    The delay is rounded to the nearest whole number of samples.  A filter
    whose corners exceed ``sample_rate / 4`` is still returned, with a note
    in ``.warnings``.
    """
    if not tf.is_proper:
        raise ValueError("cannot discretize an improper transfer function")
    unstable = [p for p in tf.poles if p.real > 0]
    if unstable:
        raise ValueError(f"refusing to discretize unstable transfer function: poles {unstable}")
    notes = []
    top = max(tf.corners(), default=0.0) / TWO_PI
    if top * 4 > sample_rate:
        notes.append(f"sample rate {sample_rate:g} Hz below 4x highest corner {top:g} Hz")
    secs = _sections(tf)
    if not secs:
        sos = np.array([[float(np.real(tf.gain)), 0, 0, 1, 0, 0]])
    else:
        sos = np.array([_bilinear_section(p, z, sample_rate) for p, z in secs])
        sos[0, :3] *= float(np.real(tf.gain))
    return DigitalFilter(sos, sample_rate, int(round(tf.delay * sample_rate)), notes)


def filter_apply(filt: DigitalFilter, x: TimeSeries) -> TimeSeries:
    """Run ``x`` through ``filt``; state carries over between calls."""
    if not math.isclose(filt.sample_rate, x.sample_rate, rel_tol=1e-12):
        raise ValueError(f"sample rate mismatch: filter {filt.sample_rate} Hz, series {x.sample_rate} Hz")
    return TimeSeries(x.sample_rate, filt.process(x.samples), x.unit, dict(x.meta))
