"""Calibration of the default scenario against the two headline numbers.

The free parameters are not measured quantities; they are tuned so the
model reproduces (a) the in-loop suppression of the tight cavity lock at
1 kHz and (b) the cascade beat-note width.  (a) depends only on the servo
design and is reported.  (b) is reached by bisection on a single scale
factor applied to the cavity-noise PSD.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass

import numpy as np

from .cascade import Scenario, simulate, synthesize_noise
from .lti import closed_loop_suppression
from .spectral import beat_spectrum, fit_lineshape

__all__ = [
    "CalibrationResult",
    "suppression_db",
    "cascade_linewidth",
    "calibrate_cavity_noise",
    "with_noise_scale",
]


def suppression_db(scenario: Scenario, f=1e3, loose_bandwidth=300.0) -> float:
    """Tight-lock vs loose-lock suppression of the relative noise at ``f`` (dB).

    ``|1 + G_tight| / |1 + G_loose|`` from the inner open-loop gains, with
    the loose lock from :meth:`Scenario.loosened`.
    """
    tight = closed_loop_suppression(scenario.inner_open_loop(), f)
    loose = closed_loop_suppression(scenario.loosened(loose_bandwidth).inner_open_loop(), f)
    return float(20 * np.log10(loose / tight))


def cascade_linewidth(scenario: Scenario, noise=None, rbw=5e3) -> float:
    """Gaussian-fit FWHM (Hz) of the cascade beat note for one realization."""
    sc = scenario.with_lock("cascade")
    res = simulate(sc, noise)
    beat = beat_spectrum(res.absolute_freq_noise, rbw=rbw)
    return fit_lineshape(beat, "gaussian").fwhm


@dataclass(frozen=True)
class CalibrationResult:
    noise_scale: float
    linewidth: float
    target: float
    suppression_db: float
    history: tuple
    converged: bool

    def report(self) -> str:
        lines = [
            f"cavity noise_scale      {self.noise_scale:.6g}",
            f"cascade linewidth       {self.linewidth / 1e3:.2f} kHz (target {self.target / 1e3:.1f} kHz)",
            f"suppression at 1 kHz    {self.suppression_db:.1f} dB",
            f"bisection steps         {len(self.history)}",
            f"converged               {'yes' if self.converged else 'no'}",
        ]
        return "\n".join(lines)


def calibrate_cavity_noise(scenario: Scenario, target=53e3, *, bracket=(0.25, 4.0), rel_tol=0.01,
                           max_iter=16, rbw=5e3, loose_bandwidth=300.0) -> CalibrationResult:
    """Bisect (in log scale) the cavity-noise scale until the cascade width hits ``target``.

    The scale multiplies the cavity PSD already in ``scenario``.  One noise
    realization is drawn and its cavity stream rescaled by ``sqrt(scale)``,
    so every step sees the same random numbers and the width is a smooth
    function of the scale.  ``bracket`` must straddle the target.
    """
    sc = scenario.with_lock("cascade")
    base = synthesize_noise(sc)

    def width(k):
        noise = dataclasses.replace(base, cavity=base.cavity * math.sqrt(k))
        return cascade_linewidth(sc, noise, rbw)

    lo, hi = float(bracket[0]), float(bracket[1])
    w_lo, w_hi = width(lo), width(hi)
    history = [(lo, w_lo), (hi, w_hi)]
    if not (w_lo - target) * (w_hi - target) <= 0:
        raise ValueError(
            f"bracket [{lo:g}, {hi:g}] gives widths {w_lo:.4g}..{w_hi:.4g} Hz, not straddling {target:g} Hz"
        )
    k, w = (lo, w_lo) if abs(w_lo - target) < abs(w_hi - target) else (hi, w_hi)
    converged = abs(w - target) <= rel_tol * target
    for _ in range(max_iter):
        if converged:
            break
        k = math.sqrt(lo * hi)
        w = width(k)
        history.append((k, w))
        if (w - target) * (w_lo - target) > 0:
            lo, w_lo = k, w
        else:
            hi, w_hi = k, w
        converged = abs(w - target) <= rel_tol * target
    return CalibrationResult(k, w, float(target), suppression_db(scenario, 1e3, loose_bandwidth),
                             tuple(history), converged)


_SCALE_LINE = re.compile(r"^(\s+noise_scale:\s*)([^\s#]+)(.*)$")


def with_noise_scale(text: str, factor: float) -> str:
    """Config source with ``cavity.noise_scale`` multiplied by ``factor``.

    Edits the one line in place so comments and layout survive.
    """
    out, in_cavity, done = [], False, False
    for line in text.splitlines(keepends=True):
        if re.match(r"^\S", line):
            in_cavity = line.startswith("cavity:")
        m = _SCALE_LINE.match(line.rstrip("\n"))
        if in_cavity and m and not done:
            new = float(m.group(2)) * factor
            line = f"{m.group(1)}{new:.6g}{m.group(3)}\n"
            done = True
        out.append(line)
    if not done:
        raise ValueError("config has no cavity.noise_scale line to update")
    return "".join(out)
