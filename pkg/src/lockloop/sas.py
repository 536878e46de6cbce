"""Saturated-absorption discriminator and the slow cavity-to-atom loop."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lti import PidConfig, TransferFunction, low_pass, make_pid, pure_delay, unity_gain_frequency
from .noise import PsdModel

__all__ = [
    "SasLine",
    "SasConfig",
    "CS_D2_F4_LINES",
    "sas_transmission",
    "sas_background",
    "sas_error",
    "sas_slope",
    "outer_loop_open_tf",
    "LoopSeparationError",
]

TWO_PI = 2.0 * math.pi


class LoopSeparationError(ValueError):
    pass


@dataclass(frozen=True)
class SasLine:
    center: float
    fwhm: float
    depth: float

    def __post_init__(self):
        if not (self.fwhm > 0 and self.depth > 0):
            raise ValueError("SAS line fwhm and depth must be positive")

    def __call__(self, detuning):
        x = (np.asarray(detuning, dtype=float) - self.center) / (self.fwhm / 2)
        return self.depth / (1 + x * x)


# Cs D2 from F=4, detunings relative to F'=5 (Hz).  Crossovers sit halfway
# between their parent lines.  Depths are illustrative, not measured.
CS_D2_F4_LINES = (
    SasLine(0.0, 6e6, 0.05),          # F'=5 (lock line)
    SasLine(-125.5e6, 6e6, 0.08),     # CO 4/5
    SasLine(-226.1e6, 6e6, 0.04),     # CO 3/5
    SasLine(-251.0e6, 6e6, 0.02),     # F'=4
    SasLine(-351.6e6, 6e6, 0.02),     # CO 3/4
    SasLine(-452.2e6, 6e6, 0.01),     # F'=3
)


@dataclass(frozen=True)
class SasConfig:
    """Doppler-broadened absorption with sub-Doppler Lorentzian peaks.

    ``mod_depth`` is the peak frequency excursion (Hz) of the dither used to
    derive the error signal; ``detector_noise`` is the error-point voltage
    noise (V^2/Hz) of the SAS photodetector chain.
    """

    doppler_sigma: float = 159e6
    doppler_center: float = -150e6
    background_depth: float = 0.4
    lines: tuple = CS_D2_F4_LINES
    mod_freq: float = 17e6
    mod_depth: float = 1e6
    demod_phase: float = 0.0
    lockin_bandwidth: float = 1e3
    lock_line_index: int = 0
    detector_noise: PsdModel = field(default_factory=PsdModel)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        if not self.lines:
            raise ValueError("SAS config needs at least one line to lock to")
        if not 0 <= self.lock_line_index < len(self.lines):
            raise ValueError("lock_line_index does not name an existing line")
        if not self.lockin_bandwidth * 10 <= self.mod_freq:
            raise ValueError("lock-in bandwidth must be far below the modulation frequency")
        if sum(l.depth for l in self.lines) >= self.background_depth:
            raise ValueError("sub-Doppler depths must sum below background_depth")

    @property
    def lock_line(self) -> SasLine:
        return self.lines[self.lock_line_index]


def _doppler(cfg, d):
    return np.exp(-0.5 * ((d - cfg.doppler_center) / cfg.doppler_sigma) ** 2)


def _sub_doppler(cfg, d):
    out = np.zeros(np.shape(d))
    for line in cfg.lines:
        out = out + line(d)
    return out


def sas_transmission(cfg: SasConfig, detuning):
    """Probe transmission through the vapour cell, in (0, 1]."""
    d = np.asarray(detuning, dtype=float)
    absorption = _doppler(cfg, d) * (cfg.background_depth - _sub_doppler(cfg, d))
    t = np.exp(-absorption)
    return float(t) if np.ndim(detuning) == 0 else t


def sas_background(cfg: SasConfig, detuning):
    """Doppler-only transmission (the curve with every line removed)."""
    d = np.asarray(detuning, dtype=float)
    t = np.exp(-_doppler(cfg, d) * cfg.background_depth)
    return float(t) if np.ndim(detuning) == 0 else t


def sas_error(cfg: SasConfig, detuning, n_phase=64):
    """First-harmonic demodulated error (V) of the background-free SAS signal.

    The dither ``mod_depth * cos(theta)`` is averaged by brute force over
    ``n_phase`` phases, so large excursions are handled too (with a warning).
    """
    lock = cfg.lock_line
    if cfg.mod_depth >= lock.fwhm:
        warnings.warn("mod_depth >= lock line fwhm: distorted lineshape regime", RuntimeWarning, stacklevel=2)
    d = np.asarray(detuning, dtype=float)
    theta = (np.arange(n_phase) + 0.5) * TWO_PI / n_phase
    shifted = d[..., None] + cfg.mod_depth * np.cos(theta)
    sig = _sub_doppler(cfg, shifted)
    err = 2.0 * np.mean(sig * np.cos(theta - cfg.demod_phase), axis=-1)
    return float(err) if np.ndim(detuning) == 0 else err


def sas_slope(cfg: SasConfig) -> float:
    """dV/dHz of :func:`sas_error` at the lock-line centre."""
    c = cfg.lock_line.center
    h = cfg.lock_line.fwhm * 1e-4
    return (sas_error(cfg, c + h) - sas_error(cfg, c - h)) / (2 * h)


def outer_loop_open_tf(cfg: SasConfig, cavity, pid2: PidConfig, *, actuator: TransferFunction | None = None,
                       delay=0.0, inner_ugf=None) -> TransferFunction:
    """Open-loop gain of the SAS lock.

    slope x lock-in low-pass x PID2 x actuator (cavity PZT unless
    ``actuator`` is given) x ``delay``.  With ``inner_ugf`` set, refuses
    designs whose unity-gain frequency exceeds a tenth of it.
    """
    if actuator is None:
        actuator = cavity.pzt_tf()
    g = abs(sas_slope(cfg)) * low_pass(cfg.lockin_bandwidth) * make_pid(pid2) * actuator * pure_delay(delay)
    if inner_ugf is not None:
        fu = unity_gain_frequency(g)
        if fu > inner_ugf / 10:
            raise LoopSeparationError(
                f"outer unity-gain frequency {fu:.3g} Hz exceeds inner {inner_ugf:.3g} Hz / 10"
            )
    return g
