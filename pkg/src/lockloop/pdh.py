"""Pound-Drever-Hall discriminator against the low-cost cavity.

The static error curve is the textbook lossless-cavity PDH expression; the
loop itself only ever uses the linearized slope.  All error voltages assume
unit optical power and a 1 V/W detector, so they are relative numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import jv

from .errors import DomainError
from .lti import PidConfig, TransferFunction, low_pass, make_pid, pure_delay
from .noise import FunctionPsd, PsdModel

__all__ = [
    "CavityModel",
    "PdhConfig",
    "pdh_error_curve",
    "discriminator_slope",
    "cavity_response",
    "inner_loop_open_tf",
    "loose_loop_tf",
    "pd_monitor_psd",
    "MONITOR_STATES",
]

TWO_PI = 2.0 * math.pi
MONITOR_STATES = ("amp_noise_only", "intensity_noise", "loose_lock", "tight_lock")


@dataclass(frozen=True)
class CavityModel:
    """Low-cost Fabry-Perot cavity.  ``fsr`` follows from finesse x linewidth."""

    linewidth: float = 1e6
    finesse: float = 1500.0
    pzt_gain: float = 1e6
    pzt_bandwidth: float = 2e3
    noise: PsdModel = field(default_factory=PsdModel)

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ValueError("cavity linewidth must be positive")
        if not self.finesse > 1:
            raise ValueError("finesse must exceed 1")

    @property
    def fsr(self) -> float:
        return self.finesse * self.linewidth

    @property
    def mirror_r(self) -> float:
        """Amplitude reflectivity giving the configured finesse."""
        F = self.finesse
        return (-math.pi + math.sqrt(math.pi**2 + 4 * F * F)) / (2 * F)

    def pzt_tf(self) -> TransferFunction:
        """Cavity-mode shift per PZT volt (Hz/V)."""
        return low_pass(self.pzt_bandwidth, self.pzt_gain)


@dataclass(frozen=True)
class PdhConfig:
    """PDH modulation/demodulation settings and the noise seen at PD1.

    ``carrier_power``/``sideband_power`` default to the Bessel weights of
    ``mod_depth``.  ``detector_noise`` and ``intensity_noise`` are in V^2/Hz
    at the mixer output.  ``loop_delay`` is the total fast-path latency.
    """

    mod_freq: float = 7e6
    mod_depth: float = 1.08
    demod_phase: float = 0.0
    carrier_power: float | None = None
    sideband_power: float | None = None
    slope_override: float | None = None
    detector_noise: PsdModel = field(default_factory=PsdModel)
    intensity_noise: PsdModel = field(default_factory=PsdModel)
    loop_delay: float = 50e-9

    def __post_init__(self):
        if self.carrier_power is None:
            object.__setattr__(self, "carrier_power", float(jv(0, self.mod_depth) ** 2))
        if self.sideband_power is None:
            object.__setattr__(self, "sideband_power", float(jv(1, self.mod_depth) ** 2))
        if self.carrier_power < 0 or self.sideband_power < 0:
            raise ValueError("optical powers must be non-negative")
        if self.carrier_power + 2 * self.sideband_power > 1 + 1e-12:
            raise ValueError("carrier_power + 2 * sideband_power must not exceed 1")
        if self.loop_delay < 0:
            raise ValueError("loop_delay must be non-negative")


def _reflection(cavity: CavityModel, f):
    r = cavity.mirror_r
    e = np.exp(1j * TWO_PI * np.asarray(f, dtype=float) / cavity.fsr)
    return r * (e - 1) / (1 - r * r * e)


def _reflection_deriv(cavity: CavityModel, f):
    """dF/df for the lossless symmetric cavity."""
    r = cavity.mirror_r
    e = np.exp(1j * TWO_PI * np.asarray(f, dtype=float) / cavity.fsr)
    return 1j * r * e * (1 - r * r) / (1 - r * r * e) ** 2 * (TWO_PI / cavity.fsr)


def _check_cfg(cfg: PdhConfig, cavity: CavityModel):
    if cfg.mod_freq <= 2 * cavity.linewidth:
        raise ValueError(
            f"mod_freq {cfg.mod_freq:g} Hz must exceed twice the cavity linewidth ({2 * cavity.linewidth:g} Hz)"
        )


def pdh_error_curve(cfg: PdhConfig, cavity: CavityModel, detuning):
    """Demodulated PDH error (V) versus laser-cavity detuning (Hz)."""
    _check_cfg(cfg, cavity)
    d = np.asarray(detuning, dtype=float)
    if np.any(np.abs(d) >= cavity.fsr / 2):
        raise DomainError("detuning must stay within half a free spectral range")
    om = cfg.mod_freq
    F0 = _reflection(cavity, d)
    x = F0 * np.conj(_reflection(cavity, d + om)) - np.conj(F0) * _reflection(cavity, d - om)
    amp = 2.0 * math.sqrt(cfg.carrier_power * cfg.sideband_power)
    err = amp * np.imag(x * np.exp(-1j * cfg.demod_phase))
    return float(err) if np.ndim(detuning) == 0 else err


def discriminator_slope(cfg: PdhConfig, cavity: CavityModel) -> float:
    """Central slope dV/dHz of the error curve at zero detuning."""
    if cfg.slope_override is not None:
        return float(cfg.slope_override)
    _check_cfg(cfg, cavity)
    if cfg.carrier_power == 0 or cfg.sideband_power == 0:
        raise ValueError("zero carrier or sideband power gives a zero discriminator slope")
    om = cfg.mod_freq
    F0, dF0 = _reflection(cavity, 0.0), _reflection_deriv(cavity, 0.0)
    Fp, dFp = _reflection(cavity, om), _reflection_deriv(cavity, om)
    Fm, dFm = _reflection(cavity, -om), _reflection_deriv(cavity, -om)
    dx = dF0 * np.conj(Fp) + F0 * np.conj(dFp) - np.conj(dF0) * Fm - np.conj(F0) * dFm
    amp = 2.0 * math.sqrt(cfg.carrier_power * cfg.sideband_power)
    return float(amp * np.imag(dx * np.exp(-1j * cfg.demod_phase)))


def cavity_response(cavity: CavityModel) -> TransferFunction:
    """Frequency-discrimination response of the cavity: one pole at HWHM."""
    return low_pass(cavity.linewidth / 2)


def inner_loop_open_tf(cfg: PdhConfig, cavity: CavityModel, pid: PidConfig,
                       fast_path: TransferFunction, aux_pid: PidConfig | None = None,
                       slow_path: TransferFunction | None = None) -> TransferFunction:
    """Open-loop gain of the PDH lock (dimensionless).

    slope x cavity pole x [PID1 x current-port actuator (+ aux PID x laser
    PZT)] x loop delay.  The servo polarity is chosen for negative feedback,
    so the magnitude of the slope is used.
    """
    ctrl = make_pid(pid) * fast_path
    if aux_pid is not None:
        if slow_path is None:
            raise ValueError("aux_pid needs a slow_path actuator")
        ctrl = ctrl + make_pid(aux_pid) * slow_path
    slope = abs(discriminator_slope(cfg, cavity))
    return slope * cavity_response(cavity) * ctrl * pure_delay(cfg.loop_delay)


def loose_loop_tf(cfg: PdhConfig, cavity: CavityModel, bandwidth=300.0) -> TransferFunction:
    """Integrator-only loop with unity gain at ``bandwidth`` (the loose lock)."""
    if not 0 < bandwidth <= 1e3:
        raise ValueError("loose-lock bandwidth must lie in (0, 1 kHz]")
    slope = abs(discriminator_slope(cfg, cavity))
    k = TWO_PI * bandwidth / slope
    return slope * cavity_response(cavity) * TransferFunction(k, (), (0.0,)) * pure_delay(cfg.loop_delay)


def pd_monitor_psd(cfg: PdhConfig, state: str, *, cavity: CavityModel, relative_noise=None,
                   tight_loop: TransferFunction | None = None,
                   loose_loop: TransferFunction | None = None):
    """PSD (V^2/Hz) seen at the PD1 monitor tap for a given loop state.

    ``relative_noise`` is the free-running laser-minus-cavity frequency
    noise.  Floors are added unsuppressed; the frequency-noise term carries
    the closed-loop factor for the locked states.
    """
    if state not in MONITOR_STATES:
        raise ValueError(f"unknown monitor state {state!r}; valid: {', '.join(MONITOR_STATES)}")
    if state == "amp_noise_only":
        return cfg.detector_noise
    floors = cfg.detector_noise + cfg.intensity_noise
    if state == "intensity_noise":
        return floors
    if relative_noise is None:
        raise ValueError(f"state {state!r} needs relative_noise")
    loop = tight_loop if state == "tight_lock" else loose_loop
    if loop is None:
        loop = loose_loop_tf(cfg, cavity) if state == "loose_lock" else None
    if loop is None:
        raise ValueError("tight_lock needs tight_loop")
    slope = discriminator_slope(cfg, cavity)
    cav = cavity_response(cavity)

    def monitor(f, loop=loop):
        conv = slope**2 * np.abs(cav.response(f)) ** 2
        return floors(f) + conv * relative_noise(f) / np.abs(1 + loop.response(f)) ** 2

    return FunctionPsd(monitor, label=f"pd_monitor[{state}]")
