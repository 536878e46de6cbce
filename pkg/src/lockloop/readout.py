"""Probe frequency noise seen through a Rydberg-EIT transmission readout.

The atoms are treated as a static transmission surface ``T(dp, dc)``: the
readout band (<= 100 kHz) is far below the EIT bandwidth, so the response
is adiabatic.  All detunings, Rabi frequencies and decay rates are in Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import fft as sp_fft
from scipy import signal

from .noise import PsdModel, TabulatedPsd, TimeSeries, Unit, synthesize
from .spectral import SpectrumSeries, welch_psd

__all__ = [
    "EitModel",
    "OperatingPoint",
    "ReadoutSpectrum",
    "eit_transmission",
    "transmission_slope",
    "simulate_readout",
    "readout_noise_psd",
    "readout_from_series",
    "readout_grid",
    "run_fig3_comparison",
    "Fig3Table",
]

MODES = ("resonant", "detuned")
FIG3_LOCKS = ("sas_only", "ule_reference", "cascade")


@dataclass(frozen=True)
class EitModel:
    """Weak-probe three-level ladder (ground, intermediate, Rydberg).

    ``doppler_sigma`` > 0 averages over a Gaussian velocity class
    distribution (probe Doppler width); ``wavelength_ratio`` is
    lambda_probe / lambda_coupling for the counter-propagating coupling beam.
    ``intensity_noise_floor`` is the transmission noise (1/Hz) with the
    laser frequency noise absent.
    """

    probe_rabi: float = 0.5e6
    coupling_rabi: float = 4.0e6
    gamma_e: float = 5.2e6
    gamma_r: float = 0.1e6
    optical_depth: float = 1.0
    doppler_sigma: float = 0.0
    wavelength_ratio: float = 852.3 / 509.5
    intensity_noise_floor: PsdModel = field(default_factory=lambda: PsdModel(floor=1e-14))
    doppler_nodes: int = 64

    def __post_init__(self):
        if not (self.gamma_e > 0 and self.gamma_r > 0):
            raise ValueError("decay rates must be positive")
        if self.coupling_rabi < 0 or self.probe_rabi < 0 or self.optical_depth < 0:
            raise ValueError("Rabi frequencies and optical depth must be non-negative")
        if self.probe_rabi > 0.5 * self.gamma_e:
            raise ValueError("probe_rabi must stay well below gamma_e (weak-probe model)")
        if self.doppler_sigma < 0:
            raise ValueError("doppler_sigma must be non-negative")


@dataclass(frozen=True)
class OperatingPoint:
    probe_detuning: float = 0.0
    coupling_detuning: float = 0.0
    mode: str | None = None

    def __post_init__(self):
        derived = "resonant" if self.coupling_detuning == 0 else "detuned"
        if self.mode is None:
            object.__setattr__(self, "mode", derived)
        elif self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        elif self.mode != derived:
            raise ValueError(f"mode {self.mode!r} inconsistent with coupling_detuning {self.coupling_detuning:g} Hz")

    @classmethod
    def resonant(cls) -> "OperatingPoint":
        return cls(0.0, 0.0)

    @classmethod
    def detuned(cls, coupling_detuning=2.4e6) -> "OperatingPoint":
        return cls(0.0, float(coupling_detuning))


def _absorption(model: EitModel, dp, dc):
    """Re of the normalised probe susceptibility (1 on a bare resonance)."""
    ge, gr = model.gamma_e / 2, model.gamma_r / 2
    omc2 = model.coupling_rabi**2 / 4
    return np.real(ge / (ge - 1j * dp + omc2 / (gr - 1j * (dp + dc))))


def eit_transmission(model: EitModel, probe_detuning, coupling_detuning=0.0):
    """Probe transmission ``exp(-OD * Re chi)`` in (0, 1]."""
    dp = np.asarray(probe_detuning, dtype=float)
    dc = np.asarray(coupling_detuning, dtype=float)
    if model.doppler_sigma > 0:
        x, w = hermegauss(model.doppler_nodes)
        w = w / w.sum()
        shift = model.doppler_sigma * x
        a = np.zeros(np.broadcast(dp, dc).shape)
        for s, wi in zip(shift, w):
            a = a + wi * _absorption(model, dp - s, dc + model.wavelength_ratio * s)
    else:
        a = _absorption(model, dp, dc)
    t = np.exp(-model.optical_depth * a)
    return float(t) if np.ndim(t) == 0 else t


def transmission_slope(model: EitModel, op: OperatingPoint, step=None) -> float:
    """dT / d(probe detuning) in 1/Hz by central difference.

    ``step`` defaults to ``gamma_e / 1000``.
    """
    h = model.gamma_e / 1000 if step is None else float(step)
    scale = max(abs(op.probe_detuning), model.gamma_e)
    if not h > 1e-9 * scale:
        raise ValueError(f"finite-difference step {h:g} Hz is below numeric precision at this operating point")
    tp = eit_transmission(model, op.probe_detuning + h, op.coupling_detuning)
    tm = eit_transmission(model, op.probe_detuning - h, op.coupling_detuning)
    return (tp - tm) / (2 * h)


def simulate_readout(freq_noise: TimeSeries, model: EitModel, op: OperatingPoint,
                     coupling_noise: TimeSeries | None = None) -> TimeSeries:
    """Transmission series for a probe carrying ``freq_noise``.

    Excursions beyond ``10 * gamma_e`` are clipped; the count is in
    ``meta["clipped"]``.  ``coupling_noise`` (optional) adds to the coupling
    detuning; leaving it out treats the coupling laser as noiseless.
    """
    nu = np.asarray(freq_noise.samples, dtype=float)
    lim = 10 * model.gamma_e
    clipped = int(np.count_nonzero(np.abs(nu) > lim))
    nu = np.clip(nu, -lim, lim)
    dc = op.coupling_detuning
    if coupling_noise is not None:
        if len(coupling_noise) != len(freq_noise):
            raise ValueError("coupling noise must match the probe noise length")
        dc = dc + np.clip(coupling_noise.samples, -lim, lim)
    t = eit_transmission(model, op.probe_detuning + nu, dc)
    meta = dict(freq_noise.meta, clipped=clipped, mode=op.mode)
    return TimeSeries(freq_noise.sample_rate, np.asarray(t, dtype=float), Unit.TRANSMISSION, meta)


# --------------------------------------------------------------------------
# readout spectra


@dataclass(frozen=True)
class ReadoutSpectrum(SpectrumSeries):
    """Readout PSD (1/Hz, floor included) with the floor it is referenced to."""

    floor: np.ndarray | None = None

    @property
    def db_re_floor(self) -> np.ndarray:
        return 10 * np.log10(self.values / self.floor)

    @property
    def above_floor(self) -> np.ndarray:
        return self.values - self.floor


def readout_grid(sample_rate=2e6, segment_len=2048, band=(10e3, 100e3)):
    """Welch bin centres inside ``band`` for the given resonant-readout settings."""
    f = sp_fft.rfftfreq(segment_len, 1.0 / sample_rate)
    return f[(f >= band[0]) & (f <= band[1])]


def _as_psd(laser_psd):
    if isinstance(laser_psd, SpectrumSeries):
        if laser_psd.kind != "psd":
            raise ValueError("laser spectrum must be a PSD")
        return TabulatedPsd(laser_psd.frequencies, laser_psd.values)
    return laser_psd


def readout_noise_psd(laser_psd, model: EitModel, op: OperatingPoint, *, band=(10e3, 100e3),
                      sample_rate=2e6, n=2**20, segment_len=2048, seed=0) -> ReadoutSpectrum:
    """Transmission-noise PSD of the readout for a probe with ``laser_psd``.

    Detuned: first order, ``slope^2 * S_nu + floor``.  Resonant: the
    first-order term vanishes, so a probe series is synthesized at
    ``sample_rate`` and run through :func:`simulate_readout`; its Welch PSD
    plus the floor is returned.  The laser PSD must cover ``band``.
    """
    psd = _as_psd(laser_psd)
    f = readout_grid(sample_rate, segment_len, band)
    if f.size == 0:
        raise ValueError("readout band contains no frequency bins")
    if not np.all(psd.covered(f)):
        raise ValueError(f"laser PSD does not cover the readout band {band[0]:g}-{band[1]:g} Hz")
    floor = model.intensity_noise_floor(f)
    if op.mode == "detuned":
        s = transmission_slope(model, op)
        total = s * s * psd(f) + floor
        meta = {"mode": op.mode, "method": "first_order", "slope_per_hz": s}
        return ReadoutSpectrum(f, total, "psd", 1, meta, floor)
    x = synthesize(psd, sample_rate, n, seed)
    t = simulate_readout(x, model, op)
    w = welch_psd(t, segment_len)
    keep = (w.frequencies >= band[0]) & (w.frequencies <= band[1])
    meta = {"mode": op.mode, "method": "time_domain", "clipped": t.meta["clipped"]}
    return ReadoutSpectrum(f, w.values[keep] + floor, "psd", w.averaging, meta, floor)


def readout_from_series(freq_noise: TimeSeries, model: EitModel, op: OperatingPoint, *, band=(10e3, 100e3),
                        sample_rate=2e6, segment_len=2048) -> ReadoutSpectrum:
    """Readout PSD for a simulated probe frequency-noise series.

    The series is brought to ``sample_rate`` by polyphase decimation (its
    rate must be an integer multiple), pushed through
    :func:`simulate_readout` at every sample and Welch-averaged.  Both
    operating points are handled in the time domain.
    """
    ratio = freq_noise.sample_rate / sample_rate
    q = int(round(ratio))
    if q < 1 or abs(ratio - q) > 1e-9 * ratio:
        raise ValueError(f"series rate {freq_noise.sample_rate:g} Hz is not a multiple of {sample_rate:g} Hz")
    f = readout_grid(sample_rate, segment_len, band)
    if f.size == 0:
        raise ValueError("readout band contains no frequency bins")
    x = np.asarray(freq_noise.samples, dtype=float)
    if q > 1:
        x = signal.resample_poly(x, 1, q)
    t = simulate_readout(TimeSeries(sample_rate, x, freq_noise.unit, freq_noise.meta), model, op)
    w = welch_psd(t, segment_len)
    keep = (w.frequencies >= band[0]) & (w.frequencies <= band[1])
    floor = model.intensity_noise_floor(f)
    meta = {"mode": op.mode, "method": "time_domain_series", "clipped": t.meta["clipped"]}
    return ReadoutSpectrum(f, w.values[keep] + floor, "psd", w.averaging, meta, floor)


@dataclass(frozen=True)
class Fig3Table:
    """Readout curves keyed by ``(lock_config, mode)`` plus the band summary."""

    curves: dict
    summary: dict
    band: tuple

    def rows(self):
        """``(f_hz, {key: db_re_floor})`` rows on the shared grid."""
        keys = sorted(self.curves)
        f = self.curves[keys[0]].frequencies
        for i, fi in enumerate(f):
            yield fi, {k: float(self.curves[k].db_re_floor[i]) for k in keys}


def run_fig3_comparison(psds: dict, model: EitModel, *, detuning=2.4e6, band=(10e3, 100e3), **kw) -> Fig3Table:
    """Six readout curves (three lock configurations x two operating points).

    ``psds`` maps ``sas_only``, ``ule_reference`` and ``cascade`` to the
    residual probe frequency noise: a PSD (see :func:`readout_noise_psd`)
    or a simulated :class:`TimeSeries` (see :func:`readout_from_series`).
    Every curve uses the same grid and seed.  The summary gives, per operating point and in dB over ``band``,
    the largest |cascade - ule| gap and the max / min of sas_only - cascade.
    """
    missing = [k for k in FIG3_LOCKS if k not in psds]
    if missing:
        raise ValueError(f"missing residual PSD for {', '.join(missing)}")
    ops = {"resonant": OperatingPoint.resonant(), "detuned": OperatingPoint.detuned(detuning)}
    curves = {}
    for lock in FIG3_LOCKS:
        for mode, op in ops.items():
            src = psds[lock]
            if isinstance(src, TimeSeries):
                skw = {k: kw[k] for k in ("sample_rate", "segment_len") if k in kw}
                curves[(lock, mode)] = readout_from_series(src, model, op, band=band, **skw)
            else:
                curves[(lock, mode)] = readout_noise_psd(src, model, op, band=band, **kw)
    summary = {}
    for mode in ops:
        cas = curves[("cascade", mode)].db_re_floor
        ule = curves[("ule_reference", mode)].db_re_floor
        sas = curves[("sas_only", mode)].db_re_floor
        summary[mode] = {
            "cascade_ule_max_abs_gap_db": float(np.max(np.abs(cas - ule))),
            "sas_cascade_max_gap_db": float(np.max(sas - cas)),
            "sas_cascade_min_gap_db": float(np.min(sas - cas)),
        }
    return Fig3Table(curves, summary, tuple(band))
