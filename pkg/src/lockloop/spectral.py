"""Spectral estimation, beat-note synthesis and linewidth extraction.

Notes
-----
Both PSDs and beat spectra use a Hann window.  Long records are processed
in chunks of whole Welch segments so memory stays bounded; the result is
the same average :func:`scipy.signal.welch` would give on the full record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import FitConvergenceError, NoPeakError
from .noise import TimeSeries

__all__ = [
    "SpectrumSeries",
    "LineshapeFit",
    "welch_psd",
    "beat_spectrum",
    "rbw_segment_len",
    "fit_lineshape",
    "lineshape",
    "beta_line_linewidth",
    "half_power_width",
    "band_average",
]

HANN_ENBW = 1.5  # equivalent noise bandwidth of the Hann window, in bins
BETA = 8.0 * math.log(2.0) / math.pi**2
_CHUNK_SEGMENTS = 64


@dataclass(frozen=True)
class SpectrumSeries:
    """A spectrum on a strictly increasing grid.

    ``kind`` is ``"psd"`` (one-sided density, unit^2/Hz) or ``"beat_power"``
    (two-sided, normalised to unit total power, grid in offset Hz).
    """

    frequencies: np.ndarray
    values: np.ndarray
    kind: str
    averaging: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if f.shape != v.shape or f.ndim != 1:
            raise ValueError("frequencies and values must be 1-D and the same length")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("spectrum values must be non-negative")
        if self.kind not in ("psd", "beat_power"):
            raise ValueError("kind must be 'psd' or 'beat_power'")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def in_band(self, f_lo, f_hi):
        m = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        return self.frequencies[m], self.values[m]


def _chunked_welch(x, fs, seg, noverlap, onesided, scaling, detrend):
    """Segment-averaged periodogram, equal to ``signal.welch`` on all of ``x``."""
    step = seg - noverlap
    n_seg = 1 + (x.size - seg) // step
    acc = None
    done = 0
    while done < n_seg:
        g = min(_CHUNK_SEGMENTS, n_seg - done)
        start = done * step
        chunk = x[start:start + (g - 1) * step + seg]
        f, p = signal.welch(chunk, fs=fs, window="hann", nperseg=seg, noverlap=noverlap,
                            return_onesided=onesided, scaling=scaling, detrend=detrend)
        acc = p * g if acc is None else acc + p * g
        done += g
    return f, acc / n_seg, n_seg


def welch_psd(x: TimeSeries, segment_len: int, overlap=0.5, window="hann", detrend="linear") -> SpectrumSeries:
    """One-sided Welch PSD with Hann window, DC bin dropped.

    Each segment has its least-squares line removed by default: for steep
    red spectra (f^-4 drift) a mean-only detrend lets power from below the
    segment resolution leak into the lowest tens of bins.  Pass
    ``detrend="constant"`` for mean removal only.

    Raises ``ValueError`` for ``segment_len < 8``, segments longer than the
    series, overlap outside [0, 1) or a window other than Hann.
    """
    if window != "hann":
        raise ValueError("only the Hann window is supported")
    seg = int(segment_len)
    if seg < 8:
        raise ValueError("segment_len must be at least 8")
    if seg > len(x):
        raise ValueError(f"segment_len {seg} exceeds series length {len(x)}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    noverlap = int(round(seg * overlap))
    if detrend not in ("linear", "constant"):
        raise ValueError("detrend must be 'linear' or 'constant'")
    f, p, n_seg = _chunked_welch(np.asarray(x.samples, dtype=float), x.sample_rate, seg, noverlap, True, "density",
                                 detrend)
    return SpectrumSeries(f[1:], p[1:], "psd", n_seg,
                          {"segment_len": seg, "overlap": overlap, "detrend": detrend, "unit": str(x.unit.value)})


def rbw_segment_len(sample_rate, rbw) -> int:
    """Hann segment length whose noise bandwidth equals ``rbw``."""
    return int(round(HANN_ENBW * sample_rate / rbw))


def beat_spectrum(freq_noise: TimeSeries, reference_noise: TimeSeries | None = None, rbw=5e3,
                  overlap=0.5) -> SpectrumSeries:
    """Power spectrum of a unit-amplitude field carrying the frequency noise.

    The phase is ``2 pi cumsum(nu) / fs`` (minus the reference's phase when
    given).  Segments are Hann-windowed with noise bandwidth ``rbw``; the
    averaged spectrum is normalised to unit total power.
    """
    fs = freq_noise.sample_rate
    duration = freq_noise.duration
    if rbw < 2.0 / duration:
        raise ValueError(f"rbw {rbw:g} Hz below 2/duration = {2.0 / duration:g} Hz")
    nu = np.asarray(freq_noise.samples, dtype=float)
    if reference_noise is not None:
        if len(reference_noise) != len(freq_noise) or reference_noise.sample_rate != fs:
            raise ValueError("reference series must match length and sample rate")
        nu = nu - reference_noise.samples
    seg = rbw_segment_len(fs, rbw)
    if seg > nu.size:
        raise ValueError(f"rbw {rbw:g} Hz needs {seg} samples per segment; series has {nu.size}")
    phase = np.cumsum(nu) * (2.0 * math.pi / fs)
    noverlap = int(round(seg * overlap))
    step = seg - noverlap
    n_seg = 1 + (nu.size - seg) // step
    acc = np.zeros(seg)
    done = 0
    win = signal.get_window("hann", seg)
    while done < n_seg:
        g = min(_CHUNK_SEGMENTS, n_seg - done)
        start = done * step
        field_chunk = np.exp(1j * phase[start:start + (g - 1) * step + seg])
        _, p = signal.welch(field_chunk, fs=fs, window=win, nperseg=seg, noverlap=noverlap,
                            return_onesided=False, scaling="spectrum", detrend=False)
        acc += p * g
        done += g
    f = np.fft.fftshift(np.fft.fftfreq(seg, 1.0 / fs))
    p = np.fft.fftshift(acc)
    p = p / p.sum()
    return SpectrumSeries(f, p, "beat_power", n_seg, {"rbw_hz": HANN_ENBW * fs / seg, "segment_len": seg})


# --------------------------------------------------------------------------
# lineshape fits


@dataclass(frozen=True)
class LineshapeFit:
    """Least-squares lineshape on log power.

    ``residual_rms`` is the RMS misfit in dB over the fit window.  ``valid``
    is False only for a best-so-far result attached to a convergence error.
    """

    model: str
    center: float
    fwhm: float
    amplitude: float
    residual_rms: float
    window: tuple
    valid: bool = True

    def report(self) -> str:
        return (f"model = {self.model}\ncenter_hz = {self.center:.6g}\n"
                f"fwhm_hz = {self.fwhm:.6g}\nresidual_rms = {self.residual_rms:.6g}\n")


def lineshape(model, f, center, fwhm, amplitude):
    """Peak-``amplitude`` Gaussian or Lorentzian of the given FWHM."""
    x = (np.asarray(f, dtype=float) - center) / fwhm
    if model == "gaussian":
        return amplitude * np.exp(-4.0 * math.log(2.0) * x * x)
    if model == "lorentzian":
        return amplitude / (1.0 + 4.0 * x * x)
    raise ValueError("model must be 'gaussian' or 'lorentzian'")


def _auto_window(f, p, i_peak, drop_db=20.0):
    """Contiguous region around the peak down to ``drop_db`` below it."""
    thr = p[i_peak] * 10 ** (-drop_db / 10)
    lo = i_peak
    while lo > 0 and p[lo - 1] >= thr:
        lo -= 1
    hi = i_peak
    while hi < p.size - 1 and p[hi + 1] >= thr:
        hi += 1
    return f[lo], f[hi]


def fit_lineshape(spectrum: SpectrumSeries, model: str, window=None, max_nfev=2000) -> LineshapeFit:
    """Fit ``model`` to the beat spectrum on a dB scale.

    ``window`` is ``(f_lo, f_hi)`` in offset Hz, a half-width (symmetric
    about the peak), or ``None`` for the region within 20 dB of the peak.
    """
    if spectrum.kind != "beat_power":
        raise ValueError("fit_lineshape needs a beat_power spectrum")
    if model not in ("gaussian", "lorentzian"):
        raise ValueError("model must be 'gaussian' or 'lorentzian'")
    f, p = spectrum.frequencies, spectrum.values
    i_peak = int(np.argmax(p))
    floor = float(np.median(p))
    if not p[i_peak] > 3.0 * floor:
        raise NoPeakError("no peak above 3x the median floor")
    if window is None:
        lo, hi = _auto_window(f, p, i_peak)
    elif np.ndim(window) == 0:
        lo, hi = f[i_peak] - float(window), f[i_peak] + float(window)
    else:
        lo, hi = map(float, window)
    m = (f >= lo) & (f <= hi) & (p > 0)
    if m.sum() < 4:
        # resolution-limited line: widen to the neighbouring bins
        m = np.zeros(f.size, bool)
        m[max(i_peak - 3, 0):i_peak + 4] = True
        m &= p > 0
    ff, y = f[m], 10 * np.log10(p[m])
    df = spectrum.resolution
    half = p[i_peak] / 2
    w0 = max(df * float(np.sum(p >= half)), df)
    scale = max(w0, df)

    def resid(theta):
        c, logw, a_db = theta
        w = math.exp(logw) * scale
        return 10 * np.log10(lineshape(model, ff, c, w, 1.0) + 1e-300) + a_db - y

    x0 = np.array([f[i_peak], 0.0, y.max()])
    sol = optimize.least_squares(resid, x0, method="lm", max_nfev=max_nfev, x_scale=[df, 1.0, 1.0])
    c, logw, a_db = sol.x
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    fit = LineshapeFit(model, float(c), float(math.exp(logw) * scale), float(10 ** (a_db / 10)), rms,
                       (float(ff[0]), float(ff[-1])))
    if not sol.success or not np.isfinite(rms):
        best = LineshapeFit(fit.model, fit.center, fit.fwhm, fit.amplitude, fit.residual_rms, fit.window, False)
        raise FitConvergenceError(f"{model} fit did not converge: {sol.message}", best)
    return fit


def half_power_width(spectrum: SpectrumSeries) -> float:
    """Model-free FWHM: outermost half-power crossings, linearly interpolated."""
    f, p = spectrum.frequencies, spectrum.values
    i = int(np.argmax(p))
    half = p[i] / 2
    idx = np.where(p >= half)[0]
    lo, hi = idx[0], idx[-1]
    f_lo = f[lo] if lo == 0 else np.interp(half, [p[lo - 1], p[lo]], [f[lo - 1], f[lo]])
    f_hi = f[hi] if hi == f.size - 1 else np.interp(half, [p[hi + 1], p[hi]], [f[hi + 1], f[hi]])
    return float(f_hi - f_lo)


# --------------------------------------------------------------------------
# beta separation line


def beta_line_linewidth(psd: SpectrumSeries, obs_time: float):
    """Linewidth from a frequency-noise PSD by the beta separation line.

    Integrates ``S(f)`` where it exceeds ``8 ln2 f / pi^2``, from
    ``1/obs_time`` up (or the first grid point if the PSD starts higher),
    and returns ``(fwhm, area, flagged)`` with ``fwhm = sqrt(8 ln2 A)``.
    If the PSD never crosses the line, the white-noise floor estimate
    ``pi * median(S)`` is returned with ``flagged = True``.
    """
    if psd.kind != "psd":
        raise ValueError("beta_line_linewidth needs a PSD")
    if not obs_time > 0:
        raise ValueError("obs_time must be positive")
    f, s = psd.frequencies, psd.values
    m = f >= 1.0 / obs_time
    f, s = f[m], s[m]
    if f.size < 2:
        raise ValueError("PSD has fewer than two points above 1/obs_time")
    above = s > BETA * f
    if not np.any(above):
        return math.pi * float(np.median(s)), 0.0, True
    # bin-width weights so isolated crossings are counted correctly
    edges = np.concatenate([[f[0]], 0.5 * (f[1:] + f[:-1]), [f[-1]]])
    area = float(np.sum(s[above] * np.diff(edges)[above]))
    return math.sqrt(8.0 * math.log(2.0) * area), area, False


def band_average(f, values, n_per_decade=10, f_lo=None, f_hi=None):
    """Average ``values`` in logarithmic bands.

    Returns ``(centers, means, counts)`` for bands holding at least one
    point; centers are geometric band centres.
    """
    f = np.asarray(f, dtype=float)
    v = np.asarray(values, dtype=float)
    f_lo = f[f > 0].min() if f_lo is None else f_lo
    f_hi = f.max() if f_hi is None else f_hi
    n_bands = max(1, int(math.ceil(n_per_decade * math.log10(f_hi / f_lo))))
    edges = np.logspace(math.log10(f_lo), math.log10(f_hi), n_bands + 1)
    idx = np.digitize(f, edges) - 1
    keep = (idx >= 0) & (idx < n_bands) & (f >= f_lo) & (f <= f_hi)
    counts = np.bincount(idx[keep], minlength=n_bands)
    sums = np.bincount(idx[keep], weights=v[keep], minlength=n_bands)
    ok = counts > 0
    centers = np.sqrt(edges[:-1] * edges[1:])
    return centers[ok], sums[ok] / counts[ok], counts[ok]
