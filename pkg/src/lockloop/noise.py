"""Power-law frequency-noise models and Gaussian noise synthesis.

All densities are one-sided: the variance of a process equals the integral
of its PSD over positive Fourier frequencies.  A two-sided density is half
the one-sided value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import fft as sp_fft

from .errors import DomainError

__all__ = [
    "Unit",
    "TimeSeries",
    "PsdSegment",
    "PsdModel",
    "TabulatedPsd",
    "FunctionPsd",
    "psd_eval",
    "compose",
    "synthesize",
    "iter_synthesize",
    "white",
    "power_law",
    "noise_stream_seed",
]

DEFAULT_BLOCK_LEN = 2**25


class Unit(str, enum.Enum):
    HZ_DEVIATION = "hz_deviation"
    VOLTS = "volts"
    TRANSMISSION = "transmission"
    RADIANS = "radians"


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real signal."""

    sample_rate: float
    samples: np.ndarray
    unit: Unit = Unit.HZ_DEVIATION
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a non-empty 1-d sequence")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def slice(self, start=0, stop=None) -> "TimeSeries":
        return TimeSeries(self.sample_rate, self.samples[start:stop], self.unit, dict(self.meta))


@dataclass(frozen=True)
class PsdSegment:
    """Power law ``amplitude_ref * (f / f_ref) ** exponent`` on ``[f_lo, f_hi]``."""

    f_lo: float
    f_hi: float
    exponent: float
    amplitude_ref: float
    f_ref: float

    def __post_init__(self):
        if not (0 <= self.f_lo < self.f_hi):
            raise ValueError(f"segment needs 0 <= f_lo < f_hi, got [{self.f_lo}, {self.f_hi}]")
        if not (self.f_lo <= self.f_ref <= self.f_hi) or self.f_ref <= 0:
            raise ValueError("f_ref must lie inside the segment and be positive")
        if not self.amplitude_ref > 0:
            raise ValueError("amplitude_ref must be positive")

    def covers(self, f):
        return (f >= self.f_lo) & (f <= self.f_hi)

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        inside = self.covers(f)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = self.amplitude_ref * (f / self.f_ref) ** self.exponent
        return np.where(inside, val, 0.0)

    def to_dict(self):
        return {
            "f_lo": self.f_lo,
            "f_hi": self.f_hi,
            "exponent": self.exponent,
            "amplitude_ref": self.amplitude_ref,
            "f_ref": self.f_ref,
        }


class _PsdBase:
    """Shared behaviour: callable on arrays, ``+`` composes, scaling by ``*``."""

    def __add__(self, other):
        return compose([self, other])

    def __mul__(self, k):
        return FunctionPsd(lambda f, m=self, k=float(k): k * m(f), label=f"{k}*{self!r}")

    __rmul__ = __mul__

    def covered(self, f) -> np.ndarray:  # pragma: no cover - overridden
        return np.ones_like(np.asarray(f, dtype=float), dtype=bool)


@dataclass(frozen=True)
class PsdModel(_PsdBase):
    """Piecewise power-law one-sided PSD in Hz^2/Hz (or V^2/Hz).

    ``segments`` must not overlap.  ``parts`` holds further models added on
    top; it is how :func:`compose` represents sums of overlapping laws.
    """

    segments: tuple = ()
    floor: float = 0.0
    parts: tuple = ()

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.floor < 0:
            raise ValueError("floor must be non-negative")
        ordered = sorted(segs, key=lambda s: s.f_lo)
        for a, b in zip(ordered, ordered[1:]):
            if b.f_lo < a.f_hi:
                raise ValueError("segments overlap; use compose() to add models")

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        out = np.full(f.shape, float(self.floor))
        # first covering segment wins at a shared boundary
        claimed = np.zeros(f.shape, dtype=bool)
        for seg in sorted(self.segments, key=lambda s: s.f_lo):
            mask = seg.covers(f) & ~claimed
            out = out + np.where(mask, seg(f), 0.0)
            claimed |= mask
        for p in self.parts:
            out = out + p(f)
        return out

    def covered(self, f):
        f = np.asarray(f, dtype=float)
        if self.floor > 0:
            return np.ones(f.shape, dtype=bool)
        mask = np.zeros(f.shape, dtype=bool)
        for seg in self.segments:
            mask |= seg.covers(f)
        for p in self.parts:
            mask |= p.covered(f)
        return mask

    @property
    def is_zero(self) -> bool:
        return self.floor == 0 and not self.segments and all(
            getattr(p, "is_zero", False) for p in self.parts
        )

    def to_dict(self):
        d = {"segments": [s.to_dict() for s in self.segments], "floor": self.floor}
        if self.parts:
            d["parts"] = [p.to_dict() for p in self.parts]
        return d

    @classmethod
    def from_dict(cls, d):
        segs = tuple(PsdSegment(**{k: float(v) for k, v in s.items()}) for s in d.get("segments", ()))
        parts = tuple(cls.from_dict(p) for p in d.get("parts", ()))
        return cls(segs, float(d.get("floor", 0.0)), parts)


@dataclass(frozen=True)
class TabulatedPsd(_PsdBase):
    """PSD given on a grid; log-log interpolation inside, zero outside."""

    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if f.shape != v.shape or f.ndim != 1 or f.size < 2:
            raise ValueError("frequencies and values must be equal-length 1-d arrays")
        if np.any(np.diff(f) <= 0) or f[0] <= 0:
            raise ValueError("frequencies must be positive and strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", np.maximum(v, 0.0))

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        if self.values.min() > 0:
            with np.errstate(divide="ignore"):
                logf = np.log(np.where(f > 0, f, self.frequencies[0]))
            out = np.exp(np.interp(logf, np.log(self.frequencies), np.log(self.values)))
        else:
            out = np.interp(f, self.frequencies, self.values)
        return np.where(self.covered(f), out, 0.0)

    def covered(self, f):
        f = np.asarray(f, dtype=float)
        return (f >= self.frequencies[0]) & (f <= self.frequencies[-1])


@dataclass(frozen=True, eq=False)
class FunctionPsd(_PsdBase):
    """Wraps an arbitrary vectorised ``f -> density`` function."""

    func: Callable
    label: str = "function"

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        return np.asarray(self.func(f), dtype=float) * np.ones(f.shape)

    def covered(self, f):
        return np.ones(np.shape(f), dtype=bool)

    def __repr__(self):
        return f"FunctionPsd({self.label})"


def white(level: float) -> PsdModel:
    return PsdModel(floor=float(level))


def power_law(amplitude_ref, exponent, f_ref=1.0, f_lo=0.0, f_hi=np.inf) -> PsdModel:
    """Single-segment model, by default covering every positive frequency.

    The segment is widened if needed so that it contains ``f_ref``.
    """
    f_lo = min(f_lo, f_ref)
    f_hi = max(f_hi, f_ref)
    return PsdModel((PsdSegment(f_lo, f_hi, exponent, amplitude_ref, f_ref),))


def psd_eval(model, f, return_defined=False):
    """Evaluate a PSD model at Fourier frequency ``f`` (scalar or array).

    Raises :class:`DomainError` for ``f <= 0``.  Where no segment covers
    ``f`` and there is no floor the density is 0; pass ``return_defined=True``
    to also receive the boolean coverage flag.
    """
    f_arr = np.asarray(f, dtype=float)
    if np.any(~(f_arr > 0)):
        raise DomainError("PSD is only defined for f > 0")
    val = model(f_arr)
    if np.ndim(f) == 0:
        val = float(val)
    if return_defined:
        cov = model.covered(f_arr)
        return val, (bool(cov) if np.ndim(f) == 0 else cov)
    return val


def compose(models: Sequence) -> PsdModel:
    """Sum of PSD models (independent processes add in power)."""
    models = list(models)
    if not models:
        raise ValueError("compose() needs at least one model")
    if len(models) == 1 and isinstance(models[0], PsdModel):
        return models[0]
    return PsdModel(parts=tuple(models))


def noise_stream_seed(seed: int, stream: int) -> np.random.SeedSequence:
    """Independent, reproducible child seed for a named noise stream."""
    return np.random.SeedSequence([int(seed), int(stream)])


def _rng(seed):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def _shaped_single(model, sample_rate, n_out, rng):
    # shape on a fast FFT length and keep the first n_out samples
    n = sp_fft.next_fast_len(n_out, real=True)
    freqs = sp_fft.rfftfreq(n, d=1.0 / sample_rate)
    psd = np.zeros(freqs.size)
    psd[1:] = model(freqs[1:])
    if not np.any(psd > 0):
        return np.zeros(n_out)
    # E|X_k|^2 = S_k * fs * n / 2 gives a one-sided periodogram equal to S_k
    scale = np.sqrt(psd * sample_rate * n / 2.0)
    spec = scale * (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)) / np.sqrt(2)
    if n % 2 == 0:
        spec[-1] = scale[-1] * rng.standard_normal()
    spec[0] = 0.0
    return sp_fft.irfft(spec, n)[:n_out].copy()


def _fir_taps(model, sample_rate, block_len):
    freqs = sp_fft.rfftfreq(block_len, d=1.0 / sample_rate)
    psd = np.zeros(freqs.size)
    psd[1:] = model(freqs[1:])
    # |H|^2 * (2/fs) = S for unit-variance white input
    h = sp_fft.irfft(np.sqrt(psd * sample_rate / 2.0), block_len)
    return np.roll(h, block_len // 2)


def iter_synthesize(model, sample_rate, n, seed, block_len=DEFAULT_BLOCK_LEN) -> Iterator[np.ndarray]:
    """Yield a synthesized series in chunks of at most ``block_len`` samples.

    If ``n <= block_len`` the whole series is one frequency-domain shaped
    realisation (exact spectral control down to ``sample_rate / n``).
    Longer series are produced by overlap-add convolution of white noise with
    a ``block_len``-tap shaping filter, so memory stays bounded; spectral
    detail below ``sample_rate / block_len`` is then flattened.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not sample_rate > 0:
        raise ValueError("sample_rate must be positive")
    rng = _rng(seed)
    if n <= block_len:
        yield _shaped_single(model, sample_rate, n, rng)
        return
    taps = _fir_taps(model, sample_rate, block_len)
    if not np.any(taps):
        remaining = n
        while remaining > 0:
            m = min(block_len, remaining)
            yield np.zeros(m)
            remaining -= m
        return
    nfft = 2 * block_len
    taps_f = sp_fft.rfft(taps, nfft)
    tail = np.zeros(block_len)
    produced = -block_len  # first block is warm-up
    while produced < n:
        w = rng.standard_normal(block_len)
        y = sp_fft.irfft(sp_fft.rfft(w, nfft) * taps_f, nfft)
        out = y[:block_len] + tail
        tail = y[block_len:].copy()
        if produced >= 0:
            yield out[: min(block_len, n - produced)]
        produced += block_len


def synthesize(model, sample_rate, n, seed, block_len=DEFAULT_BLOCK_LEN, unit=Unit.HZ_DEVIATION) -> TimeSeries:
    """Gaussian series whose one-sided PSD is ``model``.

    Identical ``(model, sample_rate, n, seed, block_len)`` give bit-identical
    output.  ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    n = int(n)
    chunks = list(iter_synthesize(model, sample_rate, n, seed, block_len))
    samples = chunks[0] if len(chunks) == 1 else np.concatenate(chunks)
    return TimeSeries(float(sample_rate), samples, unit)
