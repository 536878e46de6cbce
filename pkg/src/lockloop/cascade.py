"""End-to-end simulation of the cavity (PDH) and atomic (SAS) locks.

The inner loop runs at ``rates.fast``; the outer loop sees a boxcar average
of the laser frequency once per ``rates.fast / rates.slow`` samples, runs
its filters at ``rates.slow`` and holds its output for the next block.
:func:`analytic_residual_psd` is the closed-form counterpart.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .errors import LoopInstabilityError, SingularPointError
from .lti import (
    DigitalFilter,
    PidConfig,
    TransferFunction,
    _pid_core,
    discretize,
    low_pass,
    make_pid,
    pure_delay,
    unity_gain_frequency,
)
from .noise import PsdModel, TimeSeries, Unit, compose, noise_stream_seed, synthesize
from .pdh import CavityModel, PdhConfig, cavity_response, discriminator_slope, inner_loop_open_tf
from .sas import LoopSeparationError, SasConfig, sas_slope

__all__ = [
    "LOCK_CONFIGS",
    "Rates",
    "Scenario",
    "SimResult",
    "NoiseRecord",
    "synthesize_noise",
    "simulate",
    "loop_responses",
    "analytic_residual_psd",
    "ComparisonEntry",
    "run_comparison",
    "residual_series",
    "default_segment_len",
]

TWO_PI = 2.0 * math.pi
LOCK_CONFIGS = ("free_run", "sas_only", "lc_only", "cascade", "ule_reference")
QUANTITIES = ("absolute", "relative", "cavity")

# noise stream ids under the scenario seed
STREAM_LASER, STREAM_CAVITY, STREAM_PDH, STREAM_SAS = 0, 1, 2, 3


@dataclass(frozen=True)
class Rates:
    fast: float = 60e6
    slow: float = 100e3

    def __post_init__(self):
        if not (self.fast > 0 and self.slow > 0):
            raise ValueError("rates must be positive")
        ratio = self.fast / self.slow
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ValueError(f"slow rate {self.slow:g} Hz must divide fast rate {self.fast:g} Hz")

    @property
    def block(self) -> int:
        return int(round(self.fast / self.slow))


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run one locking configuration.

    ``duration`` is the analysed length; ``settle`` seconds of lock
    acquisition are simulated first and discarded.  ``slow_actuator`` is the
    laser PZT: it carries ``pid1_aux`` in the cavity lock and PID2 when the
    laser is locked straight to the atoms (``sas_only``).
    """

    laser_noise: PsdModel
    cavity: CavityModel
    pdh: PdhConfig
    sas: SasConfig
    pid1: PidConfig
    pid2: PidConfig
    fast_actuator: TransferFunction
    slow_actuator: TransferFunction
    pid1_aux: PidConfig | None = None
    rates: Rates = field(default_factory=Rates)
    duration: float = 0.25
    settle: float = 0.02
    seed: int = 0
    lock_config: str = "cascade"
    ule_noise: PsdModel = field(default_factory=lambda: PsdModel(floor=1.0))

    def __post_init__(self):
        if self.lock_config not in LOCK_CONFIGS:
            raise ValueError(f"unknown lock_config {self.lock_config!r}; valid: {', '.join(LOCK_CONFIGS)}")
        if not self.duration > 0 or self.settle < 0:
            raise ValueError("duration must be positive and settle non-negative")
        for name in ("fast_actuator", "slow_actuator"):
            if getattr(self, name).delay:
                raise ValueError(f"{name} must not carry a delay; put loop latency in pdh.loop_delay")

    # -- derived pieces ----------------------------------------------------

    def with_lock(self, lock_config: str) -> "Scenario":
        return dataclasses.replace(self, lock_config=lock_config)

    def loosened(self, bandwidth=300.0) -> "Scenario":
        """Same scenario with the cavity lock reduced to a pure integrator
        of unity gain near ``bandwidth`` (the loose-lock reference)."""
        if not 0 < bandwidth <= 1e3:
            raise ValueError("loose-lock bandwidth must lie in (0, 1 kHz]")
        dc = abs(self.fast_actuator.response(1.0))
        ki = TWO_PI * bandwidth / (abs(self.inner_slope) * dc)
        pid = PidConfig(ki=ki, output_low_pass=self.pid1.output_low_pass, saturation=self.pid1.saturation)
        return dataclasses.replace(self, pid1=pid, pid1_aux=None)

    @property
    def inner_on(self) -> bool:
        return self.lock_config in ("lc_only", "cascade")

    @property
    def outer_on(self) -> bool:
        return self.lock_config in ("sas_only", "cascade")

    @property
    def inner_slope(self) -> float:
        return discriminator_slope(self.pdh, self.cavity)

    @property
    def outer_slope(self) -> float:
        return sas_slope(self.sas)

    @property
    def delay_samples(self) -> int:
        """Total inner-loop latency in fast samples (at least one)."""
        return max(1, int(round(self.pdh.loop_delay * self.rates.fast)))

    def inner_open_loop(self) -> TransferFunction:
        aux = self.pid1_aux
        tf = inner_loop_open_tf(self.pdh, self.cavity, self.pid1, self.fast_actuator,
                                aux, self.slow_actuator if aux is not None else None)
        return tf.with_delay(self.delay_samples / self.rates.fast)

    def outer_actuator(self) -> TransferFunction:
        return self.slow_actuator if self.lock_config == "sas_only" else self.cavity.pzt_tf()

    def outer_open_loop(self) -> TransferFunction:
        """SAS loop gain including one slow period of multi-rate latency."""
        g = (abs(self.outer_slope) * low_pass(self.sas.lockin_bandwidth) * make_pid(self.pid2)
             * self.outer_actuator())
        return g * pure_delay(1.0 / self.rates.slow)

    def noise_models(self):
        laser = self.ule_noise if self.lock_config == "ule_reference" else self.laser_noise
        return {
            "laser": laser,
            "cavity": self.cavity.noise,
            "pdh": compose([self.pdh.detector_noise, self.pdh.intensity_noise]),
            "sas": self.sas.detector_noise,
        }

    def validate(self):
        """Check rate and loop-separation conditions for the active loops."""
        fu1 = math.nan
        if self.inner_on:
            fu1 = unity_gain_frequency(self.inner_open_loop())
            if self.rates.fast < 4 * fu1:
                raise ValueError(
                    f"fast rate {self.rates.fast:g} Hz below 4x inner unity-gain frequency {fu1:.3g} Hz"
                )
        if self.outer_on:
            fu2 = unity_gain_frequency(self.outer_open_loop())
            if self.rates.slow < 4 * fu2:
                raise ValueError(f"slow rate {self.rates.slow:g} Hz below 4x outer unity-gain frequency {fu2:.3g} Hz")
            if self.inner_on and fu2 > fu1 / 10:
                raise LoopSeparationError(
                    f"outer unity-gain frequency {fu2:.3g} Hz exceeds inner {fu1:.3g} Hz / 10"
                )


# --------------------------------------------------------------------------
# digital building blocks


_IDENTITY_SOS = np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]])
_ZERO_SOS = np.array([[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class _DigitalPid:
    """PID split for the kernel: P/D biquads + trapezoidal integrator + output low-pass."""

    pd_sos: np.ndarray
    ki_half: float
    lp_sos: np.ndarray
    saturation: float
    fs: float

    @classmethod
    def build(cls, cfg: PidConfig, fs: float) -> "_DigitalPid":
        if cfg.kp or cfg.kd:
            pd = discretize(_pid_core(dataclasses.replace(cfg, ki=0.0)), fs).sos
        else:
            pd = _ZERO_SOS
        lp = discretize(low_pass(cfg.output_low_pass), fs).sos
        return cls(pd, cfg.ki / (2.0 * fs), lp, float(cfg.saturation), fs)

    def response(self, f):
        z1 = np.exp(-1j * TWO_PI * np.asarray(f, dtype=float) / self.fs)
        integ = self.ki_half * (1 + z1) / (1 - z1)
        return (DigitalFilter(self.pd_sos, self.fs).response(f) + integ) * DigitalFilter(self.lp_sos, self.fs).response(f)


def _boxcar(f, block, fs):
    """Normalised causal boxcar (mean of ``block`` samples) at the fast rate."""
    w = TWO_PI * np.asarray(f, dtype=float) / fs
    num = np.sin(w * block / 2)
    den = block * np.sin(w / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        mag = np.where(np.abs(den) > 0, num / den, 1.0)
    return mag * np.exp(-1j * w * (block - 1) / 2)


@dataclass
class _Plant:
    """Discretized filters for one scenario, shared by kernel and analytics."""

    slope1: float
    cav: DigitalFilter
    pid1: _DigitalPid
    act: DigitalFilter
    aux: _DigitalPid | None
    aux_act: DigitalFilter
    slope2: float
    lockin: DigitalFilter
    pid2: _DigitalPid
    out: DigitalFilter

    @classmethod
    def build(cls, sc: Scenario) -> "_Plant":
        fs, fss = sc.rates.fast, sc.rates.slow
        aux = _DigitalPid.build(sc.pid1_aux, fs) if sc.pid1_aux is not None else None
        return cls(
            slope1=abs(sc.inner_slope),
            cav=discretize(cavity_response(sc.cavity), fs),
            pid1=_DigitalPid.build(sc.pid1, fs),
            act=discretize(sc.fast_actuator, fs),
            aux=aux,
            aux_act=discretize(sc.slow_actuator, fs),
            slope2=abs(sc.outer_slope),
            lockin=discretize(low_pass(sc.sas.lockin_bandwidth), fss),
            pid2=_DigitalPid.build(sc.pid2, fss),
            out=discretize(sc.outer_actuator(), fss),
        )


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class NoiseRecord:
    """Pre-synthesized noise inputs (fast rate except ``sas``, at the slow rate)."""

    laser: np.ndarray
    cavity: np.ndarray
    pdh: np.ndarray
    sas: np.ndarray


def _sizes(sc: Scenario):
    n_settle = int(round(sc.settle * sc.rates.fast))
    n = int(round(sc.duration * sc.rates.fast))
    block = sc.rates.block
    n_total = -(-(n_settle + n) // block) * block  # whole slow blocks
    return n_settle, n_total


def synthesize_noise(sc: Scenario) -> NoiseRecord:
    """Draw every noise input of ``sc`` from its own seeded stream."""
    _, n_total = _sizes(sc)
    fs, block = sc.rates.fast, sc.rates.block
    m = sc.noise_models()

    def draw(model, rate, n, stream):
        if not isinstance(model, PsdModel) or not model.is_zero:
            return synthesize(model, rate, n, noise_stream_seed(sc.seed, stream)).samples
        return np.zeros(n)

    return NoiseRecord(
        laser=draw(m["laser"], fs, n_total, STREAM_LASER),
        cavity=draw(m["cavity"], fs, n_total, STREAM_CAVITY),
        pdh=draw(m["pdh"], fs, n_total, STREAM_PDH),
        sas=draw(m["sas"], sc.rates.slow, n_total // block, STREAM_SAS),
    )


@dataclass(frozen=True)
class SimResult:
    """Output series after the settle period.

    ``actuator_records`` are block means at the slow rate; ``outer`` is the
    held SAS correction (on the cavity PZT or, for ``sas_only``, the laser).
    """

    absolute_freq_noise: TimeSeries
    relative_freq_noise: TimeSeries
    cavity_mode_noise: TimeSeries
    actuator_records: dict
    saturation_events: int
    settle_samples: int
    lock_config: str


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if x.size else 0.0


def simulate(scenario: Scenario, noise: NoiseRecord | None = None) -> SimResult:
    """Run the scenario sample by sample.

    Deterministic for a given seed.  Raises :class:`LoopInstabilityError`
    naming the loop if a block's RMS residual exceeds ten times the
    open-loop RMS.
    """
    sc = scenario
    sc.validate()
    if noise is None:
        noise = synthesize_noise(sc)
    n_settle, n_total = _sizes(sc)
    if noise.laser.size != n_total or noise.sas.size != n_total // sc.rates.block:
        raise ValueError("noise record length does not match the scenario")
    plant = _Plant.build(sc)
    fs, block = sc.rates.fast, sc.rates.block
    L, C = noise.laser, noise.cavity
    aux = plant.aux
    thr_inner = 10.0 * max(_rms(L - C), 1e-300)
    thr_outer = 10.0 * max(_rms(L), _rms(C), 1e-300)
    abs_out = np.empty(n_total)
    rel_out = np.empty(n_total)
    cav_out = np.empty(n_total)
    nb = n_total // block
    rec_fast, rec_aux, rec_outer = np.zeros(nb), np.zeros(nb), np.zeros(nb)
    status, where, events = _kernel.run_loops(
        L, C, noise.pdh, noise.sas,
        sc.inner_on, plant.slope1, plant.cav.sos, plant.pid1.pd_sos, plant.pid1.ki_half, plant.pid1.lp_sos,
        plant.pid1.saturation, plant.act.sos,
        aux is not None, aux.pd_sos if aux else _ZERO_SOS, aux.ki_half if aux else 0.0,
        aux.lp_sos if aux else _IDENTITY_SOS, aux.saturation if aux else math.inf, plant.aux_act.sos,
        sc.delay_samples - 1,
        sc.outer_on, 1 if sc.lock_config == "sas_only" else 0, block, plant.slope2, plant.lockin.sos,
        plant.pid2.pd_sos, plant.pid2.ki_half, plant.pid2.lp_sos, plant.pid2.saturation, plant.out.sos,
        thr_inner, thr_outer,
        abs_out, rel_out, cav_out, rec_fast, rec_aux, rec_outer,
    )
    if status == _kernel.STATUS_INNER_UNSTABLE:
        raise LoopInstabilityError("inner", f"residual exceeded 10x open-loop RMS at t = {where / sc.rates.slow:.4g} s")
    if status == _kernel.STATUS_OUTER_UNSTABLE:
        raise LoopInstabilityError("outer", f"residual exceeded 10x open-loop RMS at t = {where / sc.rates.slow:.4g} s")
    meta = {"lock_config": sc.lock_config, "seed": sc.seed}

    def ts(x, rate=fs, start=n_settle):
        return TimeSeries(rate, x[start:], Unit.HZ_DEVIATION, dict(meta))

    s_block = n_settle // block
    records = {
        "fast": ts(rec_fast, sc.rates.slow, s_block),
        "aux": ts(rec_aux, sc.rates.slow, s_block),
        "outer": ts(rec_outer, sc.rates.slow, s_block),
    }
    return SimResult(ts(abs_out), ts(rel_out), ts(cav_out), records, int(events), n_settle, sc.lock_config)


# --------------------------------------------------------------------------
# closed-form oracle


def loop_responses(scenario: Scenario, f, discrete=False):
    """Frequency responses of the loop blocks at ``f`` Hz.

    Returns a dict with ``D1`` (PDH discriminator incl. cavity pole),
    ``P1`` (inner controller + actuators + delay), ``k2`` (SAS slope),
    ``P2`` (outer controller path seen by the laser frequency) and ``P2n``
    (path seen by SAS detector noise).  ``discrete=True`` uses the exact
    digital filters and the multi-rate boxcar/hold of the simulation.
    """
    sc = scenario
    f = np.asarray(f, dtype=float)
    fs, block = sc.rates.fast, sc.rates.block
    if discrete:
        p = _Plant.build(sc)
        z1 = np.exp(-1j * TWO_PI * f / fs)
        D1 = p.slope1 * p.cav.response(f)
        ctrl = p.pid1.response(f) * p.act.response(f)
        if p.aux is not None:
            ctrl = ctrl + p.aux.response(f) * p.aux_act.response(f)
        P1 = ctrl * z1**sc.delay_samples
        box = _boxcar(f, block, fs)
        # block mean, slow-rate filters, then a hold starting one fast sample later
        slow = p.lockin.response(f) * p.pid2.response(f) * p.out.response(f) * z1
        return {"D1": D1, "P1": P1, "k2": p.slope2, "P2": slow * box * box, "P2n": slow * box}
    D1 = abs(sc.inner_slope) * cavity_response(sc.cavity).response(f)
    G1 = sc.inner_open_loop().response(f)
    k2 = abs(sc.outer_slope)
    P2 = sc.outer_open_loop().response(f) / k2
    return {"D1": D1, "P1": G1 / D1, "k2": k2, "P2": P2, "P2n": P2}


def _check(den):
    if np.any(np.abs(den) < 1e-12):
        raise SingularPointError("1 + G vanishes at a queried frequency")
    return den


def _coefficients(sc: Scenario, r, quantity):
    """Transfer coefficients from the sources [laser, cavity, pdh, sas] to ``quantity``."""
    one = np.ones_like(r["D1"])
    zero = np.zeros_like(one)
    lock = sc.lock_config
    cav = [zero, one, zero, zero]
    if lock in ("free_run", "ule_reference"):
        las = [one, zero, zero, zero]
    elif lock == "sas_only":
        den = _check(1 + r["k2"] * r["P2"])
        las = [one / den, zero, zero, -r["P2n"] / den]
    else:
        G1 = r["D1"] * r["P1"]
        den1 = _check(1 + G1)
        S1, T1 = 1 / den1, G1 / den1
        las = [S1, T1, -T1 / r["D1"], zero]
        if lock == "cascade":
            den = _check(1 + T1 * r["k2"] * r["P2"])
            las = [S1 / den, T1 / den, -T1 / r["D1"] / den, -T1 * r["P2n"] / den]
            # cavity mode moved by the held SAS correction
            cav = [-r["P2"] * r["k2"] * c for c in las]
            cav[1] = cav[1] + one
            cav[3] = cav[3] - r["P2n"]
    if quantity == "absolute":
        return las
    if quantity == "cavity":
        return cav
    return [a - b for a, b in zip(las, cav)]


def analytic_residual_psd(scenario: Scenario, f, quantity="absolute", discrete=False):
    """Closed-loop PSD (Hz^2/Hz) of ``quantity`` from the linear block diagram.

    ``quantity`` is ``absolute`` (laser vs the atomic line), ``relative``
    (laser minus cavity mode) or ``cavity``.  Detector noise enters at the
    error points.  Raises :class:`SingularPointError` where 1 + G = 0.
    """
    if quantity not in QUANTITIES:
        raise ValueError(f"quantity must be one of {QUANTITIES}")
    f_arr = np.asarray(f, dtype=float)
    if np.any(~(f_arr > 0)):
        from .errors import DomainError

        raise DomainError("frequency must be > 0")
    sc = scenario
    r = loop_responses(sc, f_arr, discrete=discrete)
    coef = _coefficients(sc, r, quantity)
    m = sc.noise_models()
    sas_psd = np.where(f_arr <= sc.rates.slow / 2, m["sas"](np.minimum(f_arr, sc.rates.slow / 2)), 0.0)
    sources = [m["laser"](f_arr), m["cavity"](f_arr), m["pdh"](f_arr), sas_psd]
    out = sum(np.abs(c) ** 2 * s for c, s in zip(coef, sources))
    return float(out) if np.ndim(f) == 0 else out


# --------------------------------------------------------------------------
# comparison across locking configurations


@dataclass(frozen=True)
class ComparisonEntry:
    lock_config: str
    psd: object
    beat: object
    fits: dict
    beta_linewidth: tuple
    saturation_events: int
    result: SimResult | None = None

    @property
    def best_fit(self):
        """Lowest-residual fit, preferring converged ones."""
        return min(self.fits.values(), key=lambda fit: (not fit.valid, fit.residual_rms))

    @property
    def linewidth(self) -> float:
        return self.best_fit.fwhm


_SHARED = ("laser_noise", "cavity", "pdh", "sas", "rates", "duration", "settle", "seed", "ule_noise")


def _simulate_common(scenarios):
    """Yield ``(scenario, SimResult)`` on common random numbers, one at a time."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("need at least one scenario")
    ref = scenarios[0]
    for sc in scenarios[1:]:
        for name in _SHARED:
            if getattr(sc, name) != getattr(ref, name):
                raise ValueError(f"scenarios differ in {name!r}; common random numbers need identical noise inputs")
    keys = [sc.lock_config for sc in scenarios]
    if len(set(keys)) != len(keys):
        raise ValueError("lock_config values must be unique")
    base = synthesize_noise(ref.with_lock("cascade"))
    for sc in scenarios:
        noise = base
        if sc.lock_config == "ule_reference":
            # the reference laser replaces the laser stream; the rest is shared
            ule_model = sc.noise_models()["laser"]
            n = base.laser.size
            noise = dataclasses.replace(
                base, laser=synthesize(ule_model, sc.rates.fast, n, noise_stream_seed(sc.seed, STREAM_LASER)).samples)
        yield sc, simulate(sc, noise)


def residual_series(scenario: Scenario, locks) -> dict:
    """Absolute residual frequency noise for each lock configuration in ``locks``.

    All runs share the noise realization of ``scenario``.  Only the
    absolute series are kept, to bound memory.
    """
    out = {}
    for sc, res in _simulate_common([scenario.with_lock(l) for l in locks]):
        out[sc.lock_config] = res.absolute_freq_noise
        del res
    return out


def run_comparison(scenarios, *, rbw=5e3, segment_len=None, keep_series=False, fit_window=None):
    """Simulate each scenario on common random numbers and analyse it.

    All scenarios must share seed, noise models, plant and rates; they may
    differ in ``lock_config`` and servo settings.  Returns a dict keyed by
    lock_config of :class:`ComparisonEntry` (absolute-noise PSD, beat
    spectrum, Gaussian and Lorentzian fits, beta-line estimate).
    """
    from .spectral import beat_spectrum, beta_line_linewidth, fit_lineshape, welch_psd

    out = {}
    for sc, res in _simulate_common(scenarios):
        x = res.absolute_freq_noise
        seg = segment_len or default_segment_len(len(x))
        psd = welch_psd(x, seg)
        beat = beat_spectrum(x, rbw=rbw)
        fits = {m: _fit_or_best(beat, m, fit_window) for m in ("gaussian", "lorentzian")}
        # finer grid for the beta line: it integrates down to 1/duration
        beta = beta_line_linewidth(welch_psd(x, max(8, len(x) // 4)), x.duration)
        out[sc.lock_config] = ComparisonEntry(sc.lock_config, psd, beat, fits, beta, res.saturation_events,
                                              res if keep_series else None)
        del res, x
    return out


def _fit_or_best(beat, model, window):
    from .errors import FitConvergenceError
    from .spectral import fit_lineshape

    try:
        return fit_lineshape(beat, model, window=window)
    except FitConvergenceError as exc:
        # multi-peaked beats (drift-dominated locks) may not converge; keep the flagged fit
        if exc.best is None:
            raise
        return exc.best


def default_segment_len(n):
    """Largest power of two giving at least 50 Welch averages at 50 % overlap."""
    seg = 1 << int(math.floor(math.log2(2 * n / 51)))
    return max(seg, 8)
