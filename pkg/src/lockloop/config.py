"""Scenario files: YAML with named sections and unit-suffixed keys.

Every problem found while building the objects is raised as
:class:`~lockloop.errors.ConfigError` carrying the 1-based line of the
offending key, so the CLI can point at it.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .cascade import LOCK_CONFIGS, Rates, Scenario
from .errors import ConfigError
from .lti import PidConfig, low_pass
from .noise import PsdModel, PsdSegment
from .pdh import CavityModel, PdhConfig, discriminator_slope
from .readout import EitModel
from .sas import SasConfig, SasLine, sas_slope

__all__ = [
    "CONFIG_ENV",
    "LockloopConfig",
    "ReadoutSettings",
    "AnalysisSettings",
    "default_config_path",
    "default_config_text",
    "load_config",
    "parse_config",
]

CONFIG_ENV = "LOCKLOOP_CONFIG"


@dataclass(frozen=True)
class ReadoutSettings:
    detuned_coupling: float = 2.4e6
    band: tuple = (10e3, 100e3)
    sample_rate: float = 2e6
    n_samples: int = 2**20
    segment_len: int = 2048


@dataclass(frozen=True)
class AnalysisSettings:
    rbw: float = 5e3
    loose_bandwidth: float = 300.0
    linewidth_target: float = 53e3
    linewidth_tolerance: float = 0.2
    suppression_target_db: float = 60.0

    @property
    def linewidth_window(self) -> tuple:
        t, tol = self.linewidth_target, self.linewidth_tolerance
        return (t * (1 - tol), t * (1 + tol))


@dataclass(frozen=True)
class LockloopConfig:
    """A parsed scenario file.  ``text`` is the exact source, kept for manifests."""

    scenario: Scenario
    eit: EitModel | None
    readout: ReadoutSettings
    analysis: AnalysisSettings
    text: str = field(repr=False, default="")
    path: str | None = None

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


# --------------------------------------------------------------------------
# YAML with key line numbers


class _Map(dict):
    """dict that remembers the line of each key (and of itself)."""

    line: int | None = None
    lines: dict


class _Seq(list):
    line: int | None = None


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a signed exponent ("1.0e+6"); accept the usual "1e6" too
_Loader.yaml_implicit_resolvers = {k: list(v) for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()}
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", line=knode.start_mark.line + 1)
        out[key] = loader.construct_object(vnode, deep=True)
        out.lines[key] = knode.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class _Section:
    """Typed access to one mapping, tracking which keys were consumed."""

    def __init__(self, data, name, path):
        if not isinstance(data, _Map):
            line = getattr(data, "line", None)
            raise ConfigError(f"section {name!r} must be a mapping", path, line)
        self.data, self.name, self.path = data, name, path
        self.used = set()

    def line(self, key=None):
        if key is not None and key in self.data.lines:
            return self.data.lines[key]
        return self.data.line

    def error(self, key, message):
        label = f"{self.name}.{key}" if key else self.name
        return ConfigError(f"{label}: {message}", self.path, self.line(key))

    def has(self, key):
        return key in self.data

    def raw(self, key, default=...):
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                raise self.error(None, f"missing required key {key!r}")
            return default
        return self.data[key]

    def num(self, key, default=..., *, positive=False, nonneg=False):
        v = self.raw(key, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(key, f"expected a number, got {v!r}")
        v = float(v)
        if math.isnan(v):
            raise self.error(key, "NaN is not allowed")
        if positive and not v > 0:
            raise self.error(key, "must be > 0")
        if nonneg and v < 0:
            raise self.error(key, "must be >= 0")
        return v

    def int(self, key, default=..., *, minimum=None):
        v = self.raw(key, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.error(key, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise self.error(key, f"must be >= {minimum}")
        return v

    def sub(self, key, default=...):
        v = self.raw(key, default)
        if v is default and default is not ...:
            return v
        return _Section(v, f"{self.name}.{key}", self.path)

    def finish(self):
        extra = [k for k in self.data if k not in self.used]
        if extra:
            k = extra[0]
            raise self.error(k, f"unknown key {k!r}")


def _build(section, key, fn):
    """Run a constructor, turning its ValueError into a line-numbered ConfigError."""
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise section.error(key, str(exc)) from None


def _psd(sec: _Section, key: str, scale=1.0) -> PsdModel:
    s = sec.sub(key)
    floor = s.num("floor", 0.0, nonneg=True)
    segs = []
    raw = s.raw("segments", [])
    if not isinstance(raw, list):
        raise s.error("segments", "expected a list")
    for i, item in enumerate(raw):
        g = _Section(item, f"{s.name}.segments[{i}]", s.path)
        seg = _build(g, None, lambda g=g: PsdSegment(
            g.num("f_lo_hz", nonneg=True), g.num("f_hi_hz", positive=True), g.num("exponent"),
            g.num("amplitude_ref", positive=True) * scale, g.num("f_ref_hz", positive=True)))
        g.finish()
        segs.append(seg)
    s.finish()
    return _build(s, None, lambda: PsdModel(tuple(segs), floor * scale))


def _pid(sec: _Section) -> PidConfig:
    cfg = _build(sec, None, lambda: PidConfig(
        kp=sec.num("kp", 0.0), ki=sec.num("ki_per_s", 0.0), kd=sec.num("kd_s", 0.0),
        derivative_rolloff=sec.num("derivative_rolloff_hz", 1e7, positive=True),
        output_low_pass=sec.num("output_low_pass_hz", 1e7, positive=True),
        saturation=sec.num("saturation_v", math.inf, positive=True)))
    sec.finish()
    if cfg.kp == 0 and cfg.ki == 0 and cfg.kd == 0:
        raise sec.error(None, "needs at least one non-zero gain")
    return cfg


def _actuator(sec: _Section):
    tf = _build(sec, None, lambda: low_pass(sec.num("bandwidth_hz", positive=True),
                                            sec.num("gain_hz_per_v", positive=True)))
    sec.finish()
    return tf


def _noise_at_error_point(sec: _Section, slope: float) -> PsdModel:
    """Detector noise given in V^2/Hz, or referred to frequency in Hz^2/Hz."""
    hz, v = sec.has("detector_noise_hz2_per_hz"), sec.has("detector_noise_v2_per_hz")
    if hz and v:
        raise sec.error("detector_noise_v2_per_hz", "give detector noise in one unit only")
    if v:
        return _psd(sec, "detector_noise_v2_per_hz")
    if hz:
        return _psd(sec, "detector_noise_hz2_per_hz", slope * slope)
    return PsdModel()


def parse_config(text: str, path: str | None = None) -> LockloopConfig:
    """Build a :class:`LockloopConfig` from YAML source."""
    try:
        data = yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(str(exc), path, exc.line) from None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax: {exc.problem or exc}", path, line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax: {exc}", path) from None
    if data is None:
        raise ConfigError("config is empty", path, 1)
    top = _Section(data, "config", path)

    seed = top.int("seed", 0, minimum=0)
    lock = top.raw("lock_config", "cascade")
    if lock not in LOCK_CONFIGS:
        raise top.error("lock_config", f"unknown value {lock!r}; valid: {', '.join(LOCK_CONFIGS)}")
    duration = top.num("duration_s", positive=True)
    settle = top.num("settle_s", 0.02, nonneg=True)

    r = top.sub("rates")
    rates = _build(r, None, lambda: Rates(r.num("fast_hz", positive=True), r.num("slow_hz", positive=True)))
    r.finish()

    la = top.sub("laser")
    laser_noise = _psd(la, "noise_hz2_per_hz")
    la.finish()

    c = top.sub("cavity")
    cavity = _build(c, None, lambda: CavityModel(
        linewidth=c.num("linewidth_hz", positive=True), finesse=c.num("finesse"),
        pzt_gain=c.num("pzt_gain_hz_per_v", positive=True), pzt_bandwidth=c.num("pzt_bandwidth_hz", positive=True),
        noise=_psd(c, "noise_hz2_per_hz", c.num("noise_scale", 1.0, positive=True))
        if c.has("noise_hz2_per_hz") else PsdModel()))
    c.finish()

    p = top.sub("pdh")
    pdh_kw = dict(mod_freq=p.num("mod_freq_hz", positive=True), mod_depth=p.num("mod_depth_rad", positive=True),
                  demod_phase=p.num("demod_phase_rad", 0.0), loop_delay=p.num("loop_delay_s", 50e-9, nonneg=True),
                  carrier_power=p.num("carrier_power", None, nonneg=True),
                  sideband_power=p.num("sideband_power", None, nonneg=True),
                  slope_override=p.num("slope_override_v_per_hz", None))
    pdh0 = _build(p, None, lambda: PdhConfig(**pdh_kw))
    s1 = _build(p, None, lambda: discriminator_slope(pdh0, cavity))
    pdh_kw["detector_noise"] = _noise_at_error_point(p, s1)
    if p.has("intensity_noise_v2_per_hz"):
        pdh_kw["intensity_noise"] = _psd(p, "intensity_noise_v2_per_hz")
    pdh = _build(p, None, lambda: PdhConfig(**pdh_kw))
    p.finish()

    s = top.sub("sas")
    raw_lines = s.raw("lines")
    if not isinstance(raw_lines, list) or not raw_lines:
        raise s.error("lines", "expected a non-empty list of lines")
    lines = []
    for i, item in enumerate(raw_lines):
        g = _Section(item, f"sas.lines[{i}]", path)
        lines.append(_build(g, None, lambda g=g: SasLine(g.num("center_hz"), g.num("fwhm_hz"), g.num("depth"))))
        g.finish()
    sas_kw = dict(doppler_sigma=s.num("doppler_sigma_hz", positive=True), doppler_center=s.num("doppler_center_hz", 0.0),
                  background_depth=s.num("background_depth", positive=True), lines=tuple(lines),
                  mod_freq=s.num("mod_freq_hz", positive=True), mod_depth=s.num("mod_depth_hz", positive=True),
                  demod_phase=s.num("demod_phase_rad", 0.0), lockin_bandwidth=s.num("lockin_bandwidth_hz", positive=True),
                  lock_line_index=s.int("lock_line_index", 0, minimum=0))
    sas0 = _build(s, None, lambda: SasConfig(**sas_kw))
    s2 = _build(s, None, lambda: sas_slope(sas0))
    sas_kw["detector_noise"] = _noise_at_error_point(s, s2)
    sas = _build(s, None, lambda: SasConfig(**sas_kw))
    s.finish()

    pid1 = _pid(top.sub("pid1"))
    aux = top.raw("pid1_aux", None)
    pid1_aux = None if aux is None else _pid(_Section(aux, "pid1_aux", path))
    pid2 = _pid(top.sub("pid2"))

    a = top.sub("actuators")
    fast = _actuator(a.sub("fast"))
    slow = _actuator(a.sub("slow"))
    a.finish()

    ule_noise = PsdModel(floor=1.0)
    if top.has("ule"):
        u = top.sub("ule")
        ule_noise = _psd(u, "noise_hz2_per_hz")
        u.finish()

    scenario = _build(top, None, lambda: Scenario(
        laser_noise, cavity, pdh, sas, pid1, pid2, fast, slow, pid1_aux, rates, duration, settle, seed, lock, ule_noise))

    eit, readout = None, ReadoutSettings()
    if top.has("eit"):
        e = top.sub("eit")
        eit = _build(e, None, lambda: EitModel(
            probe_rabi=e.num("probe_rabi_hz", nonneg=True), coupling_rabi=e.num("coupling_rabi_hz", nonneg=True),
            gamma_e=e.num("gamma_e_hz", positive=True), gamma_r=e.num("gamma_r_hz", positive=True),
            optical_depth=e.num("optical_depth", nonneg=True), doppler_sigma=e.num("doppler_sigma_hz", 0.0, nonneg=True),
            wavelength_ratio=e.num("wavelength_ratio", 852.3 / 509.5, positive=True),
            intensity_noise_floor=PsdModel(floor=e.num("intensity_noise_floor_per_hz", positive=True))))
        band = e.raw("band_hz", [10e3, 100e3])
        if (not isinstance(band, list) or len(band) != 2
                or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in band)
                or not 0 < band[0] < band[1]):
            raise e.error("band_hz", "expected [lo, hi] with 0 < lo < hi")
        readout = ReadoutSettings(
            detuned_coupling=e.num("detuned_coupling_hz", 2.4e6),
            band=(float(band[0]), float(band[1])),
            sample_rate=e.num("sample_rate_hz", 2e6, positive=True),
            n_samples=e.int("n_samples", 2**20, minimum=1024),
            segment_len=e.int("segment_len", 2048, minimum=8),
        )
        if readout.band[1] > readout.sample_rate / 2:
            raise e.error("band_hz", "upper band edge exceeds the readout Nyquist frequency")
        e.finish()

    analysis = AnalysisSettings()
    if top.has("analysis"):
        an = top.sub("analysis")
        analysis = AnalysisSettings(
            rbw=an.num("rbw_hz", 5e3, positive=True),
            loose_bandwidth=an.num("loose_bandwidth_hz", 300.0, positive=True),
            linewidth_target=an.num("linewidth_target_hz", 53e3, positive=True),
            linewidth_tolerance=an.num("linewidth_tolerance", 0.2, positive=True),
            suppression_target_db=an.num("suppression_target_db", 60.0),
        )
        an.finish()
    top.finish()
    return LockloopConfig(scenario, eit, readout, analysis, text, path)


def default_config_path() -> str:
    """``$LOCKLOOP_CONFIG`` if set, else the packaged default."""
    env = os.environ.get(CONFIG_ENV)
    if env:
        return env
    return str(resources.files("lockloop") / "data" / "default.yaml")


def default_config_text() -> str:
    return (resources.files("lockloop") / "data" / "default.yaml").read_text(encoding="utf-8")


def load_config(path: str | os.PathLike | None = None) -> LockloopConfig:
    """Read and parse a scenario file (default: :func:`default_config_path`)."""
    p = str(path) if path is not None else default_config_path()
    try:
        text = Path(p).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", p) from None
    return parse_config(text, p)
