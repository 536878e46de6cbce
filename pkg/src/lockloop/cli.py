"""Command-line front end.

``lockloop <psd|beat|readout|calibrate> --config PATH --out DIR`` plus
``lockloop replay MANIFEST --out DIR``.  Every run writes ``manifest.json``
holding the exact config text, options, seed, versions and the sha256 of
every emitted file.  Exit codes: 0 ok, 2 config/usage error, 3 loop
instability, 4 analysis failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import LOCK_CONFIGS, analytic_residual_psd, default_segment_len, residual_series, run_comparison, simulate
from .config import CONFIG_ENV, LockloopConfig, default_config_path, load_config, parse_config
from .errors import ConfigError, FitConvergenceError, LoopInstabilityError, NoPeakError
from .readout import FIG3_LOCKS, run_fig3_comparison
from .spectral import half_power_width, welch_psd

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_ANALYSIS = 0, 2, 3, 4
BEAT_DEFAULT = ("free_run", "sas_only", "lc_only", "cascade")
MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad option value; reported with exit code 2."""


# --------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    return f"{float(x):.9e}"


def csv_text(header, columns) -> str:
    """ASCII CSV with one header row and fixed ``%.9e`` numbers."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*cols):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def bode_csv(tf, f) -> str:
    """Bode sweep as CSV ``f_hz,mag_db,phase_deg``."""
    from .lti import bode

    mag, ph = bode(tf, f)
    return csv_text(["f_hz", "mag_db", "phase_deg"], [f, 20 * np.log10(mag), np.degrees(ph)])


def sweep_csv(name: str, detuning, values) -> str:
    """Static curve sweep, e.g. ``detuning_hz,error_v`` or ``detuning_hz,transmission``."""
    return csv_text(["detuning_hz", name], [detuning, values])


class Output:
    """Atomic writer into one directory that records what it wrote."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write(self, name: str, text: str):
        data = text.encode("ascii")
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files = [f for f in self.files if f["name"] != name]
        self.files.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})

    def manifest(self, command, cfg: LockloopConfig, options: dict, status: int, notes=()):
        versions = {"lockloop": __version__, "python": platform.python_version(), "numpy": np.__version__}
        for mod in ("scipy", "numba"):
            versions[mod] = __import__(mod).__version__
        body = {
            "command": command,
            "options": options,
            "seed": cfg.scenario.seed,
            "config_path": cfg.path,
            "config_sha256": cfg.sha256,
            "config_text": cfg.text,
            "versions": versions,
            "exit_status": status,
            "notes": list(notes),
            "emitted_files": sorted(self.files, key=lambda f: f["name"]),
        }
        self.write(MANIFEST, json.dumps(body, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# option parsing


def _parse_locks(value, default):
    if value is None:
        return tuple(default)
    names = tuple(v.strip() for v in value.split(",") if v.strip())
    bad = [n for n in names if n not in LOCK_CONFIGS]
    if bad or not names:
        raise UsageError(f"unknown lock {', '.join(bad) or repr(value)}; valid values: {', '.join(LOCK_CONFIGS)}")
    return names


def _parse_band(value, default):
    if value is None:
        return tuple(default)
    try:
        lo, hi = (float(v) for v in value.split(":"))
    except ValueError:
        raise UsageError(f"--band expects LO:HI in Hz, got {value!r}") from None
    if not 0 < lo < hi:
        raise UsageError("--band needs 0 < LO < HI")
    return lo, hi


def _apply_seed(cfg: LockloopConfig, seed):
    if seed is None:
        return cfg
    if seed < 0:
        raise UsageError("--seed must be non-negative")
    return dataclasses.replace(cfg, scenario=dataclasses.replace(cfg.scenario, seed=seed))


def _check_rbw(cfg, rbw):
    dur = cfg.scenario.duration
    if not rbw >= 2.0 / dur:
        raise UsageError(f"--rbw {rbw:g} Hz is below 2/duration = {2.0 / dur:g} Hz")


# --------------------------------------------------------------------------
# commands


def cmd_psd(cfg: LockloopConfig, out: Output, args) -> tuple:
    locks = _parse_locks(args.lock, (cfg.scenario.lock_config,))
    if len(locks) != 1:
        raise UsageError("psd takes a single --lock value")
    sc = cfg.scenario.with_lock(locks[0])
    res = simulate(sc)
    x = res.absolute_freq_noise
    p = welch_psd(x, default_segment_len(len(x)))
    out.write(f"psd_{sc.lock_config}.csv", csv_text(["f_hz", "psd_hz2_per_hz"], [p.frequencies, p.values]))
    a = analytic_residual_psd(sc, p.frequencies)
    out.write(f"psd_{sc.lock_config}_analytic.csv", csv_text(["f_hz", "psd_hz2_per_hz"], [p.frequencies, a]))
    print(f"{sc.lock_config}: {len(p.frequencies)} bins, {p.averaging} averages, "
          f"saturation events {res.saturation_events}")
    return EXIT_OK, {"lock": sc.lock_config}, ()


def cmd_beat(cfg: LockloopConfig, out: Output, args) -> tuple:
    locks = _parse_locks(args.lock, BEAT_DEFAULT)
    rbw = args.rbw if args.rbw is not None else cfg.analysis.rbw
    _check_rbw(cfg, rbw)
    table = run_comparison([cfg.scenario.with_lock(l) for l in locks], rbw=rbw)
    lo, hi = cfg.analysis.linewidth_window
    rows = ["lock_config,model,fwhm_hz,residual_rms_db,valid,preferred"]
    report, notes, status = [], [], EXIT_OK
    for lock in locks:
        e = table[lock]
        b = e.beat
        rel = np.maximum(b.values / b.values.max(), 1e-300)
        out.write(f"beat_{lock}.csv", csv_text(["offset_hz", "power_db"], [b.frequencies, 10 * np.log10(rel)]))
        best = e.best_fit
        for m, fit in e.fits.items():
            rows.append(f"{lock},{m},{_fmt(fit.fwhm)},{_fmt(fit.residual_rms)},{int(fit.valid)},{int(fit is best)}")
        for fit in e.fits.values():
            report.append(f"[{lock} {fit.model}]")
            report.append(fit.report())
            if not fit.valid:
                report.append("valid = false")
        report.append(f"[{lock} summary]")
        report.append(f"rbw_hz = {rbw:.6g}")
        report.append(f"preferred_model = {best.model}")
        report.append(f"half_power_width_hz = {half_power_width(b):.6g}")
        report.append(f"beta_line_width_hz = {e.beta_linewidth[0]:.6g}")
        if e.beta_linewidth[2]:
            report.append("beta_line_flagged = true")
        if lock == "cascade":
            ok = best.model == "gaussian" and lo <= best.fwhm <= hi
            report.append(f"acceptance_window_hz = {lo:.6g}:{hi:.6g}")
            report.append(f"in_acceptance_window = {'true' if ok else 'false'}")
        report.append("")
        if not any(f.valid for f in e.fits.values()):
            notes.append(f"{lock}: no lineshape fit converged")
            status = EXIT_ANALYSIS
    out.write("fits.csv", "\n".join(rows) + "\n")
    text = "\n".join(report)
    out.write("fit_report.txt", text)
    sys.stdout.write(text)
    return status, {"lock": ",".join(locks), "rbw_hz": rbw}, notes


def cmd_readout(cfg: LockloopConfig, out: Output, args) -> tuple:
    if cfg.eit is None:
        raise ConfigError("readout needs an 'eit' section", cfg.path)
    band = _parse_band(args.band, cfg.readout.band)
    if band[1] > cfg.readout.sample_rate / 2:
        raise UsageError("--band upper edge exceeds the readout Nyquist frequency")
    series = residual_series(cfg.scenario, FIG3_LOCKS)
    tab = run_fig3_comparison(series, cfg.eit, detuning=cfg.readout.detuned_coupling, band=band,
                              sample_rate=cfg.readout.sample_rate, segment_len=cfg.readout.segment_len)
    keys = [(l, m) for l in FIG3_LOCKS for m in ("resonant", "detuned")]
    f = tab.curves[keys[0]].frequencies
    header = ["f_hz"] + [f"{l}_{m}_db_re_floor" for l, m in keys]
    out.write("readout.csv", csv_text(header, [f] + [tab.curves[k].db_re_floor for k in keys]))
    for lock, mode in keys:
        out.write(f"readout_{lock}_{mode}.csv",
                  csv_text(["f_hz", "readout_db_re_floor"], [f, tab.curves[(lock, mode)].db_re_floor]))
    lines = ["mode,cascade_ule_max_abs_gap_db,sas_cascade_max_gap_db,sas_cascade_min_gap_db"]
    for mode, s in tab.summary.items():
        lines.append(f"{mode},{_fmt(s['cascade_ule_max_abs_gap_db'])},{_fmt(s['sas_cascade_max_gap_db'])},"
                     f"{_fmt(s['sas_cascade_min_gap_db'])}")
    out.write("readout_summary.csv", "\n".join(lines) + "\n")
    for mode, s in tab.summary.items():
        print(f"{mode:9s} cascade-ule max |gap| {s['cascade_ule_max_abs_gap_db']:6.2f} dB   "
              f"sas-cascade max {s['sas_cascade_max_gap_db']:6.2f} dB  min {s['sas_cascade_min_gap_db']:6.2f} dB")
    return EXIT_OK, {"band_hz": list(band)}, ()


def cmd_calibrate(cfg: LockloopConfig, out: Output, args) -> tuple:
    from .calibration import calibrate_cavity_noise, with_noise_scale

    a = cfg.analysis
    try:
        res = calibrate_cavity_noise(cfg.scenario, a.linewidth_target, rbw=a.rbw, loose_bandwidth=a.loose_bandwidth)
    except ValueError as exc:
        raise _AnalysisFailure(str(exc)) from None
    try:
        text = with_noise_scale(cfg.text, res.noise_scale)
    except ValueError as exc:
        raise ConfigError(str(exc), cfg.path) from None
    out.write("calibrated.yaml", text)
    report = res.report() + "\n"
    lines = [f"{k:.9e},{w:.9e}" for k, w in res.history]
    out.write("calibration_history.csv", "noise_scale,linewidth_hz\n" + "\n".join(lines) + "\n")
    out.write("calibration_report.txt", report)
    sys.stdout.write(report)
    notes = []
    status = EXIT_OK
    if not res.converged:
        notes.append("bisection did not reach the linewidth tolerance")
        status = EXIT_ANALYSIS
    if res.suppression_db < a.suppression_target_db:
        notes.append(f"suppression {res.suppression_db:.1f} dB below target {a.suppression_target_db:g} dB")
    return status, {}, notes


class _AnalysisFailure(Exception):
    pass


COMMANDS = {"psd": cmd_psd, "beat": cmd_beat, "readout": cmd_readout, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lockloop", description="Cascade-locked laser noise simulator")
    p.add_argument("--version", action="version", version=f"lockloop {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", default=None,
                       help=f"scenario YAML (default: ${CONFIG_ENV} or the packaged default)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--lock", default=None, help="lock configuration(s), comma separated")
        s.add_argument("--band", default=None, help="readout band LO:HI in Hz")
        s.add_argument("--rbw", type=float, default=None, help="beat-note resolution bandwidth in Hz")
    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    return p


def _run(command, cfg, args, out_dir):
    out = Output(out_dir)
    options = {}
    notes = ()
    try:
        cfg = _apply_seed(cfg, args.seed)
        status, options, notes = COMMANDS[command](cfg, out, args)
    except (UsageError, ConfigError) as exc:
        print(f"lockloop: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # scenario-level precondition (rates, loop separation, ...)
        print(f"lockloop: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LoopInstabilityError as exc:
        print(f"lockloop: {exc.loop} loop unstable: {exc}", file=sys.stderr)
        status, notes = EXIT_UNSTABLE, [str(exc)]
    except (FitConvergenceError, NoPeakError, _AnalysisFailure) as exc:
        print(f"lockloop: analysis failed: {exc}", file=sys.stderr)
        status, notes = EXIT_ANALYSIS, [str(exc)]
    for n in notes:
        print(f"lockloop: note: {n}", file=sys.stderr)
    recorded = {"lock": args.lock, "band": args.band, "rbw": args.rbw, "seed": args.seed}
    recorded.update({f"resolved_{k}": v for k, v in options.items()})
    out.manifest(command, cfg, recorded, status, notes)
    return status


def _replay(args):
    try:
        body = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        command, text, opts = body["command"], body["config_text"], body["options"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"lockloop: error: unreadable manifest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, body.get("config_path"))
    except ConfigError as exc:
        print(f"lockloop: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ns = argparse.Namespace(lock=opts.get("lock"), band=opts.get("band"), rbw=opts.get("rbw"), seed=opts.get("seed"))
    return _run(command, cfg, ns, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        return _replay(args)
    try:
        cfg = load_config(args.config if args.config is not None else default_config_path())
    except ConfigError as exc:
        print(f"lockloop: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _run(args.command, cfg, args, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
