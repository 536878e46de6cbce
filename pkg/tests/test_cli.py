import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from lockloop.cli import EXIT_ANALYSIS, EXIT_CONFIG, EXIT_OK, EXIT_UNSTABLE, bode_csv, csv_text, main
from lockloop.config import CONFIG_ENV
from lockloop.lti import low_pass

from conftest import quick_config_text


def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.glob("*.csv"))}


def _manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_csv_dialect():
    text = csv_text(["a", "b"], [np.array([1.0, 2.0]), np.array([3.0, 4.0])])
    assert text.endswith("\n") and text.isascii()
    lines = text.splitlines()
    assert lines[0] == "a,b" and len(lines) == 3
    assert [float(v) for v in lines[1].split(",")] == [1.0, 3.0]


def test_bode_csv_header():
    assert bode_csv(low_pass(1e3), np.array([1e3])).splitlines()[0] == "f_hz,mag_db,phase_deg"


def test_psd_writes_csv_and_manifest(quick_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["psd", "--config", str(quick_config), "--out", str(out), "--lock", "cascade"]) == EXIT_OK
    lines = (out / "psd_cascade.csv").read_text().splitlines()
    assert lines[0] == "f_hz,psd_hz2_per_hz" and len(lines) > 100
    m = _manifest(out)
    assert m["command"] == "psd" and m["exit_status"] == 0
    assert m["config_text"] == quick_config.read_text()
    names = {e["name"] for e in m["emitted_files"]}
    assert {"psd_cascade.csv", "psd_cascade_analytic.csv"} <= names
    for e in m["emitted_files"]:
        assert hashlib.sha256((out / e["name"]).read_bytes()).hexdigest() == e["sha256"]


def test_same_seed_identical_checksums(quick_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["psd", "--config", str(quick_config), "--out", str(d), "--seed", "5"]) == EXIT_OK
    assert _digest(a) == _digest(b)
    c = tmp_path / "c"
    main(["psd", "--config", str(quick_config), "--out", str(c), "--seed", "6"])
    assert _digest(c) != _digest(a)


def test_unknown_lock_lists_valid_values(quick_config, tmp_path, capsys):
    code = main(["psd", "--config", str(quick_config), "--out", str(tmp_path / "o"), "--lock", "ule_only"])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "free_run" in err and "cascade" in err


def test_malformed_config_line_numbered(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(quick_config_text(**{"fast_hz: 60.0e6": "fast_hz: abc"}))
    assert main(["psd", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert f"{p}:17:" in capsys.readouterr().err


def test_env_var_config(tmp_path, monkeypatch, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: [\n")
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert main(["psd", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert str(p) in capsys.readouterr().err


def test_instability_exit_names_loop(tmp_path, capsys):
    p = tmp_path / "hot.yaml"
    p.write_text(quick_config_text(**{"kp: 0.01165": "kp: 0.05825", "ki_per_s: 2.196e4": "ki_per_s: 1.098e5"}))
    code = main(["psd", "--config", str(p), "--out", str(tmp_path / "o"), "--lock", "lc_only"])
    assert code == EXIT_UNSTABLE
    assert "inner loop unstable" in capsys.readouterr().err
    assert _manifest(tmp_path / "o")["exit_status"] == EXIT_UNSTABLE


def test_rbw_below_two_over_duration(quick_config, tmp_path):
    code = main(["beat", "--config", str(quick_config), "--out", str(tmp_path / "o"), "--rbw", "10"])
    assert code == EXIT_CONFIG


def test_beat_emits_four_curves_and_report(quick_config, tmp_path):
    out = tmp_path / "o"
    code = main(["beat", "--config", str(quick_config), "--out", str(out)])
    assert code in (EXIT_OK, EXIT_ANALYSIS)
    for lock in ("free_run", "sas_only", "lc_only", "cascade"):
        lines = (out / f"beat_{lock}.csv").read_text().splitlines()
        assert lines[0] == "offset_hz,power_db"
        assert max(float(l.split(",")[1]) for l in lines[1:]) == 0.0
    fits = (out / "fits.csv").read_text().splitlines()
    assert fits[0] == "lock_config,model,fwhm_hz,residual_rms_db,valid,preferred"
    assert len(fits) == 9
    report = (out / "fit_report.txt").read_text()
    assert "[cascade gaussian]" in report and "rbw_hz = 5000" in report


def test_readout_requires_eit(tmp_path, capsys):
    text = quick_config_text()
    text = text[:text.index("eit:")] + text[text.index("analysis:"):]
    p = tmp_path / "noeit.yaml"
    p.write_text(text)
    assert main(["readout", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "eit" in capsys.readouterr().err


def test_readout_band_parsing(quick_config, tmp_path):
    code = main(["readout", "--config", str(quick_config), "--out", str(tmp_path / "o"), "--band", "10e3"])
    assert code == EXIT_CONFIG


def test_readout_outputs(quick_config, tmp_path):
    out = tmp_path / "o"
    assert main(["readout", "--config", str(quick_config), "--out", str(out), "--band", "10e3:100e3"]) == EXIT_OK
    header = (out / "readout.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "f_hz" and len(header) == 7
    summary = (out / "readout_summary.csv").read_text().splitlines()
    assert summary[0].startswith("mode,cascade_ule_max_abs_gap_db")
    assert {l.split(",")[0] for l in summary[1:]} == {"resonant", "detuned"}
    assert (out / "readout_cascade_detuned.csv").read_text().startswith("f_hz,readout_db_re_floor\n")
    assert _manifest(out)["options"]["resolved_band_hz"] == [10e3, 100e3]


def test_replay_reproduces(quick_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["psd", "--config", str(quick_config), "--out", str(a), "--lock", "sas_only"]) == EXIT_OK
    assert main(["replay", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    assert _digest(a) == _digest(b)
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_console_script_version():
    r = subprocess.run([sys.executable, "-m", "lockloop.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("lockloop ")
