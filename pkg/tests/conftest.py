import dataclasses
import time

import numpy as np
import pytest

from lockloop.config import load_config


@pytest.fixture(scope="session")
def default_cfg():
    return load_config()


@pytest.fixture(scope="session")
def default_scenario(default_cfg):
    return default_cfg.scenario


@pytest.fixture(scope="session")
def short_scenario(default_scenario):
    """Default plant and servos on a short record (2^20 samples after 3 ms settle)."""
    return dataclasses.replace(default_scenario, duration=2**20 / 60e6, settle=0.003)


def band_db(f, measured, expected, lo, hi, per_decade=5):
    """Max |dB| between band-averaged ``measured`` and ``expected`` on [lo, hi]."""
    from lockloop.spectral import band_average

    _, m, _ = band_average(f, measured, per_decade, lo, hi)
    _, e, _ = band_average(f, expected, per_decade, lo, hi)
    return float(np.max(np.abs(10 * np.log10(m / e))))


COMPARISON_SECONDS = {}


@pytest.fixture(scope="session")
def default_comparison(default_scenario):
    """run_comparison over the four beat-note configurations, default seed.

    The build time is kept in ``COMPARISON_SECONDS["build"]`` for runtime reports.
    """
    from lockloop.cascade import run_comparison

    t0 = time.perf_counter()
    locks = ("free_run", "sas_only", "lc_only", "cascade")
    table = run_comparison([default_scenario.with_lock(k) for k in locks])
    COMPARISON_SECONDS["build"] = time.perf_counter() - t0
    return table


ACCEPTANCE = {}


def record_acceptance(number, title, ok, detail, elapsed, limit):
    """Store and print one acceptance line; the summary hook reprints them all."""
    within = limit is None or elapsed <= limit
    status = "PASS" if ok and within else "FAIL"
    budget = f" (limit {limit:.0f} s)" if limit is not None else ""
    line = f"criterion {number} [{status}] {title}: {detail}; runtime {elapsed:.1f} s{budget}"
    ACCEPTANCE[number] = line
    print(line)
    return ok and within


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def quick_config_text(**replace):
    """Default config on a 20 ms record, with optional literal line edits."""
    from lockloop.config import default_config_text

    text = default_config_text()
    text = text.replace("duration_s: 0.262144", "duration_s: 0.02").replace("settle_s: 0.0175", "settle_s: 0.005")
    for old, new in replace.items():
        assert old in text
        text = text.replace(old, new)
    return text


@pytest.fixture
def quick_config(tmp_path):
    p = tmp_path / "quick.yaml"
    p.write_text(quick_config_text())
    return p
