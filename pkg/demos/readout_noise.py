"""EIT readout noise for the residual laser noise of each lock.

Prints the readout noise relative to the intensity floor, averaged over
10-100 kHz, at the resonant and at the detuned operating point.
"""

import sys

import numpy as np

from lockloop import load_config, run_fig3_comparison
from lockloop.cascade import residual_series
from lockloop.readout import FIG3_LOCKS


def main(config=None):
    cfg = load_config(config)
    ro = cfg.readout
    series = residual_series(cfg.scenario, FIG3_LOCKS)
    table = run_fig3_comparison(series, cfg.eit, detuning=ro.detuned_coupling, band=ro.band,
                                sample_rate=ro.sample_rate, segment_len=ro.segment_len)
    print(f"{'lock':16s} {'mode':9s} mean dB above floor, {ro.band[0] / 1e3:g}-{ro.band[1] / 1e3:g} kHz")
    for (lock, mode), curve in sorted(table.curves.items()):
        m = (curve.frequencies >= ro.band[0]) & (curve.frequencies <= ro.band[1])
        print(f"{lock:16s} {mode:9s} {np.mean(curve.db_re_floor[m]):8.2f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
