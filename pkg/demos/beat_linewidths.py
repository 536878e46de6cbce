"""Beat-note linewidths of the four lock configurations.

Runs the default scenario on common random numbers and prints the
half-power width, the Gaussian and Lorentzian fit widths and the
beta-line estimate for each configuration.  Takes about a minute.
"""

import sys

from lockloop import load_config, run_comparison
from lockloop.spectral import half_power_width

LOCKS = ("free_run", "sas_only", "lc_only", "cascade")


def main(config=None):
    sc = load_config(config).scenario
    table = run_comparison([sc.with_lock(k) for k in LOCKS])
    print(f"{'lock':10s} {'half-power':>12s} {'gaussian':>12s} {'lorentzian':>12s} {'beta line':>12s}   [kHz]")
    for k in LOCKS:
        e = table[k]
        g, lz = e.fits["gaussian"].fwhm, e.fits["lorentzian"].fwhm
        print(f"{k:10s} {half_power_width(e.beat) / 1e3:12.1f} {g / 1e3:12.1f} {lz / 1e3:12.1f} "
              f"{e.beta_linewidth[0] / 1e3:12.1f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
