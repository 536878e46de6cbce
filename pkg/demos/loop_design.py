"""Print the loop design of the default scenario.

Unity-gain frequencies, phase margins and the inner-loop suppression at a
few frequencies, compared with a loose 300 Hz lock.
"""

import numpy as np

from lockloop import closed_loop_suppression, load_config
from lockloop.lti import phase_margin, unity_gain_frequency


def main():
    sc = load_config().scenario.with_lock("cascade")
    inner, outer = sc.inner_open_loop(), sc.outer_open_loop()
    loose = sc.loosened(300.0).inner_open_loop()
    for name, g in (("inner (PDH)", inner), ("outer (SAS)", outer), ("loose inner", loose)):
        print(f"{name:12s} UGF {unity_gain_frequency(g):12.1f} Hz   phase margin {phase_margin(g):5.1f} deg")
    print()
    print("     f [Hz]   |1/(1+G)| tight [dB]   tight vs loose [dB]")
    for f in (1e2, 1e3, 1e4, 1e5):
        t = closed_loop_suppression(inner, f)
        lo = closed_loop_suppression(loose, f)
        print(f"{f:11.0f}   {20 * np.log10(t):20.1f}   {20 * np.log10(lo / t):19.1f}")


if __name__ == "__main__":
    main()
