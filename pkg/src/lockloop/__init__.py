"""Cascade-locked laser frequency-noise simulator.

A laser is locked to a low-cost Fabry-Perot cavity (PDH, fast loop) and the
cavity is locked to a saturated-absorption line (slow loop).  The package
synthesizes the noise processes, closes both loops in the time domain,
predicts the same spectra analytically, turns frequency-noise series into
beat-note lineshapes and pushes the residual noise through a Rydberg-EIT
readout model.
"""

from .cascade import (
    LOCK_CONFIGS,
    Rates,
    Scenario,
    SimResult,
    analytic_residual_psd,
    run_comparison,
    simulate,
    synthesize_noise,
)
from .config import LockloopConfig, load_config, parse_config
from .errors import (
    ConfigError,
    DomainError,
    FitConvergenceError,
    LoopInstabilityError,
    NoPeakError,
    SingularPointError,
)
from .lti import PidConfig, TransferFunction, bode, closed_loop_suppression, discretize, make_pid
from .noise import PsdModel, PsdSegment, TimeSeries, psd_eval, synthesize
from .pdh import CavityModel, PdhConfig, discriminator_slope, pdh_error_curve
from .readout import EitModel, OperatingPoint, readout_noise_psd, run_fig3_comparison, simulate_readout
from .sas import SasConfig, sas_error, sas_slope
from .spectral import beat_spectrum, beta_line_linewidth, fit_lineshape, half_power_width, welch_psd

__version__ = "0.1.0"
