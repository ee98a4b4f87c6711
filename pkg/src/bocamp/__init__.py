"""CAMP, AMP and OAMP/VAMP for sparse recovery: tap design, state evolution and simulation."""
from .denoiser import cross_mse, denoise, mmse, xi_bar
from .model import NoiseModel, Prior, ProblemInstance, SpectrumSpec, build_operator, sample_instance
from .se import FixedPoint, SeState, fixed_point, oamp_vamp_se, se_run
from .solvers import RunRecord, run_amp, run_camp, run_oamp_vamp
from .taps import TapSet, taps_geometric, taps_iid_mean, taps_row_orthogonal, verify_generating_condition

__version__ = "0.1.0"
