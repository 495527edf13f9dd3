"""Near-field MIMO radar: position CRB and cyclic maximum-likelihood localization."""

from .channel import CONSTANT, EXACT, SingularityError, build_steering_set, steering_derivative
from .config import ConfigError, Scenario, load_preset, parse_scenario, serialize_scenario
from .crb import (
    IdentifiabilityError,
    assemble_fisher,
    constant_amplitude_crb,
    crb_matrix,
    fisher_blocks,
    numeric_fisher_oracle,
    position_crb,
    scene_fisher,
    scene_position_crbs,
)
from .estimator import (
    EstimationResult,
    SearchRegion,
    aco_localize,
    aml_coefficients,
    concentrated_nll,
    estimate_noise_cov,
    grid_search_single,
)
from .montecarlo import match_targets, run_sweep
from .scene import ArrayGeometry, Scene, Target, build_upa
from .synth import empirical_snr, simulate_received
from .waveform import SignalBlock, generate_isotropic, sample_covariance

__version__ = "0.1.0"
