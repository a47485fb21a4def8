"""Object-level inversion-regeneration editing for flow-matching models, at desk scale."""
__version__ = "0.1.0"

from .latent import Codec, Latent, Shape, alloc_latent, codec_decode, codec_encode, gaussian_noise
from .scheduler import (
    InversionMode,
    TimeGrid,
    euler_step,
    fixed_point_invert_step,
    flow_matching_loss,
    invert_trajectory,
    make_time_grid,
    midpoint_step,
    naive_invert_step,
    sample_trajectory,
)
from .oracles import AnalyticField, ZeroField, monte_carlo_velocity, reference_integrate
from .attention import ControlSchedule, ToyDenoiser, ToyDenoiserConfig, compute_alignment, tokenize
from .pipeline import EditConfig, default_config, reconstruction_report, run_edit
