"""Self-guided sampling for toy diffusion and flow models.

Analytic Gaussian-mixture scores, a small numpy MLP with its own
reverse-mode gradients, guidance combiners, samplers and evaluation tools.
"""
from .analytic import MixtureDensity, MixtureField, two_mode
from .guidance import GuidanceStack, Shift, cfg_combine, sg_combine, sg_prev_combine, shift_delta
from .sampler import SamplerConfig, run_chain
from .schedule import NoiseSchedule

__version__ = "0.1.0"

__all__ = [
    "GuidanceStack", "MixtureDensity", "MixtureField", "NoiseSchedule", "SamplerConfig", "Shift",
    "cfg_combine", "run_chain", "sg_combine", "sg_prev_combine", "shift_delta", "two_mode",
]
