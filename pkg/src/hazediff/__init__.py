"""Conditional diffusion dehazing toolkit at desk scale.

Haze synthesis and augmentation, a frequency compensation block for skip
connections, a numpy noise-prediction network with hand-written gradients,
DDPM/DDIM sampling, spectral diagnostics and image-quality metrics.
"""

__version__ = "0.1.0"
