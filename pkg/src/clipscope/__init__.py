"""clipscope: explanation engine for dual-encoder image-text matching.

Computes gradient-weighted attention heat maps for CLIP-style models,
scores them with deletion/insertion and localization metrics, and
fine-tunes the encoders with explanation-derived region-phrase alignment.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
