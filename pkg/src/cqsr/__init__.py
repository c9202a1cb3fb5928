"""Arbitrary-scale super-resolution with a run-time component budget.

A latent grid from a small residual encoder conditions a recurrent predictor
that emits ``K`` Fourier components per step. Pixels are reconstructed as a
DC colour plus a sum of sinusoids of the offset to the nearest latent cell,
and the number of components ``T`` can be chosen freely at inference.
"""

from .fourier_core import ComponentSet, FourierComponent, alignment_loss, reconstruct_batch, reconstruct_rgb, truncate_top_t
from .model import CQSR, CQConfig, ModelConfig, build_model

__version__ = "0.1.0"

__all__ = [
    "CQSR",
    "CQConfig",
    "ComponentSet",
    "FourierComponent",
    "ModelConfig",
    "alignment_loss",
    "build_model",
    "reconstruct_batch",
    "reconstruct_rgb",
    "truncate_top_t",
]
