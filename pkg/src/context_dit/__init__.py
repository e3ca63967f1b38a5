"""Reference-conditioned video diffusion transformer, desk scale.

A fully inspectable pipeline: a numpy-backed autodiff engine, a gapped rotary
embedding, masked/cross/emphasize attention, dual-output DiT blocks, a
synthetic sprite-video dataset with an anti-copy reference pipeline, training
with AdamW + warmup, and attribute-round-trip evaluation metrics.
"""

from .errors import (
    ConfigError,
    ContextDitError,
    DeterminismError,
    ExtractionError,
    FormatError,
    GenError,
    MaskError,
    NumericError,
    RangeError,
    ShapeError,
    VocabError,
)
from .tensor import RngState, Tensor, finite_diff_check, no_grad, randn

__all__ = [
    "ConfigError",
    "ContextDitError",
    "DeterminismError",
    "ExtractionError",
    "FormatError",
    "GenError",
    "MaskError",
    "NumericError",
    "RangeError",
    "RngState",
    "ShapeError",
    "Tensor",
    "VocabError",
    "finite_diff_check",
    "no_grad",
    "randn",
]

__version__ = "0.1.0"
