"""Statistical analysis of fluorescence excitation-emission matrices.

Multiplicative variation estimates, per-pixel tests of the linear mixing
model, and non-negative least squares abundance estimation with replicate
resampling.
"""

__version__ = "0.1.0"

from .core import (
    AllPixels,
    EemGrid,
    MixtureDesign,
    OffsetBand,
    ReplicateSet,
    StrictlyLonger,
    VectorizedEem,
    WavelengthAxis,
    build_mask,
    devectorize,
    pixel_mean,
    vectorize,
)
from .nnls import NnlsSolution, nnls_solve

__all__ = [
    "AllPixels",
    "EemGrid",
    "MixtureDesign",
    "NnlsSolution",
    "OffsetBand",
    "ReplicateSet",
    "StrictlyLonger",
    "VectorizedEem",
    "WavelengthAxis",
    "build_mask",
    "devectorize",
    "nnls_solve",
    "pixel_mean",
    "vectorize",
]
