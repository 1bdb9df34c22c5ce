"""Class-conditioned VAE with separate class-dependent and shared latents.

The package bundles a small float64 autodiff engine, closed-form divergences
for the diagonal Gaussian and Dirichlet families, the N-VAE model and its
training objectives, dataset utilities (IDX files and a synthetic shape
renderer), diagnostics (per-dimension KL detectors, latent traversals, an
augmentation-by-substitution harness), a scikit-learn style estimator, and a
command-line interface.
"""

__version__ = "0.1.0"

from .autodiff import Node, ParamStore, Tensor, backward  # noqa: E402,F401
from .data import Dataset, SyntheticSpec, load_idx, make_synthetic, save_idx  # noqa: E402,F401
from .distributions import DiagGaussian, DirichletParams  # noqa: E402,F401
from .model import LatentLayout, NvaeModel  # noqa: E402,F401
from .training import TrainConfig, TrainReport, train  # noqa: E402,F401
from .estimator import NVAE  # noqa: E402,F401

__all__ = [
    "__version__",
    "Node",
    "ParamStore",
    "Tensor",
    "backward",
    "Dataset",
    "SyntheticSpec",
    "load_idx",
    "save_idx",
    "make_synthetic",
    "DiagGaussian",
    "DirichletParams",
    "LatentLayout",
    "NvaeModel",
    "TrainConfig",
    "TrainReport",
    "train",
    "NVAE",
]
