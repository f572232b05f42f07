"""Latent component estimation for grouped multiplex networks.

The model writes each layer's natural-parameter matrix as the sum of a
shared low-rank component, a group-level component, and an individual
layer component.  Fitting runs a two-stage nuclear-norm-penalized
proximal gradient scheme followed by an optional eigenvalue refit.
"""

from .data_model import (
    ComponentRanks,
    DatasetError,
    GroupIndex,
    LatentDecomposition,
    LatentPositions,
    MultiplexDataset,
    NumericalError,
    Signature,
    layer_keys,
    load_dataset,
    load_decomposition,
    save_dataset,
    save_decomposition,
)
from .edge_family import EdgeFamily, inverse_link_clamped, layer_grad, layer_loss
from .linalg import (
    ase_extract,
    detect_signature,
    eigh_trunc,
    hard_threshold,
    procrustes_rotate,
    soft_threshold,
    subspace_cosine,
)
from .sampler import AngleSpec, GroundTruth, sample_components, sample_layers
from .solver import FitResult, HyperParams, default_hyperparams, extract_positions, fit
from .tuning import CVConfig, CVResult, TuneResult, tune
from .baselines import fit_mase, fit_multiness, fit_oracle_nonconvex, oracle_estimators
from .metrics import SweepConfig, SweepResult, arfe, rfe, run_sweep
from .analysis import AnalysisConfig, AnalysisResult, run_analysis

__version__ = "0.1.0"
