"""Data-driven model-predictive control with cluster-classify-regress
forward surrogates."""
from .ccr import CcrConfig, CcrModel, ccr_fit, ccr_predict, fit_forward_model
from .dataio import Dataset, ScalingSpec, load_csv
from .mpc import MpcConfig, MpcTrajectory, RcPlant, run_batch, run_sequential

__all__ = [
    "CcrConfig",
    "CcrModel",
    "Dataset",
    "MpcConfig",
    "MpcTrajectory",
    "RcPlant",
    "ScalingSpec",
    "ccr_fit",
    "ccr_predict",
    "fit_forward_model",
    "load_csv",
    "run_batch",
    "run_sequential",
]
