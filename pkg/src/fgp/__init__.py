"""Fused Gaussian process (FGP) models for large spatial data.

The latent field is a low-rank multiresolution basis expansion plus a
lattice CAR process; likelihood, EM estimation and kriging use only sparse
``M x M`` and dense ``r x r`` factorizations.
"""

from .basis import BisquareSet, Lattice, bisquare_matrix, incidence_matrix, multiresolution_centers_1d, multiresolution_centers_2d
from .block import BlockFgp, BlockPartition, partition_lattice
from .car import CarModel, car_precision, gamma_bounds, proximity_first_order, proximity_threshold
from .em import EmConfig, FitReport, e_step, fit_em, initial_params, m_step_closed, profile_objective
from .likelihood import FgpParams, FgpStructure, Workspace, apply_C_inverse, log_det_C, neg_log_likelihood
from .linalg import dense_cholesky, sparse_cholesky
from .model import FgpDesign
from .predict import PredictionRequest, PredictionResult, predict, predict_rows

__version__ = "0.1.0"

__all__ = [
    "BisquareSet",
    "BlockFgp",
    "BlockPartition",
    "CarModel",
    "EmConfig",
    "FgpDesign",
    "FgpParams",
    "FgpStructure",
    "FitReport",
    "Lattice",
    "PredictionRequest",
    "PredictionResult",
    "Workspace",
    "apply_C_inverse",
    "bisquare_matrix",
    "car_precision",
    "dense_cholesky",
    "e_step",
    "fit_em",
    "gamma_bounds",
    "incidence_matrix",
    "initial_params",
    "log_det_C",
    "m_step_closed",
    "multiresolution_centers_1d",
    "multiresolution_centers_2d",
    "neg_log_likelihood",
    "partition_lattice",
    "predict",
    "predict_rows",
    "profile_objective",
    "proximity_first_order",
    "proximity_threshold",
    "sparse_cholesky",
]
