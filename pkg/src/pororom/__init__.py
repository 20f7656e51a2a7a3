"""Reduced-order models for linear poroelastic consolidation.

Offline: a coupled CG2/DG1 full-order Biot solver with fixed-stress
splitting produces snapshots over a training parameter grid, POD
compresses them, and small dense nets regress the reduced coefficients.
Online: a forward pass and a basis expansion replace the solver.
"""

from .config import PipelineConfig, config_hash, make_config
from .fom import (BoundaryConditions, FixedStressConvergenceError,
                  FomTrajectory, RigidBodyModeError, build_biot_operators,
                  build_time_schedule, default_consolidation_bcs, run_fom,
                  undrained_initialize)
from .materials import MaterialConfig, PermeabilityField
from .mesh import Mesh, build_unit_square_mesh
from .mlp import (MlpParams, TrainingDivergedError, init_mlp,
                  predict_coefficients, train, train_on_table)
from .pod import (ReducedBasis, SnapshotSet, nested_pod,
                  normalized_eigenvalues, standard_pod)
from .projection import CoefficientTable, build_table, project
from .rom import (RomArtifact, me_metric, mse_metric, reconstruct,
                  rom_trajectory, sensitivity_sweep)
from .pipeline import run_offline, evaluate_queries

__all__ = [
    "BoundaryConditions", "CoefficientTable", "FixedStressConvergenceError",
    "FomTrajectory", "MaterialConfig", "Mesh", "MlpParams", "PermeabilityField",
    "PipelineConfig", "ReducedBasis", "RigidBodyModeError", "RomArtifact",
    "SnapshotSet", "TrainingDivergedError", "build_biot_operators",
    "build_table", "build_time_schedule", "build_unit_square_mesh",
    "config_hash", "default_consolidation_bcs", "evaluate_queries", "init_mlp",
    "make_config", "me_metric", "mse_metric", "nested_pod",
    "normalized_eigenvalues", "predict_coefficients", "project", "reconstruct",
    "rom_trajectory", "run_fom", "run_offline", "sensitivity_sweep",
    "standard_pod", "train", "train_on_table", "undrained_initialize",
]

__version__ = "0.1.0"
