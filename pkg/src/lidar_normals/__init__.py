"""Synthetic LiDAR normals: simulation, classical estimation, graph-TV refinement, evaluation."""

from .core import Frame, NormalField, Pose, SensorConfig, compose, inverse, transform_normal, transform_point
from .energy import (EnergyReport, eikonal_energy, inverse_frequency_weights, l1_data_energy,
                     sgtv_energy, tgtv_energy, total_objective)
from .estimators import estimate_jet, estimate_pca, orient_viewpoint
from .graph import WeightedGraph, alignment_map, build_knn_graph, build_temporal_graph
from .metrics import DensityMap, MetricsReport, angular_errors, summarize, vmf_kde
from .refine import RefineConfig, refine_normals
from .simulator import Scene, Trajectory, assign_splits, raycast_frame, simulate_sequence

__version__ = "0.1.0"
