"""Topology-aware adversarial attacks on 3D point clouds, in numpy."""
from .attack import AttackConfig, AttackResult, clip_ball, random_tangent_init, run_attack, tangent_project
from .classifier import PointClassifier, TrainConfig, cw_margin_loss, train
from .delaunay import Triangulation, delaunay
from .errors import (DegenerateInputError, DegenerateNeighborhoodError, DegenerateSimplexError,
                     EigengapError, EmptyCohortError, InvalidArgumentError, ParseError, TopoAdvError)
from .persistence import PersistenceDiagram, alpha_filtration, compute_persistence, diagram, persistence_entropy
from .pointcloud import CleanStats, PointCloud, clean_stats

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "CleanStats", "DegenerateInputError",
    "DegenerateNeighborhoodError", "DegenerateSimplexError", "EigengapError", "EmptyCohortError",
    "InvalidArgumentError", "ParseError", "PersistenceDiagram", "PointClassifier", "PointCloud",
    "TopoAdvError", "TrainConfig", "Triangulation", "alpha_filtration", "clean_stats", "clip_ball",
    "compute_persistence", "cw_margin_loss", "delaunay", "diagram", "persistence_entropy",
    "random_tangent_init", "run_attack", "tangent_project", "train",
]
