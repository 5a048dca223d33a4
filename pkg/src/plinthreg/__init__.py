"""Uncertainty-aware fine registration of building LiDAR clouds to LoD2 wall models.

The package aligns an outdoor LiDAR point cloud of a single building to its
semantic wall model by matching the wall plinth band (which the model's
footprint-extruded planes actually represent) instead of the offset upper
facade, solving the horizontal parameters in a pseudo-plane-constrained
Gauss-Helmert adjustment, and estimating the vertical shift separately from
ground data.
"""

__version__ = "0.1.0"

from .association import (
    AssociationResult,
    apply_ground_filter,
    associate_points,
    build_wall_buffers,
    filter_ground,
)
from .errors import RegistrationError
from .extraction import ExtractionParams, GcParams, PlaneSegment, extract_wall_segment
from .geometry import PlaneParams, RigidTransform, apply_transform, fit_plane
from .io import (
    DtmGrid,
    PointCloud,
    WallModel,
    WallSurface,
    read_dtm,
    read_point_cloud,
    read_report,
    read_wall_model,
    write_report,
)
from .metrics import CheckPointSet, MetricsReport, ReferenceModel, compute_metrics
from .pipeline import PipelineConfig, RegistrationResult, run_registration
from .plinth import CutoffRange, LocalizeParams, localize_representative_subspace
from .solver import Correspondence, SolverOptions, SolverReport, jacobian_check, solve
from .synth import SceneBundle, SceneSpec, generate, oracle_metrics
from .vertical import VerticalEstimate, denoise_ground, estimate_tz

__all__ = [
    "AssociationResult",
    "CheckPointSet",
    "Correspondence",
    "CutoffRange",
    "DtmGrid",
    "ExtractionParams",
    "GcParams",
    "LocalizeParams",
    "MetricsReport",
    "PipelineConfig",
    "PlaneParams",
    "PlaneSegment",
    "PointCloud",
    "ReferenceModel",
    "RegistrationError",
    "RegistrationResult",
    "RigidTransform",
    "SceneBundle",
    "SceneSpec",
    "SolverOptions",
    "SolverReport",
    "VerticalEstimate",
    "WallModel",
    "WallSurface",
    "apply_ground_filter",
    "apply_transform",
    "associate_points",
    "build_wall_buffers",
    "compute_metrics",
    "denoise_ground",
    "estimate_tz",
    "extract_wall_segment",
    "filter_ground",
    "fit_plane",
    "generate",
    "jacobian_check",
    "localize_representative_subspace",
    "oracle_metrics",
    "read_dtm",
    "read_point_cloud",
    "read_report",
    "read_wall_model",
    "run_registration",
    "solve",
    "write_report",
]
