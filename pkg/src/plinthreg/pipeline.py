"""End-to-end registration pipeline shared by the CLI and the test suite.

Stages: buffer association -> per-wall plinth localisation and segment
extraction (parallelisable across walls) -> constrained adjustment of the
horizontal parameters -> vertical alignment against ground data -> error
metrics.  Every stage result is kept on the result object so callers can
inspect, dump or plot intermediate state.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import multiprocessing as mp

import numpy as np

from .association import (
    AssociationResult,
    apply_ground_filter,
    associate_points,
    build_wall_buffers,
)
from .errors import (
    DegenerateGeometry,
    ModelNormalMismatch,
    NoCandidates,
    NoNeighbors,
    NoValidFacade,
    RankDeficient,
    RegistrationError,
)
from .extraction import ExtractionParams, PlaneSegment, extract_wall_segment
from .geometry import (
    RigidTransform,
    fit_plane,
    rotation_angle_between_normals,
)
from .io import DtmGrid, PointCloud, WallSurface
from .metrics import (
    CheckPointSet,
    MetricsParams,
    MetricsReport,
    ReferenceModel,
    compute_metrics,
    generate_check_points,
)
from .plinth import CutoffRange, LocalizeParams, localize_representative_subspace, wall_rng
from .solver import Correspondence, SolverOptions, SolverReport, solve
from .vertical import VerticalEstimate, denoise_ground, estimate_tz, sample_surface_points


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs; CLI flags map onto these fields 1:1."""

    thickness: float = 1.0
    ground_band: float = 0.3
    t_dis: float = 0.02
    t_alpha: float = 10.0
    radius: float = 0.5
    min_pairs: int = 10
    seed: int = 0
    workers: int = 1
    include_pseudo_plane: bool = True
    skip_vertical: bool = False
    #: baseline mode: skip plinth localisation and fit the whole buffer set
    skip_localize: bool = False
    min_inliers: int | None = None
    max_rounds: int = 20
    n_hypotheses: int = 1000
    refit_batch: int = 64
    per_point_refit: bool = False
    denoise_k: int = 8
    denoise_sigma: float = 2.0
    max_iter: int = 50
    tol: float = 1e-10
    model_gate_deg: float = 30.0
    with_metrics: bool = True
    check_spacing: float = 0.5
    metrics: MetricsParams = field(default_factory=MetricsParams)
    #: cap on ground points fed into the coupled (no-pseudo-plane) solve
    ground_corr_cap: int = 50_000

    def __post_init__(self):
        positive = {
            "thickness": self.thickness, "ground_band": self.ground_band,
            "t_dis": self.t_dis, "radius": self.radius,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.t_alpha < 90.0:
            raise ValueError("t_alpha must be in (0, 90) degrees")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def localize_params(self) -> LocalizeParams:
        return LocalizeParams(
            t_dis=self.t_dis, t_alpha=self.t_alpha, min_inliers=self.min_inliers,
            max_rounds=self.max_rounds, n_hypotheses=self.n_hypotheses,
        )

    def extraction_params(self) -> ExtractionParams:
        return ExtractionParams(
            t_dis=self.t_dis, t_alpha=self.t_alpha, min_inliers=self.min_inliers,
            n_hypotheses=self.n_hypotheses, refit_batch=self.refit_batch,
            per_point_refit=self.per_point_refit, model_gate_deg=self.model_gate_deg,
        )


@dataclass(eq=False)
class WallDiagnostics:
    wall_id: str
    n_buffer: int = 0
    n_subspace: int = 0
    n_segment: int = 0
    cutoff: tuple[float, float] | None = None
    normal_angle_deg: float | None = None
    rms_residual: float | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "id": self.wall_id,
            "n_buffer": self.n_buffer,
            "n_subspace": self.n_subspace,
            "n_segment": self.n_segment,
            "cutoff": list(self.cutoff) if self.cutoff is not None else None,
            "normal_angle_deg": self.normal_angle_deg,
            "rms_residual": self.rms_residual,
            "error": self.error,
        }


@dataclass(eq=False)
class RegistrationResult:
    transform: RigidTransform
    stage1: SolverReport
    vertical: VerticalEstimate | None
    association: AssociationResult
    segments: dict[str, PlaneSegment]
    cutoffs: dict[str, CutoffRange]
    wall_diagnostics: list[WallDiagnostics]
    metrics: MetricsReport | None
    check_points: CheckPointSet | None
    warnings: list[str]
    timings: dict[str, float]


def _wall_task(payload: dict) -> dict:
    """Localise and extract one wall; runs in a worker process."""
    points = payload["points"]
    wall: WallSurface = payload["wall"]
    config: PipelineConfig = payload["config"]
    rng = wall_rng(config.seed, wall.id)
    out: dict = {"wall_id": wall.id, "error": None, "cutoff": None}
    try:
        if config.skip_localize:
            sub_rel = np.arange(points.shape[0])
        else:
            sub_rel, cutoff = localize_representative_subspace(
                points, config.localize_params(), rng
            )
            out["cutoff"] = (cutoff.z_min, cutoff.z_max)
        out["n_subspace"] = int(sub_rel.size)
        segment = extract_wall_segment(
            points, sub_rel, wall, config.extraction_params(), rng
        )
        out["segment_rel"] = segment.indices
        out["plane"] = segment.plane
        out["normal_angle_deg"] = rotation_angle_between_normals(
            segment.plane.normal, wall.plane.normal
        )
    except (NoValidFacade, NoCandidates, ModelNormalMismatch, ValueError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def localize_and_extract(
    cloud: PointCloud,
    association: AssociationResult,
    walls: list[WallSurface],
    config: PipelineConfig,
) -> tuple[dict[str, PlaneSegment], dict[str, CutoffRange], list[WallDiagnostics]]:
    """Run the per-wall stages, optionally across a process pool.

    Per-wall random streams are seeded from (seed, wall id), so results are
    identical for any worker count or scheduling order.
    """
    walls_by_id = {w.id: w for w in walls}
    tasks = []
    for wall_id in sorted(association.per_wall):
        idx = association.per_wall[wall_id]
        tasks.append({
            "points": cloud.points[idx],
            "wall": walls_by_id[wall_id],
            "config": config,
            "cloud_indices": idx,
        })

    if config.workers > 1 and len(tasks) > 1:
        payloads = [{k: t[k] for k in ("points", "wall", "config")} for t in tasks]
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            outcomes = list(pool.map(_wall_task, payloads))
    else:
        outcomes = [_wall_task(t) for t in tasks]

    segments: dict[str, PlaneSegment] = {}
    cutoffs: dict[str, CutoffRange] = {}
    diagnostics: list[WallDiagnostics] = []
    for task, out in zip(tasks, outcomes):
        wall_id = out["wall_id"]
        diag = WallDiagnostics(wall_id=wall_id, n_buffer=int(task["cloud_indices"].size))
        diag.n_subspace = int(out.get("n_subspace", 0))
        if out.get("cutoff") is not None:
            diag.cutoff = out["cutoff"]
            cutoffs[wall_id] = CutoffRange(*out["cutoff"])
        if out["error"] is not None:
            diag.error = out["error"]
        else:
            seg = PlaneSegment(
                indices=task["cloud_indices"][out["segment_rel"]],
                plane=out["plane"],
                wall_id=wall_id,
            )
            segments[wall_id] = seg
            diag.n_segment = int(seg.indices.size)
            diag.normal_angle_deg = out["normal_angle_deg"]
        diagnostics.append(diag)
    for wall_id in sorted(set(walls_by_id) - set(association.per_wall)):
        diagnostics.append(WallDiagnostics(wall_id=wall_id, error="no points in buffer"))
    diagnostics.sort(key=lambda d: d.wall_id)
    return segments, cutoffs, diagnostics


def _ground_reference(dtm: DtmGrid | None, road: list[WallSurface] | None, spacing: float):
    if road:
        return np.vstack([sample_surface_points(s, spacing) for s in road])
    return dtm


def run_registration(
    cloud: PointCloud,
    walls: list[WallSurface],
    dtm: DtmGrid | None = None,
    config: PipelineConfig = PipelineConfig(),
    road_surfaces: list[WallSurface] | None = None,
) -> RegistrationResult:
    """Register ``cloud`` to the wall model.

    ``dtm`` (or ``road_surfaces``) supplies ground data for the vertical
    stage and the metrics; with ``config.skip_vertical`` the result
    transform keeps t_z = 0.
    """
    timings: dict[str, float] = {}
    warnings: list[str] = []

    t0 = time.perf_counter()
    buffers = build_wall_buffers(walls, config.thickness)
    association = associate_points(cloud, buffers)
    if dtm is not None:
        association = apply_ground_filter(association, cloud, dtm, config.ground_band)
    timings["associate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    segments, cutoffs, diagnostics = localize_and_extract(cloud, association, walls, config)
    timings["per_wall"] = time.perf_counter() - t0
    for diag in diagnostics:
        if diag.error:
            warnings.append(f"wall {diag.wall_id}: {diag.error}")

    walls_by_id = {w.id: w for w in walls}
    correspondences = [
        Correspondence(
            model_plane=walls_by_id[wall_id].plane,
            points=cloud.points[seg.indices],
            wall_id=wall_id,
        )
        for wall_id, seg in sorted(segments.items())
    ]
    if not correspondences:
        raise DegenerateGeometry("no wall produced a usable plane segment")

    if not config.include_pseudo_plane:
        if dtm is None or association.ground_indices.size == 0:
            raise RankDeficient(
                "coupled solve requested (pseudo-plane off) but no ground "
                "correspondence is available; supply a terrain grid"
            )
        ground_pts = cloud.points[association.ground_indices]
        stride = max(1, int(np.ceil(ground_pts.shape[0] / config.ground_corr_cap)))
        ground_pts = ground_pts[::stride]
        ground_plane = fit_plane(dtm.grid_points())
        correspondences.append(
            Correspondence(model_plane=ground_plane, points=ground_pts, wall_id="__ground__")
        )

    t0 = time.perf_counter()
    options = SolverOptions(
        max_iter=config.max_iter, tol=config.tol,
        include_pseudo_plane=config.include_pseudo_plane,
    )
    stage1 = solve(correspondences, options)
    timings["solve"] = time.perf_counter() - t0
    for diag in diagnostics:
        if diag.wall_id in stage1.per_wall_rms:
            diag.rms_residual = stage1.per_wall_rms[diag.wall_id]

    transform = stage1.transform
    vertical: VerticalEstimate | None = None
    if not config.skip_vertical:
        reference = _ground_reference(dtm, road_surfaces, config.check_spacing)
        if reference is None:
            raise ValueError("vertical stage needs a terrain grid or road surfaces")
        t0 = time.perf_counter()
        ground_idx = association.ground_indices
        moved = transform.apply(cloud.points[ground_idx])
        kept = denoise_ground(moved, k=config.denoise_k, sigma_mult=config.denoise_sigma)
        vertical = estimate_tz(
            moved[kept], reference, radius=config.radius, min_pairs=config.min_pairs
        )
        translation = transform.translation + np.array([0.0, 0.0, vertical.t_z])
        transform = RigidTransform(transform.rotation, translation)
        timings["vertical"] = time.perf_counter() - t0

    metrics_report: MetricsReport | None = None
    check: CheckPointSet | None = None
    if config.with_metrics:
        ground_for_metrics = None
        if road_surfaces:
            try:
                ground_for_metrics = fit_plane(
                    np.vstack([s.vertices for s in road_surfaces])
                )
            except RegistrationError:
                ground_for_metrics = None
        elif dtm is not None:
            ground_for_metrics = dtm
        if ground_for_metrics is not None:
            t0 = time.perf_counter()
            check = generate_check_points(
                walls, ground_for_metrics, spacing=config.check_spacing
            )
            reference = ReferenceModel(walls, ground_for_metrics)
            registered = transform.apply(cloud.points)
            try:
                metrics_report = compute_metrics(check, registered, reference, config.metrics)
            except (NoNeighbors, ValueError) as exc:
                warnings.append(f"metrics skipped: {exc}")
                metrics_report = None
            timings["metrics"] = time.perf_counter() - t0

    return RegistrationResult(
        transform=transform,
        stage1=stage1,
        vertical=vertical,
        association=association,
        segments=segments,
        cutoffs=cutoffs,
        wall_diagnostics=diagnostics,
        metrics=metrics_report,
        check_points=check,
        warnings=warnings,
        timings=timings,
    )


def naive_config(config: PipelineConfig) -> PipelineConfig:
    """Baseline variant that fits whole wall neighbourhoods (no plinth
    localisation); used for comparison experiments."""
    return replace(config, skip_localize=True)
