"""Extract one representative plane segment per wall from its plinth band.

Plain RANSAC fragments rough or occluded plinths into many small planes.
This stage therefore extracts all facade-like candidate planes, clusters
them by normal similarity, merges each cluster, and then grows the largest
merged plane by re-admitting points of the other merged planes that pass a
geometric-consistency test: perpendicular distance below ``t_dis`` and a
re-estimated-normal deviation below ``t_theta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelNormalMismatch, NoCandidates
from .geometry import (
    PlaneParams,
    as_points,
    fit_plane,
    rotation_angle_between_normals,
    verticality_angle,
)
from .io import WallSurface
from .plinth import DEFAULT_HYPOTHESES, ransac_largest_plane

#: extracted segments whose normal deviates more than this from the model
#: wall normal are rejected as gross mismatches
MODEL_NORMAL_GATE_DEG = 30.0


@dataclass(frozen=True)
class GcParams:
    """Geometric-consistency thresholds; ``t_theta`` is half of ``t_alpha``."""

    t_dis: float
    t_theta: float

    def __post_init__(self):
        if self.t_dis <= 0 or self.t_theta <= 0:
            raise ValueError("GC thresholds must be positive")

    @classmethod
    def from_alpha(cls, t_dis: float, t_alpha: float) -> "GcParams":
        return cls(t_dis=t_dis, t_theta=0.5 * t_alpha)


@dataclass(frozen=True)
class ExtractionParams:
    t_dis: float = 0.02
    t_alpha: float = 10.0
    min_inliers: int | None = None
    n_hypotheses: int = DEFAULT_HYPOTHESES
    refit_batch: int = 64
    per_point_refit: bool = False
    model_gate_deg: float = MODEL_NORMAL_GATE_DEG

    def gc(self) -> GcParams:
        return GcParams.from_alpha(self.t_dis, self.t_alpha)

    def resolved_min_inliers(self, n_points: int) -> int:
        if self.min_inliers is not None:
            return self.min_inliers
        return max(50, n_points // 100)


@dataclass(eq=False)
class PlaneSegment:
    """Final LiDAR segment paired with its owning wall."""

    indices: np.ndarray
    plane: PlaneParams
    wall_id: str

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        if self.indices.size < 3:
            raise ValueError("a plane segment needs at least 3 points")


@dataclass(eq=False)
class MergedPlane:
    plane: PlaneParams
    indices: np.ndarray  # into the subspace point array


def extract_candidate_planes(
    points,
    t_dis: float,
    t_alpha: float,
    min_inliers: int,
    rng: np.random.Generator,
    n_hypotheses: int = DEFAULT_HYPOTHESES,
) -> list[tuple[PlaneParams, np.ndarray]]:
    """Repeated largest-plane extraction with inlier removal.

    Every extracted plane consumes its inliers; only facade-like planes
    (dihedral angle above ``t_alpha``) are kept as candidates.
    """
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("subspace is empty")
    remaining = np.arange(pts.shape[0])
    candidates: list[tuple[PlaneParams, np.ndarray]] = []
    while remaining.size >= max(3, min_inliers):
        found = ransac_largest_plane(pts[remaining], t_dis, min_inliers, rng, n_hypotheses)
        if found is None:
            break
        plane, rel = found
        absolute = remaining[rel]
        if verticality_angle(plane) > t_alpha:
            candidates.append((plane, absolute))
        remaining = np.delete(remaining, rel)
    if not candidates:
        raise NoCandidates("no facade-like plane extracted from the subspace")
    return candidates


def cluster_and_merge(
    candidates: list[tuple[PlaneParams, np.ndarray]],
    t_theta: float,
    points,
) -> list[MergedPlane]:
    """Greedy normal clustering, largest candidates first.

    A candidate joins the first cluster whose founding normal lies within
    ``t_theta`` (folded angle); every cluster is merged by re-fitting one
    plane over the union of its members' inliers.
    """
    if not candidates:
        raise ValueError("need at least one candidate plane")
    pts = as_points(points)
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i][1].size, i))
    clusters: list[dict] = []
    for i in order:
        plane, idx = candidates[i]
        for cluster in clusters:
            if rotation_angle_between_normals(plane.normal, cluster["normal"]) < t_theta:
                cluster["members"].append(idx)
                break
        else:
            clusters.append({"normal": plane.normal, "members": [idx]})

    merged: list[MergedPlane] = []
    for cluster in clusters:
        union = np.unique(np.concatenate(cluster["members"]))
        merged.append(MergedPlane(plane=fit_plane(pts[union]), indices=union))
    return merged


class _IncrementalPlane:
    """Running first/second moments allowing O(1) trial plane re-fits."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        self.count = pts.shape[0]
        self.first = pts.sum(axis=0)
        self.second = pts.T @ pts

    def add(self, p: np.ndarray) -> None:
        self.count += 1
        self.first += p
        self.second += np.outer(p, p)

    def normal_with(self, p: np.ndarray | None = None) -> np.ndarray:
        """Unit normal of the least-squares plane, optionally with one
        extra trial point included."""
        count, first, second = self.count, self.first, self.second
        if p is not None:
            count = count + 1
            first = first + p
            second = second + np.outer(p, p)
        scatter = second - np.outer(first, first) / count
        _, vectors = np.linalg.eigh(scatter)
        return vectors[:, 0]

    def plane(self, align_to: np.ndarray) -> PlaneParams:
        normal = self.normal_with(None)
        if normal @ align_to < 0:
            normal = -normal
        centroid = self.first / self.count
        return PlaneParams(normal, -float(normal @ centroid))


def grow_seed_plane(
    merged: list[MergedPlane],
    points,
    gc: GcParams,
    refit_batch: int = 64,
    per_point_refit: bool = False,
) -> tuple[PlaneParams, np.ndarray]:
    """Grow the largest merged plane over the other merged planes' points.

    Candidate points are visited in ascending point index.  A candidate is
    accepted when it passes both GC criteria strictly; the reference plane
    is re-fitted after every ``refit_batch`` acceptances (after every single
    acceptance in ``per_point_refit`` mode).  The accepted set is finally
    re-fitted by least squares and trimmed to ``t_dis`` membership.
    """
    if not merged:
        raise ValueError("need at least one merged plane")
    pts = as_points(points)

    def mean_residual(m: MergedPlane) -> float:
        return float(m.plane.distances(pts[m.indices]).mean())

    seed_pos = min(range(len(merged)), key=lambda i: (-merged[i].indices.size, mean_residual(merged[i])))
    seed = merged[seed_pos]
    accepted = list(seed.indices)
    stats = _IncrementalPlane(pts[seed.indices])
    normal = seed.plane.normal
    offset = seed.plane.offset

    candidates = [m.indices for i, m in enumerate(merged) if i != seed_pos]
    if candidates:
        cand = np.sort(np.concatenate(candidates))
        since_refit = 0
        for idx in cand:
            p = pts[idx]
            if abs(normal @ p + offset) >= gc.t_dis:
                continue
            trial_normal = stats.normal_with(p)
            if rotation_angle_between_normals(normal, trial_normal) >= gc.t_theta:
                continue
            stats.add(p)
            accepted.append(idx)
            since_refit += 1
            if per_point_refit or since_refit >= refit_batch:
                updated = stats.plane(align_to=normal)
                normal, offset = updated.normal, updated.offset
                since_refit = 0

    accepted_arr = np.asarray(sorted(accepted), dtype=np.intp)
    final_plane = fit_plane(pts[accepted_arr])
    keep = final_plane.distances(pts[accepted_arr]) <= gc.t_dis
    return final_plane, accepted_arr[keep]


def extract_wall_segment(
    points,
    subspace_indices,
    wall: WallSurface,
    params: ExtractionParams,
    rng: np.random.Generator,
) -> PlaneSegment:
    """End-to-end extraction of the wall's LiDAR segment.

    ``subspace_indices`` select the plinth band inside ``points`` (the full
    source cloud); returned indices refer back to the source cloud.  A
    segment whose normal deviates more than ``model_gate_deg`` from the
    model plane is rejected, which protects the adjustment from matching a
    perpendicular structure on heavily occluded walls.
    """
    pts = as_points(points)
    sub_idx = np.asarray(subspace_indices, dtype=np.intp).reshape(-1)
    sub = pts[sub_idx]
    min_inliers = params.resolved_min_inliers(sub.shape[0])
    candidates = extract_candidate_planes(
        sub, params.t_dis, params.t_alpha, min_inliers, rng, params.n_hypotheses
    )
    merged = cluster_and_merge(candidates, params.gc().t_theta, sub)
    plane, kept = grow_seed_plane(
        merged, sub, params.gc(), refit_batch=params.refit_batch,
        per_point_refit=params.per_point_refit,
    )
    angle = rotation_angle_between_normals(plane.normal, wall.plane.normal)
    if angle > params.model_gate_deg:
        raise ModelNormalMismatch(wall.id, angle)
    return PlaneSegment(indices=sub_idx[kept], plane=plane, wall_id=wall.id)
