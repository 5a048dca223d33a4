"""Registration error metrics at footprint check points.

Accuracy is scored by a cylinder-projected signed distance between the
registered cloud and the analytic reference model, evaluated at stable
check points near the building footprint: horizontal check points sit on
the wall planes, vertical ones on the ground surface.  The per-direction
mean and sample standard deviation of those distances form the report
metrics.

The projection is the core step of cloud-to-cloud distancing along a local
normal; because the reference here is an exact parametric model rather
than a second noisy cloud, a single projection scale suffices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, NoNeighbors
from .geometry import PlaneParams, as_points, fit_plane
from .io import DtmGrid, WallSurface


@dataclass(frozen=True)
class MetricsParams:
    cylinder_radius: float = 0.1
    max_depth: float = 1.0
    normal_radius: float = 0.3


@dataclass(eq=False)
class CheckPointSet:
    """Check points split by the error direction they probe."""

    horizontal: np.ndarray
    vertical: np.ndarray

    def __post_init__(self):
        self.horizontal = as_points(self.horizontal) if len(self.horizontal) else np.empty((0, 3))
        self.vertical = as_points(self.vertical) if len(self.vertical) else np.empty((0, 3))


@dataclass(eq=False)
class MetricsReport:
    err_h: float
    err_v: float
    std_h: float
    std_v: float
    distances_h: np.ndarray = field(repr=False, default=None)
    distances_v: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "err_h": self.err_h,
            "err_v": self.err_v,
            "std_h": self.std_h,
            "std_v": self.std_v,
            "n_h": int(self.distances_h.size),
            "n_v": int(self.distances_v.size),
        }


class ReferenceModel:
    """Analytic reference: wall planes plus an optional ground surface."""

    def __init__(self, walls: list[WallSurface], ground: DtmGrid | PlaneParams | None = None):
        self.walls = list(walls)
        self.ground = ground

    def normal_at(self, point, normal_radius: float = 0.3) -> np.ndarray:
        """Local unit normal of the nearest reference surface.

        Wall planes return their model normal; a terrain grid returns the
        normal of a local plane fitted to grid cells within
        ``normal_radius`` (falling back to vertical when too few cells).
        """
        p = np.asarray(point, dtype=np.float64).reshape(3)
        best_normal = None
        best_dist = np.inf
        for wall in self.walls:
            d = abs(float(wall.plane.normal @ p + wall.plane.offset))
            if d < best_dist:
                best_dist = d
                best_normal = wall.plane.normal
        if self.ground is not None:
            if isinstance(self.ground, PlaneParams):
                d = abs(float(self.ground.normal @ p + self.ground.offset))
                if d < best_dist:
                    best_dist = d
                    best_normal = self.ground.normal
            else:
                surf = float(self.ground.sample(p[0], p[1]))
                if np.isfinite(surf) and abs(p[2] - surf) < best_dist:
                    best_dist = abs(p[2] - surf)
                    best_normal = self._ground_normal(p, normal_radius)
        if best_normal is None:
            raise DegenerateInput("reference model has no surfaces")
        return best_normal

    def _ground_normal(self, p: np.ndarray, radius: float) -> np.ndarray:
        cells = self.ground.grid_points()
        near = cells[np.linalg.norm(cells[:, :2] - p[:2], axis=1) <= max(radius, self.ground.cell_size)]
        if near.shape[0] < 3:
            return np.array([0.0, 0.0, 1.0])
        try:
            normal = fit_plane(near).normal
        except DegenerateInput:
            return np.array([0.0, 0.0, 1.0])
        return normal if normal[2] >= 0 else -normal


def m3c2_style_distance(
    point,
    cloud_points,
    normal,
    cylinder_radius: float = 0.1,
    max_depth: float = 1.0,
    tree: cKDTree | None = None,
) -> float:
    """Signed mean axial offset of cloud points inside a normal cylinder.

    The cylinder axis passes through ``point`` along ``normal`` with the
    given radius and half-length ``max_depth``.  Raises
    :class:`NoNeighbors` when the cylinder is empty.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    pts = as_points(cloud_points)
    if tree is not None:
        reach = float(np.hypot(cylinder_radius, max_depth))
        idx = tree.query_ball_point(p, r=reach)
        pts = pts[idx]
    rel = pts - p
    axial = rel @ n
    radial_sq = np.einsum("ij,ij->i", rel, rel) - axial**2
    inside = (np.abs(axial) <= max_depth) & (radial_sq <= cylinder_radius**2)
    if not inside.any():
        raise NoNeighbors([p])
    return float(axial[inside].mean())


def compute_metrics(
    check: CheckPointSet,
    cloud_points,
    reference: ReferenceModel,
    params: MetricsParams = MetricsParams(),
) -> MetricsReport:
    """Mean and sample standard deviation (n-1 divisor) of the signed
    distances over each check-point set."""
    pts = as_points(cloud_points)
    tree = cKDTree(pts)

    def evaluate(check_points: np.ndarray) -> np.ndarray:
        out = np.empty(check_points.shape[0])
        missing = []
        for i, p in enumerate(check_points):
            normal = reference.normal_at(p, params.normal_radius)
            try:
                out[i] = m3c2_style_distance(
                    p, pts, normal, params.cylinder_radius, params.max_depth, tree=tree
                )
            except NoNeighbors:
                missing.append(p)
        if missing:
            raise NoNeighbors(missing)
        return out

    for name, arr in (("horizontal", check.horizontal), ("vertical", check.vertical)):
        if arr.shape[0] < 2:
            raise ValueError(f"need at least 2 {name} check points for a std estimate")
    dist_h = evaluate(check.horizontal)
    dist_v = evaluate(check.vertical)
    return MetricsReport(
        err_h=float(dist_h.mean()),
        err_v=float(dist_v.mean()),
        std_h=float(dist_h.std(ddof=1)),
        std_v=float(dist_v.std(ddof=1)),
        distances_h=dist_h,
        distances_v=dist_v,
    )


def generate_check_points(
    walls: list[WallSurface],
    ground: DtmGrid | PlaneParams | None,
    spacing: float = 0.5,
    height_above_base: float = 0.25,
    ground_offset: float = 1.5,
) -> CheckPointSet:
    """Deterministic check points along the footprint band.

    Horizontal points are sampled on every wall plane along its base at
    ``spacing``, ``height_above_base`` metres above that wall's lowest
    vertex.  Vertical points follow the same spacing on the ground surface
    ``ground_offset`` metres outward of each wall.
    """
    centroid = np.mean(np.vstack([w.vertices for w in walls]), axis=0)
    horizontal: list[np.ndarray] = []
    vertical: list[np.ndarray] = []
    for wall in sorted(walls, key=lambda w: w.id):
        n = wall.plane.normal
        horiz = np.array([n[0], n[1], 0.0])
        if np.linalg.norm(horiz) < 1e-9:
            continue
        sweep = horiz / np.linalg.norm(horiz)
        lateral = np.array([-sweep[1], sweep[0], 0.0])
        up = np.cross(n, lateral)  # in-plane, positive z component
        if up[2] < 0:
            up = -up
        u = wall.vertices @ lateral
        z_base = float(wall.vertices[:, 2].min())
        z_pt = z_base + height_above_base
        anchor = -wall.plane.offset * n  # closest plane point to the origin
        for ui in np.arange(u.min() + spacing / 2, u.max(), spacing):
            # in-plane point at lateral coordinate ui and height z_pt;
            # lateral is horizontal, so the height is set by the up-axis alone
            alpha = ui - float(anchor @ lateral)
            beta = (z_pt - anchor[2]) / up[2]
            horizontal.append(anchor + alpha * lateral + beta * up)
            p = horizontal[-1]
            if ground is not None:
                outward = sweep if float(sweep @ (p - centroid)[:3]) >= 0 else -sweep
                gp_xy = p[:2] + outward[:2] * ground_offset
                if isinstance(ground, DtmGrid):
                    gz = float(ground.sample(gp_xy[0], gp_xy[1]))
                    if not np.isfinite(gz):
                        continue
                else:
                    gn = ground.normal
                    if abs(gn[2]) < 1e-9:
                        continue
                    gz = -(ground.offset + gn[0] * gp_xy[0] + gn[1] * gp_xy[1]) / gn[2]
                vertical.append(np.array([gp_xy[0], gp_xy[1], gz]))
    return CheckPointSet(
        horizontal=np.array(horizontal) if horizontal else np.empty((0, 3)),
        vertical=np.array(vertical) if vertical else np.empty((0, 3)),
    )


def write_distance_csv(path, check: CheckPointSet, report: MetricsReport) -> None:
    """Per-check-point signed distances as delimited output."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["set", "x", "y", "z", "distance"])
        for p, d in zip(check.horizontal, report.distances_h):
            writer.writerow(["H", f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", f"{d:.6f}"])
        for p, d in zip(check.vertical, report.distances_v):
            writer.writerow(["V", f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", f"{d:.6f}"])
