"""Estimate the remaining vertical translation from ground data.

After the horizontal stage the cloud is aligned in every direction except
Z.  Each reference ground point (terrain grid cell or a sampled road-model
surface) gathers transformed cloud points within a search radius in the XY
plane; the mean Z deviation over all such pairs is the vertical shift.
Adding the returned ``t_z`` to the cloud's Z coordinates aligns it to the
reference model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientPairs
from .geometry import as_points
from .io import DtmGrid, WallSurface


@dataclass(eq=False)
class VerticalEstimate:
    t_z: float
    n_pairs: int
    deltas: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.t_z):
            raise ValueError("t_z must be finite")


def denoise_ground(points, k: int = 8, sigma_mult: float = 2.0) -> np.ndarray:
    """Statistical outlier removal; returns indices of retained points.

    A point survives when its mean distance to the k nearest neighbours
    stays within mean + sigma_mult * std of that statistic over the whole
    set.  Inputs with fewer than k + 1 points are returned unchanged.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    pts = as_points(points)
    n = pts.shape[0]
    if n < k + 1:
        return np.arange(n)
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=k + 1)
    mean_dist = dist[:, 1:].mean(axis=1)  # drop the self-match
    threshold = mean_dist.mean() + sigma_mult * mean_dist.std()
    return np.nonzero(mean_dist <= threshold)[0]


def estimate_tz(
    ground_points,
    reference,
    radius: float = 0.5,
    min_pairs: int = 10,
    min_neighbors: int = 3,
) -> VerticalEstimate:
    """Mean Z deviation between reference ground points and the cloud.

    ``reference`` is a :class:`DtmGrid` or an (M, 3) array of reference
    surface points.  Reference points with fewer than ``min_neighbors``
    cloud points within ``radius`` (XY distance) contribute no pair; fewer
    than ``min_pairs`` matched reference points raises
    :class:`InsufficientPairs`.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    ref = reference.grid_points() if isinstance(reference, DtmGrid) else as_points(reference)
    pts = as_points(ground_points)
    if pts.shape[0] == 0:
        raise InsufficientPairs(0, min_pairs)

    tree = cKDTree(pts[:, :2])
    neighborhoods = tree.query_ball_point(ref[:, :2], r=radius)
    deltas = []
    for ref_z, idx in zip(ref[:, 2], neighborhoods):
        if len(idx) >= min_neighbors:
            deltas.append(ref_z - float(pts[idx, 2].mean()))
    if len(deltas) < min_pairs:
        raise InsufficientPairs(len(deltas), min_pairs)
    deltas = np.asarray(deltas)
    return VerticalEstimate(t_z=float(deltas.mean()), n_pairs=deltas.size, deltas=deltas)


def sample_surface_points(surface: WallSurface, spacing: float = 0.5) -> np.ndarray:
    """Regular point samples on a planar polygon (road-model ground source).

    The polygon is rasterised on its XY bounding box at ``spacing`` and
    samples inside the footprint keep the plane's Z at that location.
    """
    verts = surface.vertices
    n = surface.plane.normal
    if abs(n[2]) < 1e-6:
        raise ValueError(f"surface {surface.id!r} is vertical, cannot sample as ground")
    xmin, ymin = verts[:, :2].min(axis=0)
    xmax, ymax = verts[:, :2].max(axis=0)
    xs = np.arange(xmin + spacing / 2, xmax, spacing)
    ys = np.arange(ymin + spacing / 2, ymax, spacing)
    if xs.size == 0 or ys.size == 0:
        xs = np.array([(xmin + xmax) / 2])
        ys = np.array([(ymin + ymax) / 2])
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()

    # even-odd point-in-polygon test on the XY projection
    inside = np.zeros(gx.shape[0], dtype=bool)
    poly = verts[:, :2]
    for i in range(poly.shape[0]):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % poly.shape[0]]
        crosses = (y1 > gy) != (y2 > gy)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (gy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (gx < x_at)
    gx, gy = gx[inside], gy[inside]
    gz = -(surface.plane.offset + n[0] * gx + n[1] * gy) / n[2]
    return np.column_stack([gx, gy, gz])
