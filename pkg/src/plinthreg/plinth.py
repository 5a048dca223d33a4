"""Localise the representative plinth band of a wall neighbourhood.

LoD2 wall planes are extruded from the cadastral footprint, so they match
the base band (plinth) of the real wall and not the upper facade.  This
module walks a wall's point neighbourhood from top to bottom: it repeatedly
extracts the largest RANSAC plane, keeps only what lies below that plane's
lower height bound, and stops once no facade-like plane remains.  The last
valid plane's 10th..90th percentile height band defines the output subspace.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import NoValidFacade
from .geometry import PlaneParams, as_points, fit_plane, verticality_angle

#: RANSAC hypothesis budget (fixed for a deterministic runtime)
DEFAULT_HYPOTHESES = 1000
#: cap on per-chunk scratch memory in the hypothesis scoring loop
_CHUNK_ELEMENTS = 8_000_000


@dataclass(frozen=True)
class CutoffRange:
    """Height band retained as the representative subspace."""

    z_min: float
    z_max: float

    def __post_init__(self):
        if self.z_min > self.z_max:
            raise ValueError("z_min must not exceed z_max")


@dataclass(frozen=True)
class LocalizeParams:
    """Knobs of the cut-off iteration.

    ``t_dis`` mirrors the registration residual of the input cloud;
    ``min_inliers`` defaults to max(50, 1% of the neighbourhood size).
    """

    t_dis: float = 0.02
    t_alpha: float = 10.0
    min_inliers: int | None = None
    max_rounds: int = 20
    n_hypotheses: int = DEFAULT_HYPOTHESES

    def __post_init__(self):
        if self.t_dis <= 0:
            raise ValueError("t_dis must be positive")
        if not 0.0 < self.t_alpha < 90.0:
            raise ValueError("t_alpha must be in (0, 90) degrees")
        if self.min_inliers is not None and self.min_inliers < 3:
            raise ValueError("min_inliers must be at least 3")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")

    def resolved_min_inliers(self, n_points: int) -> int:
        if self.min_inliers is not None:
            return self.min_inliers
        return max(50, n_points // 100)


def wall_rng(seed: int, wall_id: str) -> np.random.Generator:
    """Per-wall generator that is stable across runs and schedulers."""
    digest = hashlib.sha256(wall_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))


def ransac_largest_plane(
    points,
    t_dis: float,
    min_inliers: int,
    rng: np.random.Generator,
    n_hypotheses: int = DEFAULT_HYPOTHESES,
) -> tuple[PlaneParams, np.ndarray] | None:
    """Largest-consensus plane among sampled 3-point hypotheses.

    The winning hypothesis is re-fitted once on its inliers and the inlier
    set re-evaluated against the refit plane.  Returns ``None`` when the
    best hypothesis supports fewer than ``min_inliers`` points.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if n < 3 or n < min_inliers:
        return None

    tri = rng.integers(0, n, size=(n_hypotheses, 3))
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    if not valid.any():
        return None
    normals = normals[valid] / norms[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, a[valid])

    n_hyp = normals.shape[0]
    chunk = max(8, min(n_hyp, _CHUNK_ELEMENTS // max(n, 1)))
    best_count = -1
    best_hyp = -1
    for start in range(0, n_hyp, chunk):
        stop = min(start + chunk, n_hyp)
        dist = np.abs(pts @ normals[start:stop].T + offsets[start:stop])
        counts = (dist <= t_dis).sum(axis=0)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best_hyp = start + k

    if best_count < min_inliers:
        return None

    plane = PlaneParams(normals[best_hyp], offsets[best_hyp])
    inliers = np.nonzero(plane.distances(pts) <= t_dis)[0]
    if inliers.size >= 3:
        try:
            plane = fit_plane(pts[inliers])
            inliers = np.nonzero(plane.distances(pts) <= t_dis)[0]
        except Exception:
            pass  # keep the raw hypothesis when the refit degenerates
    if inliers.size < min_inliers:
        return None
    return plane, inliers


def percentile_band(z_values) -> tuple[float, float]:
    """(10th, 90th) percentile of the heights, nearest-rank convention."""
    z = np.sort(np.asarray(z_values, dtype=np.float64).reshape(-1))
    if z.size < 2:
        raise ValueError("need at least 2 height values")
    lo = int(np.ceil(0.1 * z.size)) - 1
    hi = int(np.ceil(0.9 * z.size)) - 1
    return float(z[lo]), float(z[hi])


def localize_representative_subspace(
    points,
    params: LocalizeParams,
    rng: np.random.Generator | int,
) -> tuple[np.ndarray, CutoffRange]:
    """Run the cut-off iteration on one wall neighbourhood.

    Returns indices (into ``points``) whose heights fall inside the band of
    the last valid facade plane, together with that band.  Raises
    :class:`NoValidFacade` when already the first extraction fails.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("neighbourhood is empty")
    min_inliers = params.resolved_min_inliers(pts.shape[0])

    active = np.arange(pts.shape[0])
    band: tuple[float, float] | None = None
    for _ in range(params.max_rounds):
        if active.size < max(3, min_inliers):
            break
        found = ransac_largest_plane(
            pts[active], params.t_dis, min_inliers, rng, params.n_hypotheses
        )
        if found is None:
            break
        plane, inliers = found
        if verticality_angle(plane) <= params.t_alpha:
            break  # horizontal-ish plane: extraction invalid, stop walking
        z_min, z_max = percentile_band(pts[active[inliers], 2])
        band = (z_min, z_max)
        active = active[pts[active, 2] <= z_min]
        if active.size == 0:
            break

    if band is None:
        raise NoValidFacade("first extracted plane already fails the facade test")
    cutoff = CutoffRange(*band)
    z = pts[:, 2]
    subspace = np.nonzero((z >= cutoff.z_min) & (z <= cutoff.z_max))[0]
    return subspace, cutoff
