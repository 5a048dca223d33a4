"""Associate cloud points with model walls via buffer volumes.

Each (near-)vertical wall polygon is swept along the horizontal projection
of its normal to form a buffer; points inside a buffer become that wall's
neighbourhood set.  Points left over may be classified as ground against a
terrain grid, the remainder is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoCoverage, NoVerticalWalls
from .geometry import PlaneParams, as_points, verticality_angle
from .io import DtmGrid, PointCloud, WallSurface

#: walls flatter than this dihedral angle are not buffered
MIN_WALL_VERTICALITY_DEG = 45.0
#: vertical margin added above and below the wall polygon's z extent
Z_MARGIN = 0.2
#: distance ties closer than this are broken by wall id
TIE_EPS = 1e-12


def _convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (Andrew's monotone chain)."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] <= 2:
        return pts

    def turn(o, a, b) -> float:
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(iterable):
        chain: list[np.ndarray] = []
        for p in iterable:
            while len(chain) >= 2 and turn(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


@dataclass(eq=False)
class WallBuffer:
    """Containment volume of one wall.

    The polygon is represented in the (u, z) chart of its plane, where
    ``u`` is the horizontal in-plane coordinate; this chart is a bijection
    for every non-horizontal plane.  The lateral outline is the convex hull
    of the polygon, expanded by ``Z_MARGIN`` at top and bottom.
    """

    wall_id: str
    plane: PlaneParams
    half_thickness: float
    sweep_dir: np.ndarray = field(repr=False, default=None)
    lateral_axis: np.ndarray = field(repr=False, default=None)
    normal_dot_sweep: float = field(repr=False, default=0.0)
    outline: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, wall: WallSurface, thickness: float) -> "WallBuffer | None":
        if verticality_angle(wall.plane) < MIN_WALL_VERTICALITY_DEG:
            return None
        n = wall.plane.normal
        horiz = np.array([n[0], n[1], 0.0])
        sweep = horiz / np.linalg.norm(horiz)
        lateral = np.array([-sweep[1], sweep[0], 0.0])
        uz = np.column_stack([wall.vertices @ lateral, wall.vertices[:, 2]])
        expanded = np.vstack([uz + [0.0, Z_MARGIN], uz - [0.0, Z_MARGIN]])
        return cls(
            wall_id=wall.id,
            plane=wall.plane,
            half_thickness=thickness / 2.0,
            sweep_dir=sweep,
            lateral_axis=lateral,
            normal_dot_sweep=float(n @ sweep),
            outline=_convex_hull_2d(expanded),
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the buffer volume."""
        pts = as_points(points)
        s = (pts @ self.plane.normal + self.plane.offset) / self.normal_dot_sweep
        mask = np.abs(s) <= self.half_thickness
        if not mask.any():
            return mask
        sub = pts[mask]
        foot = sub - np.outer(s[mask], self.sweep_dir)
        u = foot @ self.lateral_axis
        z = sub[:, 2]  # sweep is horizontal, so z is unchanged by projection
        inside = np.ones(u.shape[0], dtype=bool)
        verts = self.outline
        for k in range(verts.shape[0]):
            a = verts[k]
            b = verts[(k + 1) % verts.shape[0]]
            cross = (b[0] - a[0]) * (z - a[1]) - (b[1] - a[1]) * (u - a[0])
            inside &= cross >= -TIE_EPS
        out = np.zeros(pts.shape[0], dtype=bool)
        out[np.nonzero(mask)[0][inside]] = True
        return out


@dataclass(eq=False)
class AssociationResult:
    """Disjoint index families produced by the association stage."""

    per_wall: dict[str, np.ndarray]
    ground_indices: np.ndarray
    discarded_indices: np.ndarray
    unmatched_walls: list[str]

    def wall_indices(self, wall_id: str) -> np.ndarray:
        return self.per_wall.get(wall_id, np.empty(0, dtype=np.intp))


def build_wall_buffers(walls: list[WallSurface], thickness: float) -> list[WallBuffer]:
    """Buffer every sufficiently vertical wall; total thickness is split
    symmetrically about the wall plane."""
    if thickness <= 0:
        raise ValueError("buffer thickness must be positive")
    buffers = [b for b in (WallBuffer.build(w, thickness) for w in walls) if b is not None]
    if not buffers:
        raise NoVerticalWalls("no wall passed the verticality test")
    return sorted(buffers, key=lambda b: b.wall_id)


def associate_points(cloud: PointCloud, buffers: list[WallBuffer]) -> AssociationResult:
    """Assign each point to at most one wall buffer.

    A point inside several buffers goes to the wall whose plane is
    perpendicular-nearest; ties within ``TIE_EPS`` go to the
    lexicographically smallest wall id.  Points outside every buffer are
    returned as discarded (candidates for the ground filter).
    """
    pts = cloud.points
    n = pts.shape[0]
    best_dist = np.full(n, np.inf)
    best_wall = np.full(n, -1, dtype=np.intp)
    ordered = sorted(buffers, key=lambda b: b.wall_id)
    for k, buf in enumerate(ordered):
        mask = buf.contains(pts)
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        dist = np.abs(pts[idx] @ buf.plane.normal + buf.plane.offset)
        better = dist < best_dist[idx] - TIE_EPS
        upd = idx[better]
        best_dist[upd] = dist[better]
        best_wall[upd] = k

    per_wall: dict[str, np.ndarray] = {}
    unmatched: list[str] = []
    for k, buf in enumerate(ordered):
        indices = np.nonzero(best_wall == k)[0]
        if indices.size:
            per_wall[buf.wall_id] = indices
        else:
            unmatched.append(buf.wall_id)
    return AssociationResult(
        per_wall=per_wall,
        ground_indices=np.empty(0, dtype=np.intp),
        discarded_indices=np.nonzero(best_wall < 0)[0],
        unmatched_walls=unmatched,
    )


def filter_ground(cloud: PointCloud, dtm: DtmGrid, band: float) -> np.ndarray:
    """Indices of points within ``band`` metres of the terrain surface.

    Points over nodata cells are excluded; raises :class:`NoCoverage`
    when every point sits over nodata.
    """
    if band <= 0:
        raise ValueError("ground band must be positive")
    pts = cloud.points
    surface = dtm.sample(pts[:, 0], pts[:, 1])
    covered = np.isfinite(surface)
    if not covered.any():
        raise NoCoverage("all points lie over nodata terrain cells")
    keep = covered & (np.abs(pts[:, 2] - surface) <= band)
    return np.nonzero(keep)[0]


def apply_ground_filter(
    result: AssociationResult, cloud: PointCloud, dtm: DtmGrid, band: float
) -> AssociationResult:
    """Split the discarded set into ground and clutter.

    Wall assignment wins: points already associated with a wall stay
    there even when they also fall inside the terrain band.
    """
    ground_all = filter_ground(cloud, dtm, band)
    in_discarded = np.isin(ground_all, result.discarded_indices, assume_unique=False)
    ground = ground_all[in_discarded]
    remaining = np.setdiff1d(result.discarded_indices, ground, assume_unique=True)
    return AssociationResult(
        per_wall=result.per_wall,
        ground_indices=ground,
        discarded_indices=remaining,
        unmatched_walls=result.unmatched_walls,
    )
