"""Core geometric primitives: planes, quaternions, rigid transforms.

Conventions used throughout the package:

* points are ``(N, 3)`` float64 arrays, Z axis vertical-up, units metres;
* a plane is stored as a unit normal ``n`` and offset ``d`` with equation
  ``n . x + d = 0``;
* quaternions are scalar-first ``[q0, q1, q2, q3]`` arrays.

All operations are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput

# Tolerance used when choosing a deterministic plane orientation.
_ORIENT_TOL = 1e-12


def as_points(points) -> np.ndarray:
    """Coerce input to a contiguous (N, 3) float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class PlaneParams:
    """Plane ``normal . x + offset = 0`` with unit normal.

    ``offset`` is the signed distance term in metres; the normal is
    dimensionless and normalised to unit length on construction.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got |n| = {norm}")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset))

    def distances(self, points) -> np.ndarray:
        """Unsigned perpendicular distances of points to the plane."""
        return np.abs(self.signed_distances(points))

    def signed_distances(self, points) -> np.ndarray:
        return as_points(points) @ self.normal + self.offset


def _orient_plane(normal: np.ndarray, offset: float) -> tuple[np.ndarray, float]:
    """Fix the sign ambiguity of a fitted plane deterministically.

    Prefer ``offset <= 0``; for planes through the origin prefer
    ``normal_z >= 0``, then the first non-zero normal component positive.
    """
    if offset > _ORIENT_TOL:
        return -normal, -offset
    if offset < -_ORIENT_TOL:
        return normal, offset
    if normal[2] > _ORIENT_TOL:
        return normal, offset
    if normal[2] < -_ORIENT_TOL:
        return -normal, -offset
    for c in normal:
        if c > _ORIENT_TOL:
            return normal, offset
        if c < -_ORIENT_TOL:
            return -normal, -offset
    return normal, offset


def fit_plane(points) -> PlaneParams:
    """Total-least-squares plane through ``points``.

    Minimises the sum of squared perpendicular distances (smallest
    right-singular vector of the centred coordinates).  Raises
    :class:`DegenerateInput` for fewer than 3 points or collinear input.
    """
    pts = as_points(points)
    if pts.shape[0] < 3:
        raise DegenerateInput(f"need at least 3 points, got {pts.shape[0]}")
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    # Rank < 2 of the centred coordinates means no unique plane exists.
    if s[1] <= max(s[0] * 1e-10, 1e-13):
        raise DegenerateInput("points are collinear or coincident")
    normal = vt[2]
    offset = -float(normal @ centroid)
    normal, offset = _orient_plane(normal, offset)
    return PlaneParams(normal=normal, offset=offset)


def point_plane_distance(point, plane: PlaneParams) -> float:
    """Unsigned perpendicular distance ``|n . p + d|`` in metres."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    return abs(float(plane.normal @ p + plane.offset))


def rotation_angle_between_normals(n_a, n_b) -> float:
    """Folded angle between two unit normals, in degrees within [0, 90].

    Antiparallel normals map to 0 deg: plane orientation signs are
    arbitrary after fitting, so only the unsigned angle is meaningful.
    """
    a = np.asarray(n_a, dtype=np.float64).reshape(3)
    b = np.asarray(n_b, dtype=np.float64).reshape(3)
    return float(np.degrees(np.arccos(np.clip(abs(a @ b), 0.0, 1.0))))


def verticality_angle(plane: PlaneParams) -> float:
    """Dihedral angle between the plane and the ground plane, in degrees.

    Vertical facades return ~90, horizontal surfaces ~0.
    """
    return float(np.degrees(np.arccos(np.clip(abs(plane.normal[2]), 0.0, 1.0))))


# ---------------------------------------------------------------------------
# Quaternions (scalar-first)
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    norm = float(np.linalg.norm(q))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot normalise a zero/non-finite quaternion")
    return q / norm


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a scalar-first quaternion (homogeneous form).

    The quadratic form below is a proper rotation only for unit ``q``;
    the adjustment module relies on it being polynomial in ``q``.
    """
    q0, q1, q2, q3 = np.asarray(q, dtype=np.float64).reshape(4)
    return np.array(
        [
            [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3,
             2.0 * (q1 * q2 - q0 * q3),
             2.0 * (q1 * q3 + q0 * q2)],
            [2.0 * (q1 * q2 + q0 * q3),
             q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3,
             2.0 * (q2 * q3 - q0 * q1)],
            [2.0 * (q1 * q3 - q0 * q2),
             2.0 * (q2 * q3 + q0 * q1),
             q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
        ]
    )


def matrix_to_quat(r) -> np.ndarray:
    """Unit scalar-first quaternion of a rotation matrix (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64).reshape(3, 3)
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s,
             (r[2, 1] - r[1, 2]) / s,
             (r[0, 2] - r[2, 0]) / s,
             (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[i + 1] = 0.25 * s
        q[j + 1] = (r[j, i] + r[i, j]) / s
        q[k + 1] = (r[k, i] + r[i, k]) / s
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(axis))
    if norm == 0.0:
        raise ValueError("rotation axis must be non-zero")
    half = 0.5 * np.radians(angle_deg)
    return np.concatenate(([np.cos(half)], np.sin(half) * axis / norm))


def rotation_angle_deg(q) -> float:
    """Rotation angle of a unit quaternion, in degrees within [0, 180]."""
    q = quat_normalize(q)
    return float(np.degrees(2.0 * np.arccos(np.clip(abs(q[0]), 0.0, 1.0))))


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rigid body motion ``x -> R(q) x + t`` with unit quaternion rotation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if abs(float(np.linalg.norm(q)) - 1.0) > 1e-10:
            raise ValueError("rotation quaternion must be unit length")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle_deg: float, translation=(0.0, 0.0, 0.0)):
        return cls(quat_from_axis_angle(axis, angle_deg), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = quat_to_matrix(quat_normalize(self.rotation))
        out[:3, 3] = self.translation
        return out

    def apply(self, points) -> np.ndarray:
        pts = as_points(points)
        r = quat_to_matrix(quat_normalize(self.rotation))
        return pts @ r.T + self.translation

    def apply_point(self, point) -> np.ndarray:
        return self.apply(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]

    def inverse(self) -> "RigidTransform":
        q = quat_normalize(self.rotation)
        q_inv = np.array([q[0], -q[1], -q[2], -q[3]])
        r_inv = quat_to_matrix(q_inv)
        return RigidTransform(q_inv, -(r_inv @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        m = self.matrix() @ other.matrix()
        return RigidTransform.from_matrix(m)

    def transform_plane(self, plane: PlaneParams) -> PlaneParams:
        """Plane satisfied by transformed points of the input plane."""
        r = quat_to_matrix(quat_normalize(self.rotation))
        normal = r @ plane.normal
        offset = plane.offset - float(normal @ self.translation)
        return PlaneParams(normal=normal, offset=offset)


def apply_transform(transform: RigidTransform, points) -> np.ndarray:
    """Apply ``R(q) x + t`` to one point or an (N, 3) array."""
    return transform.apply(points)


def relative_rotation_angle_deg(q_a, q_b) -> float:
    """Angle of the rotation taking ``q_b`` onto ``q_a``, in degrees."""
    r = quat_to_matrix(quat_normalize(q_a)) @ quat_to_matrix(quat_normalize(q_b)).T
    return float(np.degrees(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0))))
