"""Constrained Gauss-Helmert adjustment of the rigid transformation.

Every LiDAR point x on segment L_i yields one implicit condition

    f = n_i . (R(q) x + t) + d_i = 0

against its model plane (n_i, d_i).  The unknowns are the scalar-first
quaternion and the translation, X = [q0 q1 q2 q3 tx ty tz], with the unit
quaternion enforced as an auxiliary constraint c = |q| = 1.

Facade planes are vertical, so their conditions carry no information about
t_z; instead of injecting unreliable terrain correspondences, a pseudo-plane
pair (two coincident horizontal planes) contributes one parameter-only
condition row [0 0 0 0 0 0 1] that pins t_z to zero.  Horizontal parameters
are thereby estimated purely from facade evidence and the true vertical
shift is recovered later from ground data alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, NoConvergence, RankDeficient
from .geometry import (
    PlaneParams,
    RigidTransform,
    as_points,
    quat_normalize,
    quat_to_matrix,
    rotation_angle_between_normals,
    verticality_angle,
)

#: model planes flatter than this are treated as ground-like correspondences
GROUND_SPLIT_DEG = 45.0
#: pairwise normal angle below which planes count as parallel
PARALLEL_TOL_DEG = 1.0
#: minimum joint vertical spread (m) required on some non-parallel wall pair
MIN_VERTICAL_SPREAD = 0.1


@dataclass(frozen=True)
class PseudoPlanePair:
    """Coincident horizontal source/target planes; values are fixed."""

    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset_target: float = 0.0
    offset_source: float = 0.0

    def __post_init__(self):
        if tuple(self.normal) != (0.0, 0.0, 1.0):
            raise ValueError("pseudo-plane normal is fixed to (0, 0, 1)")
        if self.offset_target != 0.0 or self.offset_source != 0.0:
            raise ValueError("pseudo-plane offsets are fixed to zero")


@dataclass(eq=False)
class Correspondence:
    """Model plane paired with the LiDAR points observed on it."""

    model_plane: PlaneParams
    points: np.ndarray
    wall_id: str = ""

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.points.shape[0] < 3:
            raise ValueError("a correspondence needs at least 3 points")


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 50
    tol: float = 1e-10
    include_pseudo_plane: bool = True
    #: drop t_z from the parameter vector entirely (6-parameter reference
    #: solve used to verify that the pseudo-plane row is neutral)
    drop_tz: bool = False


@dataclass(eq=False)
class SolverState:
    x: np.ndarray
    v: np.ndarray
    iterations: int
    converged: bool


@dataclass(eq=False)
class SolverReport:
    transform: RigidTransform
    variance_factor: float
    redundancy: int
    per_wall_rms: dict[str, float]
    iterations: int
    converged: bool
    raw_t_z: float
    objective_history: list[float] = field(default_factory=list)
    excluded_ground: list[str] = field(default_factory=list)
    state: SolverState | None = None


def quat_derivative_matrices(q) -> np.ndarray:
    """Stack of dR/dq_k for the homogeneous quaternion rotation, (4, 3, 3)."""
    q0, q1, q2, q3 = np.asarray(q, dtype=np.float64).reshape(4)
    return 2.0 * np.array(
        [
            [[q0, -q3, q2], [q3, q0, -q1], [-q2, q1, q0]],
            [[q1, q2, q3], [q2, -q1, -q0], [q3, q0, -q1]],
            [[-q2, q1, q0], [q1, q2, q3], [-q0, q3, -q2]],
            [[-q3, -q0, q1], [q0, -q3, q2], [q1, q2, q3]],
        ]
    )


def _as_x0(x0) -> np.ndarray:
    if x0 is None:
        return np.array([1.0, 0, 0, 0, 0, 0, 0])
    if isinstance(x0, RigidTransform):
        return np.concatenate([x0.rotation, x0.translation])
    x = np.asarray(x0, dtype=np.float64).reshape(7).copy()
    if abs(np.linalg.norm(x[:4]) - 1.0) > 1e-6:
        raise ValueError("x0 quaternion must be (close to) unit length")
    return x


def check_geometry(correspondences: list[Correspondence]) -> None:
    """Raise :class:`DegenerateGeometry` when the transformation is
    unobservable: all model normals (near-)parallel, or no pair of
    non-parallel planes with enough joint vertical point spread."""
    if len(correspondences) < 2:
        raise DegenerateGeometry("need at least two correspondences")
    spread_ok = False
    any_nonparallel = False
    for i in range(len(correspondences)):
        for j in range(i + 1, len(correspondences)):
            a, b = correspondences[i], correspondences[j]
            angle = rotation_angle_between_normals(a.model_plane.normal, b.model_plane.normal)
            if angle < PARALLEL_TOL_DEG:
                continue
            any_nonparallel = True
            z = np.concatenate([a.points[:, 2], b.points[:, 2]])
            if float(z.max() - z.min()) >= MIN_VERTICAL_SPREAD:
                spread_ok = True
    if not any_nonparallel:
        raise DegenerateGeometry("all model plane normals are parallel within 1 deg")
    if not spread_ok:
        raise DegenerateGeometry(
            "no non-parallel plane pair spans 0.1 m of height; "
            "rotation about horizontal axes is unobservable"
        )


def _row_blocks(corr: Correspondence, x: np.ndarray):
    """Dense A block, misclosure vector and B row direction for one
    correspondence, linearised at ``x`` with zero corrections."""
    q, t = x[:4], x[4:]
    r = quat_to_matrix(q)
    dr = quat_derivative_matrices(q)
    n = corr.model_plane.normal
    pts = corr.points
    w = pts @ (r.T @ n) + float(n @ t) + corr.model_plane.offset
    a = np.empty((pts.shape[0], 7))
    for k in range(4):
        a[:, k] = pts @ (dr[k].T @ n)
    a[:, 4:] = n
    b_dir = r.T @ n  # each point's 1x3 B block
    return a, w, b_dir


def assemble_system(
    correspondences: list[Correspondence],
    include_pseudo_plane: bool = True,
    x0=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Dense linearised system (A, B, C, w) at ``x0`` with zero corrections.

    One condition row per point; with the pseudo-plane enabled one extra
    parameter-only row [0 0 0 0 0 0 1] is appended whose misclosure is the
    current t_z (zero at the identity start), so the solved update pins t_z
    at exactly zero.  B is returned dense, which is only sensible for the
    small systems used in verification; :func:`solve` exploits the block
    structure instead.
    """
    check_geometry(correspondences)
    x = _as_x0(x0)
    n_pts = sum(c.points.shape[0] for c in correspondences)
    rows = n_pts + (1 if include_pseudo_plane else 0)
    a = np.zeros((rows, 7))
    b = np.zeros((rows, 3 * n_pts))
    w = np.zeros(rows)
    at = 0
    for corr in correspondences:
        a_i, w_i, b_dir = _row_blocks(corr, x)
        count = corr.points.shape[0]
        a[at:at + count] = a_i
        w[at:at + count] = w_i
        for k in range(count):
            b[at + k, 3 * (at + k):3 * (at + k) + 3] = b_dir
        at += count
    if include_pseudo_plane:
        a[-1, 6] = 1.0
        w[-1] = x[6]
    qn = float(np.linalg.norm(x[:4]))
    c = np.concatenate([x[:4] / qn, np.zeros(3)]).reshape(1, 7)
    return a, b, c, w


def solve(
    correspondences: list[Correspondence],
    options: SolverOptions = SolverOptions(),
    x0=None,
) -> SolverReport:
    """Iterated Gauss-Helmert solve with identity observation weights.

    With the pseudo-plane enabled, ground-like correspondences (model plane
    dihedral angle below 45 deg) are excluded by design: their vertical
    information is deferred to the separate vertical-alignment stage, so
    biased ground data cannot leak into the horizontal parameters.  The
    reported transform carries t_z = 0 exactly in that mode; the raw
    numerical value is kept in ``raw_t_z``.
    """
    if options.include_pseudo_plane and not options.drop_tz:
        used = [c for c in correspondences
                if verticality_angle(c.model_plane) >= GROUND_SPLIT_DEG]
        excluded = [c.wall_id for c in correspondences
                    if verticality_angle(c.model_plane) < GROUND_SPLIT_DEG]
    else:
        used, excluded = list(correspondences), []
    if not used:
        raise DegenerateGeometry("no usable correspondences")
    check_geometry(used)

    max_nz = max(abs(float(c.model_plane.normal[2])) for c in used)
    if not options.include_pseudo_plane and not options.drop_tz and max_nz < 1e-8:
        raise RankDeficient(
            "facade-only input without the pseudo-plane: "
            "t_z column of the design matrix is zero"
        )

    # Parameter layout: quaternion always present, then tx, ty[, tz].
    cols = np.arange(6 if options.drop_tz else 7)
    use_pp = options.include_pseudo_plane and not options.drop_tz
    n_pts = sum(c.points.shape[0] for c in used)
    n_rows = n_pts + (1 if use_pp else 0)
    redundancy = n_rows + 1 - cols.size
    if redundancy <= 0:
        raise DegenerateGeometry(f"non-positive redundancy ({redundancy})")

    x = _as_x0(x0)
    p = cols.size
    history: list[float] = []
    vtv = 0.0
    converged = False
    iterations = 0
    last_blocks = None

    for iterations in range(1, options.max_iter + 1):
        normal = np.zeros((p, p))
        rhs = np.zeros(p)
        obj = 0.0
        blocks = []
        for corr in used:
            a_full, w_i, b_dir = _row_blocks(corr, x)
            a_i = a_full[:, cols]
            m = float(b_dir @ b_dir)
            normal += a_i.T @ a_i / m
            rhs += a_i.T @ w_i / m
            obj += float(w_i @ w_i)
            blocks.append((a_i, w_i, m, b_dir))
        history.append(obj)

        qn = float(np.linalg.norm(x[:4]))
        g_rows = [np.concatenate([x[:4] / qn, np.zeros(p - 4)])]
        g_vals = [qn - 1.0]
        if use_pp:
            pp = np.zeros(p)
            pp[6] = 1.0
            g_rows.append(pp)
            g_vals.append(x[6])
        g = np.vstack(g_rows)
        k = g.shape[0]

        kkt = np.zeros((p + k, p + k))
        kkt[:p, :p] = normal
        kkt[:p, p:] = g.T
        kkt[p:, :p] = g
        full_rhs = -np.concatenate([rhs, np.asarray(g_vals)])
        try:
            sol = np.linalg.solve(kkt, full_rhs)
        except np.linalg.LinAlgError as exc:
            raise DegenerateGeometry(f"normal equations are singular: {exc}") from exc
        if iterations == 1 and np.linalg.cond(kkt) > 1e12:
            raise DegenerateGeometry("normal equations are numerically singular")
        dx = sol[:p]
        if not np.isfinite(dx).all():
            raise DegenerateGeometry("adjustment diverged to non-finite values")

        vtv = 0.0
        for a_i, w_i, m, _ in blocks:
            k_j = -(a_i @ dx + w_i) / m
            vtv += float(k_j @ k_j) * m
        last_blocks = blocks

        x[cols] += dx
        x[:4] = quat_normalize(x[:4])
        if float(np.abs(dx).max()) < options.tol:
            converged = True
            break

    # Corrections of the final linearisation (dx ~ 0 at convergence).
    v = np.zeros(3 * n_pts)
    at = 0
    for _, w_i, m, b_dir in last_blocks:
        v[at:at + 3 * w_i.size] = np.outer(-w_i / m, b_dir).reshape(-1)
        at += 3 * w_i.size
    state = SolverState(x=x.copy(), v=v, iterations=iterations, converged=converged)
    if not converged:
        raise NoConvergence(options.max_iter, state)

    per_wall_rms: dict[str, float] = {}
    q_final, t_final = x[:4], x[4:]
    r_final = quat_to_matrix(q_final)
    for corr in used:
        res = corr.points @ (r_final.T @ corr.model_plane.normal) + float(
            corr.model_plane.normal @ t_final
        ) + corr.model_plane.offset
        per_wall_rms[corr.wall_id] = float(np.sqrt(np.mean(res**2)))

    raw_tz = float(x[6]) if not options.drop_tz else 0.0
    t_out = np.array([x[4], x[5], 0.0 if (use_pp or options.drop_tz) else x[6]])
    return SolverReport(
        transform=RigidTransform(quat_normalize(x[:4]), t_out),
        variance_factor=vtv / redundancy,
        redundancy=redundancy,
        per_wall_rms=per_wall_rms,
        iterations=iterations,
        converged=converged,
        raw_t_z=raw_tz,
        objective_history=history,
        excluded_ground=excluded,
        state=state,
    )


def jacobian_check(
    correspondences: list[Correspondence],
    x0=None,
    step: float = 1e-6,
) -> float:
    """Max relative deviation of analytic A, B, C rows from central
    finite differences; the relative scale is max(1, |analytic|, |numeric|)."""
    x = _as_x0(x0)
    a, b, c, w = assemble_system(correspondences, include_pseudo_plane=False, x0=x)
    n_pts = sum(cr.points.shape[0] for cr in correspondences)

    def f_vec(params: np.ndarray, v: np.ndarray) -> np.ndarray:
        q, t = params[:4], params[4:]
        r = quat_to_matrix(q)
        out = np.empty(n_pts)
        at = 0
        v3 = v.reshape(-1, 3)
        for cr in correspondences:
            count = cr.points.shape[0]
            pts = cr.points + v3[at:at + count]
            out[at:at + count] = (
                pts @ (r.T @ cr.model_plane.normal)
                + float(cr.model_plane.normal @ t)
                + cr.model_plane.offset
            )
            at += count
        return out

    worst = 0.0

    def update(analytic, numeric):
        nonlocal worst
        scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        worst = max(worst, float((np.abs(analytic - numeric) / scale).max()))

    v0 = np.zeros(3 * n_pts)
    for k in range(7):
        dxp = x.copy(); dxp[k] += step
        dxm = x.copy(); dxm[k] -= step
        update(a[:, k], (f_vec(dxp, v0) - f_vec(dxm, v0)) / (2 * step))
    for k in range(3 * n_pts):
        dvp = v0.copy(); dvp[k] += step
        dvm = v0.copy(); dvm[k] -= step
        update(b[:, k], (f_vec(x, dvp) - f_vec(x, dvm)) / (2 * step))

    def c_fun(params: np.ndarray) -> float:
        return float(np.linalg.norm(params[:4]))

    c_num = np.zeros(7)
    for k in range(7):
        dxp = x.copy(); dxp[k] += step
        dxm = x.copy(); dxm[k] -= step
        c_num[k] = (c_fun(dxp) - c_fun(dxm)) / (2 * step)
    update(c[0], c_num)
    return worst
