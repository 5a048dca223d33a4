"""Diagnostic figures rendered next to the registration report.

Four PNGs summarise a run: a plan view of the association, per-wall
offset/height profiles with the retained cut-off band, residual histograms
after registration, and the per-check-point distance distribution.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import PointCloud, WallSurface
from .pipeline import RegistrationResult

_WALL_CMAP = plt.get_cmap("tab10")
_MAX_SCATTER = 20_000


def _thin(indices: np.ndarray, cap: int = _MAX_SCATTER) -> np.ndarray:
    if indices.size <= cap:
        return indices
    stride = int(np.ceil(indices.size / cap))
    return indices[::stride]


def render_report_figures(
    out_dir: str,
    cloud: PointCloud,
    walls: list[WallSurface],
    result: RegistrationResult,
    prefix: str = "report",
) -> list[str]:
    """Write the diagnostic figures; returns the created file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    paths.append(_plan_view(out_dir, prefix, cloud, walls, result))
    paths.append(_wall_profiles(out_dir, prefix, cloud, walls, result))
    paths.append(_residual_hist(out_dir, prefix, cloud, walls, result))
    if result.metrics is not None:
        paths.append(_metric_distances(out_dir, prefix, result))
    return paths


def _plan_view(out_dir, prefix, cloud, walls, result) -> str:
    fig, ax = plt.subplots(figsize=(7, 6))
    for k, (wall_id, idx) in enumerate(sorted(result.association.per_wall.items())):
        sub = cloud.points[_thin(idx)]
        ax.scatter(sub[:, 0], sub[:, 1], s=1, color=_WALL_CMAP(k % 10), label=wall_id)
    ground = result.association.ground_indices
    if ground.size:
        sub = cloud.points[_thin(ground)]
        ax.scatter(sub[:, 0], sub[:, 1], s=1, color="0.8", label="ground")
    for wall in walls:
        v = wall.vertices
        ax.plot(v[[0, 1], 0], v[[0, 1], 1], "k-", lw=1.5)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("wall association (plan view)")
    ax.set_aspect("equal")
    ax.legend(markerscale=8, fontsize=8, loc="upper right")
    path = os.path.join(out_dir, f"{prefix}_plan.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _wall_profiles(out_dir, prefix, cloud, walls, result) -> str:
    by_id = {w.id: w for w in walls}
    ids = sorted(result.association.per_wall)
    n = max(len(ids), 1)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 4), squeeze=False)
    for ax, wall_id in zip(axes[0], ids):
        wall = by_id[wall_id]
        idx = _thin(result.association.per_wall[wall_id])
        pts = cloud.points[idx]
        offs = pts @ wall.plane.normal + wall.plane.offset
        ax.scatter(offs, pts[:, 2], s=1, color="0.6", label="buffer")
        seg = result.segments.get(wall_id)
        if seg is not None:
            sp = cloud.points[_thin(seg.indices)]
            so = sp @ wall.plane.normal + wall.plane.offset
            ax.scatter(so, sp[:, 2], s=1, color="tab:red", label="segment")
        cut = result.cutoffs.get(wall_id)
        if cut is not None:
            ax.axhspan(cut.z_min, cut.z_max, color="tab:blue", alpha=0.15, label="cut-off band")
        ax.set_title(wall_id, fontsize=9)
        ax.set_xlabel("plane offset [m]")
        ax.set_ylabel("z [m]")
        ax.legend(fontsize=7, markerscale=6)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{prefix}_profiles.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _residual_hist(out_dir, prefix, cloud, walls, result) -> str:
    by_id = {w.id: w for w in walls}
    fig, ax = plt.subplots(figsize=(6, 4))
    registered = result.transform.apply(cloud.points)
    for k, (wall_id, seg) in enumerate(sorted(result.segments.items())):
        wall = by_id[wall_id]
        res = registered[_thin(seg.indices)] @ wall.plane.normal + wall.plane.offset
        ax.hist(res * 1000.0, bins=60, histtype="step", color=_WALL_CMAP(k % 10), label=wall_id)
    ax.set_xlabel("signed residual [mm]")
    ax.set_ylabel("count")
    ax.set_title("segment residuals after registration")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{prefix}_residuals.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _metric_distances(out_dir, prefix, result) -> str:
    m = result.metrics
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(m.distances_h.size), m.distances_h * 1000.0, "o", ms=3, label="horizontal")
    ax.plot(
        np.arange(m.distances_v.size), m.distances_v * 1000.0, "s", ms=3, label="vertical"
    )
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("check point index")
    ax.set_ylabel("signed distance [mm]")
    ax.set_title(
        f"check-point distances (errH {m.err_h * 1000:.1f} mm, errV {m.err_v * 1000:.1f} mm)"
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{prefix}_checkpoints.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
