"""Readers and writers for the pipeline artifacts.

Formats:

* point clouds: ASCII ``x y z [intensity]`` (``#`` comments) or binary
  little-endian PLY with float64 coordinates and optional float32 intensity;
* wall models: a JSON schema carrying a local origin plus per-wall id and
  polygon vertices (the only attributes registration needs);
* terrain: ESRI ASCII grid, north-to-south row order in the file;
* report: versioned JSON.

Readers subtract the wall model's declared ``local_origin`` so all downstream
arithmetic happens near the coordinate origin; the origin is recorded in the
report so results can be mapped back to georeferenced coordinates.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateId,
    EmptyCloud,
    InconsistentDimensions,
    IoError,
    NonPlanarPolygon,
    ParseError,
)
from .geometry import PlaneParams, RigidTransform, as_points, fit_plane

REPORT_VERSION = 1
PLANARITY_TOL = 1e-3  # max vertex-to-plane distance for a valid wall polygon
_COORD_FMT = "%.6f"   # declared round-trip precision: 1e-6 m


@dataclass(eq=False)
class PointCloud:
    """Parallel arrays of coordinates plus optional per-point attributes."""

    points: np.ndarray
    intensity: np.ndarray | None = None
    wall_label: np.ndarray | None = None

    def __post_init__(self):
        self.points = as_points(self.points)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if self.intensity.shape[0] != len(self):
                raise ValueError("intensity length does not match point count")
        if self.wall_label is not None:
            self.wall_label = np.asarray(self.wall_label, dtype=object).reshape(-1)
            if self.wall_label.shape[0] != len(self):
                raise ValueError("wall_label length does not match point count")

    def __len__(self) -> int:
        return self.points.shape[0]

    def shifted(self, offset) -> "PointCloud":
        """Copy with ``offset`` subtracted from every coordinate."""
        off = np.asarray(offset, dtype=np.float64).reshape(3)
        return PointCloud(self.points - off, self.intensity, self.wall_label)


@dataclass(eq=False)
class WallSurface:
    """One model wall: unique id, polygon vertices and the derived plane."""

    id: str
    vertices: np.ndarray
    plane: PlaneParams = None  # derived from vertices when omitted

    def __post_init__(self):
        self.vertices = as_points(self.vertices)
        if self.vertices.shape[0] < 3:
            raise ValueError(f"wall {self.id!r} needs at least 3 vertices")
        if self.plane is None:
            self.plane = fit_plane(self.vertices)
        dev = float(self.plane.distances(self.vertices).max())
        if dev > PLANARITY_TOL:
            raise NonPlanarPolygon(self.id, dev)


@dataclass(eq=False)
class WallModel:
    """Walls in local coordinates plus the origin that was subtracted."""

    local_origin: np.ndarray
    walls: list[WallSurface]

    def __post_init__(self):
        self.local_origin = np.asarray(self.local_origin, dtype=np.float64).reshape(3)


@dataclass(eq=False)
class DtmGrid:
    """Regular elevation grid; NaN marks nodata.

    ``elevations`` has shape ``(n_rows, n_cols)`` with row 0 the
    southernmost row (y increases with row index); cell centres sit at
    ``origin + (index + 0.5) * cell_size``.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    elevations: np.ndarray

    def __post_init__(self):
        self.elevations = np.asarray(self.elevations, dtype=np.float64)
        if self.elevations.ndim != 2:
            raise ValueError("elevations must be a 2-D array")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    @property
    def n_rows(self) -> int:
        return self.elevations.shape[0]

    @property
    def n_cols(self) -> int:
        return self.elevations.shape[1]

    def shifted(self, offset) -> "DtmGrid":
        off = np.asarray(offset, dtype=np.float64).reshape(3)
        return DtmGrid(
            self.origin_x - off[0],
            self.origin_y - off[1],
            self.cell_size,
            self.elevations - off[2],
        )

    def sample(self, x, y) -> np.ndarray:
        """Bilinear surface height at (x, y); NaN near nodata cells.

        Coordinates in the outer half-cell ring are clamped to the edge
        cell centres (constant extrapolation).
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        u = (x - self.origin_x) / self.cell_size - 0.5
        v = (y - self.origin_y) / self.cell_size - 0.5
        u = np.clip(u, 0.0, self.n_cols - 1.0)
        v = np.clip(v, 0.0, self.n_rows - 1.0)
        i0 = np.clip(np.floor(u).astype(np.intp), 0, max(self.n_cols - 2, 0))
        j0 = np.clip(np.floor(v).astype(np.intp), 0, max(self.n_rows - 2, 0))
        i1 = np.minimum(i0 + 1, self.n_cols - 1)
        j1 = np.minimum(j0 + 1, self.n_rows - 1)
        fx = np.clip(u - i0, 0.0, 1.0)
        fy = np.clip(v - j0, 0.0, 1.0)
        z = self.elevations
        z00, z10 = z[j0, i0], z[j0, i1]
        z01, z11 = z[j1, i0], z[j1, i1]
        return (
            z00 * (1 - fx) * (1 - fy)
            + z10 * fx * (1 - fy)
            + z01 * (1 - fx) * fy
            + z11 * fx * fy
        )

    def grid_points(self) -> np.ndarray:
        """(M, 3) array of non-nodata cell centres, row-major order."""
        jj, ii = np.nonzero(np.isfinite(self.elevations))
        xs = self.origin_x + (ii + 0.5) * self.cell_size
        ys = self.origin_y + (jj + 0.5) * self.cell_size
        return np.column_stack([xs, ys, self.elevations[jj, ii]])


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

def read_point_cloud(path) -> PointCloud:
    """Read an ASCII xyz(+intensity) or binary little-endian PLY cloud."""
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:3] == b"ply":
        return _read_ply(path)
    return _read_xyz(path)


def _read_xyz(path: str) -> PointCloud:
    rows: list[tuple[float, ...]] = []
    arity = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) not in (3, 4):
                raise ParseError(path, f"expected 3 or 4 columns, got {len(fields)}", lineno)
            if arity is None:
                arity = len(fields)
            elif len(fields) != arity:
                raise ParseError(path, f"inconsistent column count ({len(fields)} vs {arity})", lineno)
            try:
                rows.append(tuple(float(v) for v in fields))
            except ValueError:
                raise ParseError(path, f"non-numeric value in {text!r}", lineno) from None
    if not rows:
        raise EmptyCloud(f"{path}: no points")
    data = np.asarray(rows, dtype=np.float64)
    intensity = data[:, 3] if data.shape[1] == 4 else None
    return PointCloud(points=data[:, :3], intensity=intensity)


def write_point_cloud(path, cloud: PointCloud) -> None:
    """Write ASCII ``x y z [intensity]`` at 1e-6 m precision."""
    cols = [cloud.points]
    fmt = " ".join([_COORD_FMT] * 3)
    if cloud.intensity is not None:
        cols.append(cloud.intensity.reshape(-1, 1))
        fmt += " " + _COORD_FMT
    data = np.hstack(cols)
    try:
        np.savetxt(path, data, fmt=fmt)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_ply(path: str) -> PointCloud:
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise ParseError(path, "missing end_header")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    n_vertices = 0
    props: list[tuple[str, str]] = []
    fmt_ok = False
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = parts[1] == "binary_little_endian"
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ParseError(path, f"unsupported element {parts[1]!r}", lineno)
            n_vertices = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if not fmt_ok:
        raise ParseError(path, "only binary_little_endian PLY is supported")

    type_map = {"float64": "f8", "double": "f8", "float32": "f4", "float": "f4"}
    try:
        dtype = np.dtype([(name, "<" + type_map[t]) for t, name in props])
    except KeyError as exc:
        raise ParseError(path, f"unsupported property type {exc}") from None
    for needed in ("x", "y", "z"):
        if needed not in dtype.names:
            raise ParseError(path, f"missing vertex property {needed!r}")
    if n_vertices == 0:
        raise EmptyCloud(f"{path}: no points")
    expect = n_vertices * dtype.itemsize
    if len(body) < expect:
        raise ParseError(path, f"truncated payload ({len(body)} < {expect} bytes)")
    rec = np.frombuffer(body[:expect], dtype=dtype)
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    intensity = rec["intensity"].astype(np.float64) if "intensity" in dtype.names else None
    return PointCloud(points=pts, intensity=intensity)


def write_point_cloud_ply(path, cloud: PointCloud) -> None:
    """Write binary little-endian PLY (float64 xyz, float32 intensity)."""
    n = len(cloud)
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float64 x",
        "property float64 y",
        "property float64 z",
    ]
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if cloud.intensity is not None:
        lines.append("property float32 intensity")
        fields.append(("intensity", "<f4"))
    lines.append("end_header")
    rec = np.empty(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = cloud.points.T
    if cloud.intensity is not None:
        rec["intensity"] = cloud.intensity.astype(np.float32)
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
            fh.write(rec.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Wall models
# ---------------------------------------------------------------------------

def read_wall_model(path) -> WallModel:
    """Read the wall-model JSON schema.

    Vertices are returned with ``local_origin`` already subtracted; each
    wall's plane is fitted from its (local) vertices.
    """
    path = str(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or "walls" not in doc:
        raise ParseError(path, "expected an object with a 'walls' array")
    origin = np.asarray(doc.get("local_origin", [0.0, 0.0, 0.0]), dtype=np.float64)
    if origin.shape != (3,):
        raise ParseError(path, "local_origin must have 3 components")

    walls: list[WallSurface] = []
    seen: set[str] = set()
    for entry in doc["walls"]:
        wall_id = entry.get("id")
        if not isinstance(wall_id, str) or not wall_id:
            raise ParseError(path, "every wall needs a non-empty string id")
        if wall_id in seen:
            raise DuplicateId(wall_id)
        seen.add(wall_id)
        verts = np.asarray(entry.get("vertices", []), dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] < 3:
            raise ParseError(path, f"wall {wall_id!r}: vertices must be an (n>=3, 3) array")
        walls.append(WallSurface(id=wall_id, vertices=verts - origin))
    return WallModel(local_origin=origin, walls=walls)


def write_wall_model(path, model: WallModel) -> None:
    doc = {
        "local_origin": [float(v) for v in model.local_origin],
        "walls": [
            {
                "id": w.id,
                "vertices": np.round(w.vertices + model.local_origin, 6).tolist(),
            }
            for w in model.walls
        ],
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Terrain grids
# ---------------------------------------------------------------------------

_DTM_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


def read_dtm(path) -> DtmGrid:
    """Read an ESRI ASCII grid; nodata values map to NaN."""
    path = str(path)
    header: dict[str, float] = {}
    rows: list[np.ndarray] = []
    nodata = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key in _DTM_HEADER_KEYS or key == "nodata_value":
            if len(parts) != 2:
                raise ParseError(path, f"bad header line {line!r}", lineno)
            try:
                value = float(parts[1])
            except ValueError:
                raise ParseError(path, f"bad header value {parts[1]!r}", lineno) from None
            if key == "nodata_value":
                nodata = value
            else:
                header[key] = value
        else:
            break
    missing = [k for k in _DTM_HEADER_KEYS if k not in header]
    if missing:
        raise ParseError(path, f"missing header keys: {', '.join(missing)}")
    n_cols = int(header["ncols"])
    n_rows = int(header["nrows"])

    data_lines = [ln for ln in lines[lineno - 1:] if ln.split()]
    if len(data_lines) != n_rows:
        raise InconsistentDimensions(
            f"{path}: header declares {n_rows} rows, found {len(data_lines)}"
        )
    for offset, line in enumerate(data_lines):
        values = line.split()
        if len(values) != n_cols:
            raise InconsistentDimensions(
                f"{path}: row {offset + 1} has {len(values)} values, expected {n_cols}"
            )
        try:
            rows.append(np.array([float(v) for v in values], dtype=np.float64))
        except ValueError:
            raise ParseError(path, "non-numeric grid value", lineno + offset) from None

    grid = np.vstack(rows)
    if nodata is not None:
        grid[grid == nodata] = np.nan
    # File rows run north to south; store south-first so y grows with row index.
    return DtmGrid(
        origin_x=header["xllcorner"],
        origin_y=header["yllcorner"],
        cell_size=header["cellsize"],
        elevations=grid[::-1].copy(),
    )


def write_dtm(path, dtm: DtmGrid, nodata: float = -9999.0) -> None:
    grid = dtm.elevations[::-1].copy()
    grid[~np.isfinite(grid)] = nodata
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"ncols {dtm.n_cols}\n")
            fh.write(f"nrows {dtm.n_rows}\n")
            fh.write(f"xllcorner {_COORD_FMT % dtm.origin_x}\n")
            fh.write(f"yllcorner {_COORD_FMT % dtm.origin_y}\n")
            fh.write(f"cellsize {_COORD_FMT % dtm.cell_size}\n")
            fh.write(f"NODATA_value {nodata:g}\n")
            for row in grid:
                fh.write(" ".join(_COORD_FMT % v for v in row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def write_report(
    path,
    transform: RigidTransform,
    metrics: dict | None = None,
    diagnostics: dict | None = None,
    local_origin=(0.0, 0.0, 0.0),
    t_z_stage: dict | None = None,
    per_wall: list[dict] | None = None,
) -> None:
    """Write the registration report as JSON with a fixed field order."""
    q = transform.rotation
    doc = {
        "version": REPORT_VERSION,
        "local_origin": [float(v) for v in np.asarray(local_origin).reshape(3)],
        "quaternion": [float(v) for v in q],
        "matrix": [[float(v) for v in row] for row in transform.matrix()],
        "t_z_stage": t_z_stage if t_z_stage is not None else {"status": "skipped"},
        "per_wall": per_wall if per_wall is not None else [],
        "metrics": metrics if metrics is not None else {},
    }
    if diagnostics:
        doc["diagnostics"] = diagnostics
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_report(path) -> dict:
    path = str(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if "quaternion" not in doc or "matrix" not in doc:
        raise ParseError(path, "not a registration report")
    return doc


def report_transform(doc: dict) -> RigidTransform:
    """Reconstruct the rigid transform stored in a report document."""
    m = np.asarray(doc["matrix"], dtype=np.float64)
    return RigidTransform.from_matrix(m)
