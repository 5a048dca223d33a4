"""Command-line interface.

Subcommands mirror the pipeline stages:

* ``register``       run the full pipeline and write the JSON report
                     (plus optional per-point CSV and diagnostic figures);
* ``synth``          generate a synthetic scene as input files;
* ``eval``           compare a report against a ground-truth transform;
* ``extract-planes`` stop after plane-segment extraction and dump segments.

Exit codes: 0 success, 2 parse/input errors, 3 degenerate geometry,
4 no convergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv as _csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import (
    DegenerateGeometry,
    DegenerateInput,
    DuplicateId,
    EmptyCloud,
    InconsistentDimensions,
    InsufficientPairs,
    ModelNormalMismatch,
    NoCandidates,
    NoConvergence,
    NoCoverage,
    NonPlanarPolygon,
    NoValidFacade,
    NoVerticalWalls,
    ParseError,
    RankDeficient,
    RegistrationError,
)
from .geometry import RigidTransform
from .io import (
    DtmGrid,
    PointCloud,
    read_dtm,
    read_point_cloud,
    read_report,
    read_wall_model,
    report_transform,
    write_dtm,
    write_point_cloud,
    write_point_cloud_ply,
    write_report,
    write_wall_model,
    WallModel,
)
from .metrics import write_distance_csv
from .pipeline import PipelineConfig, RegistrationResult, run_registration
from .synth import SceneSpec, SceneBundle, generate, oracle_metrics

log = logging.getLogger("plinthreg")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_DEGENERATE = 3
EXIT_NO_CONVERGENCE = 4

_PARSE_ERRORS = (
    ParseError, EmptyCloud, InconsistentDimensions, NonPlanarPolygon, DuplicateId,
    FileNotFoundError,
)
_DEGENERATE_ERRORS = (
    DegenerateGeometry, RankDeficient, NoVerticalWalls, NoCoverage, NoValidFacade,
    NoCandidates, ModelNormalMismatch, InsufficientPairs, DegenerateInput,
)


def _classify(exc: BaseException) -> int:
    if isinstance(exc, _PARSE_ERRORS):
        return EXIT_PARSE
    if isinstance(exc, _DEGENERATE_ERRORS):
        return EXIT_DEGENERATE
    if isinstance(exc, NoConvergence):
        return EXIT_NO_CONVERGENCE
    return EXIT_ERROR


# ---------------------------------------------------------------------------
# Shared pipeline flags
# ---------------------------------------------------------------------------

_FLAG_FIELDS = {
    "buffer": ("thickness", float),
    "band": ("ground_band", float),
    "t_dis": ("t_dis", float),
    "t_alpha": ("t_alpha", float),
    "radius": ("radius", float),
    "min_pairs": ("min_pairs", int),
    "seed": ("seed", int),
    "workers": ("workers", int),
    "max_iter": ("max_iter", int),
    "min_inliers": ("min_inliers", int),
    "check_spacing": ("check_spacing", float),
}


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    pg = parser.add_argument_group("pipeline parameters")
    pg.add_argument("--config", help="JSON config file; explicit flags override it")
    pg.add_argument("--buffer", type=float, default=None, help="buffer thickness [m] (default 1.0)")
    pg.add_argument("--band", type=float, default=None, help="ground band half-width [m] (default 0.3)")
    pg.add_argument("--t-dis", dest="t_dis", type=float, default=None,
                    help="RANSAC/GC distance threshold [m] (default 0.02)")
    pg.add_argument("--t-alpha", dest="t_alpha", type=float, default=None,
                    help="facade angle threshold [deg] (default 10)")
    pg.add_argument("--radius", type=float, default=None,
                    help="vertical-stage XY search radius [m] (default 0.5)")
    pg.add_argument("--min-pairs", dest="min_pairs", type=int, default=None)
    pg.add_argument("--min-inliers", dest="min_inliers", type=int, default=None)
    pg.add_argument("--seed", type=int, default=None, help="seed for all stochastic stages")
    pg.add_argument("--workers", type=int, default=None, help="per-wall worker processes")
    pg.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    pg.add_argument("--check-spacing", dest="check_spacing", type=float, default=None)
    pg.add_argument("--skip-vertical", action="store_true",
                    help="do not estimate t_z (report keeps t_z = 0)")
    pg.add_argument("--no-pseudo-plane", action="store_true",
                    help="coupled 6-DoF solve using a terrain-grid ground correspondence")
    pg.add_argument("--skip-localize", action="store_true",
                    help="baseline: fit whole wall neighbourhoods (no plinth localisation)")
    pg.add_argument("--per-point-refit", action="store_true",
                    help="re-fit the growth plane after every accepted point")
    pg.add_argument("--no-metrics", action="store_true", help="skip the metrics stage")


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    """defaults < config file < explicitly passed flags."""
    values: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        known = set(PipelineConfig.__dataclass_fields__)
        unknown = set(file_cfg) - known
        if unknown:
            raise ParseError(args.config, f"unknown config keys: {sorted(unknown)}")
        values.update(file_cfg)
    for flag, (field_name, cast) in _FLAG_FIELDS.items():
        flag_value = getattr(args, field_name if hasattr(args, field_name) else flag, None)
        if flag_value is not None:
            values[field_name] = cast(flag_value)
    if args.skip_vertical:
        values["skip_vertical"] = True
    if args.no_pseudo_plane:
        values["include_pseudo_plane"] = False
    if args.skip_localize:
        values["skip_localize"] = True
    if args.per_point_refit:
        values["per_point_refit"] = True
    if args.no_metrics:
        values["with_metrics"] = False
    return PipelineConfig(**values)


def _load_inputs(args) -> tuple[PointCloud, WallModel, DtmGrid | None, list]:
    model = read_wall_model(args.walls)
    cloud = read_point_cloud(args.cloud).shifted(model.local_origin)
    dtm = read_dtm(args.dtm).shifted(model.local_origin) if args.dtm else None
    road = None
    if getattr(args, "ground_model", None):
        road_model = read_wall_model(args.ground_model)
        road = road_model.walls
    return cloud, model, dtm, road


def _dump_stages(out_dir: str, cloud: PointCloud, result: RegistrationResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for wall_id, idx in sorted(result.association.per_wall.items()):
        write_point_cloud(os.path.join(out_dir, f"buffer_{wall_id}.xyz"),
                          PointCloud(cloud.points[idx]))
    for wall_id, seg in sorted(result.segments.items()):
        write_point_cloud(os.path.join(out_dir, f"segment_{wall_id}.xyz"),
                          PointCloud(cloud.points[seg.indices]))
    summary = {
        "per_wall": [d.as_dict() for d in result.wall_diagnostics],
        "ground_points": int(result.association.ground_indices.size),
        "discarded_points": int(result.association.discarded_indices.size),
    }
    with open(os.path.join(out_dir, "stages.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)


def cmd_register(args: argparse.Namespace) -> int:
    config = _build_config(args)
    cloud, model, dtm, road = _load_inputs(args)
    if dtm is None and road is None and not config.skip_vertical:
        raise RankDeficient(
            "no ground data given; pass --dtm/--ground-model or --skip-vertical"
        )
    result = run_registration(cloud, model.walls, dtm, config, road_surfaces=road)
    for message in result.warnings:
        log.warning("%s", message)

    vertical = result.vertical
    t_z_stage = {
        "status": "estimated" if vertical is not None else "skipped",
        "t_z": vertical.t_z if vertical is not None else 0.0,
        "n_pairs": vertical.n_pairs if vertical is not None else 0,
        "raw_solver_tz": result.stage1.raw_t_z,
    }
    diagnostics = {
        "solver": {
            "iterations": result.stage1.iterations,
            "converged": result.stage1.converged,
            "redundancy": result.stage1.redundancy,
            "variance_factor": result.stage1.variance_factor,
            "excluded_ground": result.stage1.excluded_ground,
            "pseudo_plane": config.include_pseudo_plane,
        },
        "warnings": result.warnings,
    }
    write_report(
        args.out,
        transform=result.transform,
        metrics=result.metrics.as_dict() if result.metrics else {},
        diagnostics=diagnostics,
        local_origin=model.local_origin,
        t_z_stage=t_z_stage,
        per_wall=[d.as_dict() for d in result.wall_diagnostics],
    )
    log.info("report written to %s", args.out)

    if args.distances_csv and result.metrics is not None and result.check_points is not None:
        write_distance_csv(args.distances_csv, result.check_points, result.metrics)
        log.info("per-point distances written to %s", args.distances_csv)
    if args.figures:
        from .figures import render_report_figures

        paths = render_report_figures(args.figures, cloud, model.walls, result)
        log.info("figures written: %s", ", ".join(paths))
    if args.dump_stages:
        _dump_stages(args.dump_stages, cloud, result)

    q = result.transform.rotation
    t = result.transform.translation
    print(f"quaternion: [{q[0]:.9f}, {q[1]:.9f}, {q[2]:.9f}, {q[3]:.9f}]")
    print(f"translation: [{t[0]:.6f}, {t[1]:.6f}, {t[2]:.6f}] m")
    if result.metrics is not None:
        m = result.metrics
        print(
            f"errH {m.err_h * 100:.2f} cm  errV {m.err_v * 100:.2f} cm  "
            f"stdH {m.std_h * 100:.2f} cm  stdV {m.std_v * 100:.2f} cm"
        )
    return EXIT_OK


def _scene_spec_from_file(path: str | None, seed: int | None) -> SceneSpec:
    values: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        transform = doc.pop("gt_transform", None)
        known = set(SceneSpec.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ParseError(path, f"unknown scene keys: {sorted(unknown)}")
        values.update(doc)
        if transform is not None:
            if "quaternion" in transform:
                values["gt_transform"] = RigidTransform(
                    np.asarray(transform["quaternion"], dtype=float),
                    np.asarray(transform.get("translation", [0, 0, 0]), dtype=float),
                )
            else:
                values["gt_transform"] = RigidTransform.from_axis_angle(
                    transform.get("axis", [0, 0, 1]),
                    transform.get("angle_deg", 0.0),
                    transform.get("translation", [0, 0, 0]),
                )
    if "occluded_walls" in values:
        values["occluded_walls"] = tuple(values["occluded_walls"])
    if "ground_slope" in values:
        values["ground_slope"] = tuple(values["ground_slope"])
    if seed is not None:
        values["seed"] = seed
    return SceneSpec(**values)


def write_scene(bundle: SceneBundle, out_dir: str, fmt: str = "xyz", labels: bool = False) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if fmt == "ply":
        cloud_path = os.path.join(out_dir, "cloud.ply")
        write_point_cloud_ply(cloud_path, bundle.cloud)
    else:
        cloud_path = os.path.join(out_dir, "cloud.xyz")
        write_point_cloud(cloud_path, bundle.cloud)
    paths.append(cloud_path)

    walls_path = os.path.join(out_dir, "walls.json")
    write_wall_model(walls_path, WallModel(local_origin=np.zeros(3), walls=bundle.walls))
    paths.append(walls_path)

    dtm_path = os.path.join(out_dir, "dtm.asc")
    write_dtm(dtm_path, bundle.dtm)
    paths.append(dtm_path)

    truth_path = os.path.join(out_dir, "truth.json")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "quaternion": [float(v) for v in bundle.truth.rotation],
                "translation": [float(v) for v in bundle.truth.translation],
                "matrix": [[float(v) for v in row] for row in bundle.truth.matrix()],
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    paths.append(truth_path)

    if labels:
        label_path = os.path.join(out_dir, "labels.csv")
        with open(label_path, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["index", "label"])
            for i, lab in enumerate(bundle.labels):
                writer.writerow([i, lab])
        paths.append(label_path)
    return paths


def cmd_synth(args: argparse.Namespace) -> int:
    spec = _scene_spec_from_file(args.spec, args.seed)
    bundle = generate(spec)
    paths = write_scene(bundle, args.out_dir, fmt=args.format, labels=args.labels)
    print("\n".join(paths))
    return EXIT_OK


def _read_truth(path: str) -> RigidTransform:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "quaternion" in doc:
        return RigidTransform(
            np.asarray(doc["quaternion"], dtype=float),
            np.asarray(doc.get("translation", [0, 0, 0]), dtype=float),
        )
    return report_transform(doc)


def cmd_eval(args: argparse.Namespace) -> int:
    pairs: list[tuple[str, str]] = []
    if args.batch:
        with open(args.batch, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.split()
                if not fields:
                    continue
                if len(fields) != 2:
                    raise ParseError(args.batch, "expected 'report truth' per line", lineno)
                pairs.append((fields[0], fields[1]))
    else:
        if not args.report or not args.truth:
            raise ParseError("<args>", "eval needs REPORT TRUTH or --batch FILE")
        pairs.append((args.report, args.truth))

    rows = []
    for report_path, truth_path in pairs:
        estimated = report_transform(read_report(report_path))
        truth = _read_truth(truth_path)
        rot, horiz, vert = oracle_metrics(truth, estimated)
        rows.append((report_path, rot, horiz, vert))
        print(
            f"{report_path}: rotation {rot:.6f} deg, "
            f"horizontal {horiz * 1000:.3f} mm, vertical {vert * 1000:.3f} mm"
        )
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["report", "rotation_deg", "horizontal_m", "vertical_m"])
            for row in rows:
                writer.writerow([row[0], f"{row[1]:.9f}", f"{row[2]:.9f}", f"{row[3]:.9f}"])
    return EXIT_OK


def cmd_extract_planes(args: argparse.Namespace) -> int:
    from .association import apply_ground_filter, associate_points, build_wall_buffers
    from .pipeline import localize_and_extract

    config = _build_config(args)
    cloud, model, dtm, _ = _load_inputs(args)
    buffers = build_wall_buffers(model.walls, config.thickness)
    association = associate_points(cloud, buffers)
    if dtm is not None:
        association = apply_ground_filter(association, cloud, dtm, config.ground_band)
    segments, cutoffs, diagnostics = localize_and_extract(cloud, association, model.walls, config)
    os.makedirs(args.out_dir, exist_ok=True)
    for wall_id, seg in sorted(segments.items()):
        write_point_cloud(
            os.path.join(args.out_dir, f"segment_{wall_id}.xyz"),
            PointCloud(cloud.points[seg.indices]),
        )
    with open(os.path.join(args.out_dir, "segments.json"), "w", encoding="utf-8") as fh:
        json.dump([d.as_dict() for d in diagnostics], fh, indent=2)
    for diag in diagnostics:
        status = diag.error if diag.error else f"{diag.n_segment} segment points"
        print(f"{diag.wall_id}: {status}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plinthreg",
        description="Fine registration of building LiDAR clouds to LoD2 wall models",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="run the full registration pipeline")
    reg.add_argument("--cloud", required=True, help="LiDAR point cloud (xyz/ply)")
    reg.add_argument("--walls", required=True, help="wall model JSON")
    reg.add_argument("--dtm", help="terrain grid (ESRI ASCII)")
    reg.add_argument("--ground-model", dest="ground_model",
                     help="planar road/ground surfaces (wall-model schema) as vertical reference")
    reg.add_argument("--out", required=True, help="output report JSON")
    reg.add_argument("--distances-csv", dest="distances_csv",
                     help="write per-check-point distances as CSV")
    reg.add_argument("--figures", help="directory for diagnostic figures")
    reg.add_argument("--dump-stages", dest="dump_stages",
                     help="directory for per-stage dumps")
    _add_pipeline_flags(reg)
    reg.set_defaults(func=cmd_register)

    syn = sub.add_parser("synth", help="generate a synthetic scene")
    syn.add_argument("--spec", help="scene spec JSON (defaults used when omitted)")
    syn.add_argument("--out-dir", dest="out_dir", required=True)
    syn.add_argument("--seed", type=int, default=None, help="override the spec seed")
    syn.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    syn.add_argument("--labels", action="store_true", help="also write per-point labels CSV")
    syn.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="compare report(s) against ground truth")
    ev.add_argument("report", nargs="?", help="registration report JSON")
    ev.add_argument("truth", nargs="?", help="truth transform JSON")
    ev.add_argument("--batch", help="file with 'report truth' per line")
    ev.add_argument("--csv", help="write the comparison as CSV")
    ev.set_defaults(func=cmd_eval)

    ext = sub.add_parser("extract-planes", help="run association, localisation and extraction only")
    ext.add_argument("--cloud", required=True)
    ext.add_argument("--walls", required=True)
    ext.add_argument("--dtm")
    ext.add_argument("--out-dir", dest="out_dir", required=True)
    _add_pipeline_flags(ext)
    ext.set_defaults(func=cmd_extract_planes)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except RegistrationError as exc:
        log.error("%s", exc)
        return _classify(exc)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_PARSE


if __name__ == "__main__":
    raise SystemExit(main())
