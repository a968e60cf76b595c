"""Command line entry point: ``trim triangulate | register | bench``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .harris import auto_landmarks
from .mesh import assign_colors, export_mesh, rasterize_mesh
from .metrics import time_saving_rate
from .pipeline import (
    PipelineConfig,
    bench,
    format_table,
    grid_baseline_register,
    load_manifest,
    read_landmarks,
    register_images,
    trim_triangulate,
    write_landmarks,
)
from .qc import QclrParams
from .raster import RasterImage, UnsharpParams, load_image, save_image
from .segmentation import label_ids

log = logging.getLogger("trim")


def _seed(args) -> int:
    env = os.environ.get("TRIM_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"TRIM_SEED must be an integer, got {env!r}") from None
    return args.seed


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig(
        levels=args.levels,
        points=args.points,
        sparse_ratio=args.sparse_ratio,
        max_dim=args.max_dim,
        unsharp=UnsharpParams(classic=args.classic_unsharp),
        seed=_seed(args),
        calibrate=not args.literal_grid,
    )
    if getattr(args, "t", None) is not None or getattr(args, "max_iter", None) is not None:
        q = QclrParams()
        cfg = replace(cfg, qclr=replace(q, t=args.t or q.t, max_iter=args.max_iter or q.max_iter))
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--levels", type=int, default=4, help="intensity regions per channel")
    p.add_argument("--points", type=int, default=None, help="target feature count (default: automatic)")
    p.add_argument("--sparse-ratio", type=float, default=0.2)
    p.add_argument("--max-dim", type=int, default=512, help="longest side after subsampling")
    p.add_argument("--seed", type=int, default=0, help="PSO seed (TRIM_SEED overrides)")
    p.add_argument("--classic-unsharp", action="store_true", help="use L + lam*(L - blur) instead of L - lam*blur")
    p.add_argument(
        "--literal-grid",
        action="store_true",
        help="size the sampling grid once from the sparse ratio, without recalibration",
    )


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_triangulate(args) -> int:
    img = load_image(args.input)
    cfg = _config(args)
    tri = trim_triangulate(img, cfg)
    export_mesh(tri.mesh, args.out)
    if args.preview:
        mesh = tri.mesh if tri.mesh.colors is not None else assign_colors(tri.mesh, img)
        save_image(rasterize_mesh(mesh, img.size), args.preview)
    if args.labels:
        ids = label_ids(tri.labels)
        _, index = np.unique(ids, return_inverse=True)
        index = index.reshape(ids.shape)
        if index.max() > 255:
            raise ValueError("too many distinct labels for an 8-bit indexed PNG")
        Image.fromarray(index.astype(np.uint8)).save(args.labels, format="PNG")
    if args.report_joint_cost:
        costs = ", ".join(f"{c:.6g}" for c in tri.segment_costs)
        print(f"between-class variance per channel: {costs}; joint sum {sum(tri.segment_costs):.6g}")
    print(
        f"{tri.mesh.n_vertices} vertices, {tri.mesh.n_triangles} triangles "
        f"({tri.feature_points} features for n={tri.requested_points}, grid {tri.grid_cols}x{tri.grid_rows})"
    )
    return 0


def _landmarks(args, src: RasterImage, dst: RasterImage) -> np.ndarray:
    if args.landmarks:
        return read_landmarks(args.landmarks)
    pairs = auto_landmarks(src, dst, args.auto_landmarks)
    log.info("auto-detected %d landmark pairs", len(pairs))
    if args.save_landmarks:
        write_landmarks(args.save_landmarks, pairs)
    return pairs


def cmd_register(args) -> int:
    src = load_image(args.source)
    dst = load_image(args.target)
    if args.landmarks is None and args.auto_landmarks is None:
        raise SystemExit("no landmarks: pass --landmarks <txt> or --auto-landmarks <k>")
    pairs = _landmarks(args, src, dst)
    cfg = _config(args)
    result = register_images(src, dst, pairs, cfg)
    report = result.report
    if args.baseline_grid is not None:
        grid = grid_baseline_register(src, dst, pairs, args.baseline_grid, cfg)
        report.time_saving_rate_pct = time_saving_rate(report.total_time, grid.report.total_time)
        report.extra["baseline"] = grid.report.to_dict()
        report.extra["dof_ratio"] = report.vertices / grid.report.vertices
    save_image(result.warped, args.out)
    Path(args.report).write_text(report.to_json())
    if args.diagnostics:
        _write_json(args.diagnostics, result.diagnostics)
    print(
        f"accuracy {report.matching_accuracy_pct:.2f}%  vertices {report.vertices}  "
        f"folds {report.fold_count}  converged {report.converged}"
    )
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    rows = bench(load_manifest(args.pairs), cfg, jobs=args.jobs)
    _write_json(args.out, {"rows": rows})
    sys.stdout.write(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trim", description="Content-aware image triangulation and registration.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("triangulate", help="triangulate one image and write mesh JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="mesh JSON path")
    p.add_argument("--preview", help="PNG of the flat-shaded mesh")
    p.add_argument("--labels", help="PNG of segment indices on the subsampled grid")
    p.add_argument("--report-joint-cost", action="store_true", help="also print the cost summed over channels")
    _add_common(p)
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("register", help="register source onto target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--landmarks", help="text file with rows 'x_src y_src x_dst y_dst'")
    g.add_argument("--auto-landmarks", type=int, metavar="K", help="detect up to K Harris corners per image")
    p.add_argument("--save-landmarks", help="write auto-detected pairs here")
    p.add_argument("--out", required=True, help="warped image PNG")
    p.add_argument("--report", required=True, help="report JSON")
    p.add_argument("--baseline-grid", type=float, metavar="PX", help="also run the regular grid baseline")
    p.add_argument("--diagnostics", help="per-iteration solver trace JSON")
    p.add_argument("--t", type=float, default=None, help="Beltrami step size")
    p.add_argument("--max-iter", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("bench", help="TRIM against the grid baseline on a list of pairs")
    p.add_argument("--pairs", required=True, help="manifest JSON")
    p.add_argument("--out", required=True, help="result JSON")
    p.add_argument("--jobs", type=int, default=1, help="pairs processed in parallel")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"trim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
