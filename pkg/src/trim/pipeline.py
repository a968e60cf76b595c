"""End-to-end triangulation and registration, the regular-grid baseline and benchmarking."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import (
    FRAME,
    LANDMARK,
    add_frame_points,
    add_landmarks,
    calibrated_features,
    size_grid,
    sparse_features,
)
from .harris import auto_landmarks
from .mesh import TriMesh, assign_colors, delaunay, grid_mesh
from .metrics import compression_rate, matching_accuracy, time_saving_rate
from .qc import BoundaryCondition, LandmarkCorrespondence, QclrParams, qclr_register, warp_image
from .raster import RasterImage, UnsharpParams, lab_to_rgb, load_image, rgb_to_lab, subsample, unsharp_mask
from .segmentation import PsoParams, channel_costs, extract_boundaries, segment

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    levels: int = 4
    points: int | None = None  # None -> auto_points()
    sparse_ratio: float = 0.2
    max_dim: int = 512
    unsharp: UnsharpParams = UnsharpParams()
    pso: PsoParams = PsoParams()
    qclr: QclrParams = QclrParams()
    seed: int = 0
    baseline_spacing: int = 4
    calibrate: bool = True
    colors: bool = True

    def pso_params(self) -> PsoParams:
        return replace(self.pso, seed=self.seed)


def auto_points(width: int, height: int) -> int:
    """Default feature budget for an image of the given (subsampled) size."""
    return 1000


@dataclass
class Triangulation:
    mesh: TriMesh
    grid_cols: int
    grid_rows: int
    sparse_ratio: float
    requested_points: int
    feature_points: int  # intersection and merged points kept in the mesh input
    stage_times: dict[str, float] = field(default_factory=dict)
    labels: np.ndarray | None = None  # (h, w, 3) region indices on the subsampled grid
    segment_costs: list[float] = field(default_factory=list)  # between-class variance per channel


class _Timer:
    def __init__(self, sink: dict, name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = self.sink.get(self.name, 0.0) + time.perf_counter() - self.t0


def trim_triangulate(img: RasterImage, config: PipelineConfig = PipelineConfig(), landmarks=None) -> Triangulation:
    """Coarse content-aware triangulation of ``img`` in original pixel coordinates.

    ``landmarks`` (original pixel coordinates) become mesh vertices unchanged;
    their vertex indices are ``mesh.landmarks`` in the given order.
    """
    times: dict[str, float] = {}
    W, H = img.width, img.height
    with _Timer(times, "subsample"):
        small = subsample(img, config.max_dim)
    w, h = small.width, small.height
    sx, sy = W / w, H / h

    with _Timer(times, "unsharp"):
        if small.channels == 1:
            small = RasterImage(np.repeat(small.data, 3, axis=2))
        lab = rgb_to_lab(small)
        sharp = unsharp_mask(lab, config.unsharp)
        masked = small if np.array_equal(sharp.data, lab.data) else lab_to_rgb(sharp)

    with _Timer(times, "segment"):
        labels, thr, hist = segment(masked, config.levels, config.pso_params())
        costs = channel_costs(hist, thr)
        boundary = extract_boundaries(labels)

    with _Timer(times, "features"):
        n = config.points if config.points is not None else auto_points(w, h)
        if config.calibrate:
            P, grid = calibrated_features(boundary, w, h, config.sparse_ratio, n)
        else:
            grid = size_grid(w, h, config.sparse_ratio, n)
            P = sparse_features(boundary, grid)
        P.points[:, 0] *= sx
        P.points[:, 1] *= sy
        grid_o = grid.scaled(sx, sy)
        if landmarks is not None and len(landmarks):
            P = add_landmarks(P, landmarks, grid_o)
        P = add_frame_points(P, grid_o)
        n_features = len(P) - P.count(FRAME, LANDMARK)

    with _Timer(times, "delaunay"):
        mesh = delaunay(P, image_size=(W, H))

    if config.colors:
        with _Timer(times, "colors"):
            mesh = assign_colors(mesh, img)
    return Triangulation(mesh, grid.cols, grid.rows, grid.p, n, n_features, times, labels, costs)


def read_landmarks(path) -> np.ndarray:
    """Rows ``x_src y_src x_dst y_dst``; ``#`` starts a comment."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 numbers, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_landmarks(path, pairs) -> None:
    lines = ["# x_src y_src x_dst y_dst"]
    lines += [" ".join(f"{v:.6f}" for v in row) for row in np.asarray(pairs).reshape(-1, 4)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RegistrationReport:
    stage_times_s: dict[str, float]
    vertices: int
    triangles: int
    compression_rate_pct: float
    matching_accuracy_pct: float
    time_saving_rate_pct: float | None
    fold_count: int
    converged: bool
    landmark_residual: float
    extra: dict = field(default_factory=dict)

    TIMING_KEYS = ("stage_times_s", "time_saving_rate_pct")

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "stage_times_s": {k: round(v, 6) for k, v in self.stage_times_s.items()},
            "vertices": self.vertices,
            "triangles": self.triangles,
            "compression_rate_pct": self.compression_rate_pct,
            "matching_accuracy_pct": self.matching_accuracy_pct,
            "time_saving_rate_pct": self.time_saving_rate_pct,
            "fold_count": self.fold_count,
            "converged": self.converged,
            "landmark_residual": self.landmark_residual,
        }
        d.update(self.extra)
        if not include_timing:
            for k in self.TIMING_KEYS:
                d.pop(k, None)
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    @property
    def total_time(self) -> float:
        return float(sum(self.stage_times_s.values()))


@dataclass
class Registration:
    warped: RasterImage
    report: RegistrationReport
    mesh: TriMesh
    targets: np.ndarray
    diagnostics: dict


def _check_pairs(pairs):
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 4)
    if len(pairs) == 0:
        raise ValueError("no landmarks: supply a landmark file or request automatic detection")
    return pairs


def _finish(src, dst, mesh, constraints, config, times, extra) -> Registration:
    boundary = BoundaryCondition.frame(mesh, (0, 0, src.width, src.height), (0, 0, dst.width, dst.height))
    with _Timer(times, "qclr"):
        fmap, diag = qclr_register(mesh, constraints, config.qclr, boundary)
    with _Timer(times, "warp"):
        warped, stats = warp_image(src, mesh, fmap, dst.size)
    acc = matching_accuracy(warped, dst) if warped.data.shape == dst.data.shape else float("nan")
    extra = dict(extra)
    extra["outside_pixels"] = stats.outside
    extra["qclr_iterations"] = diag.iterations
    report = RegistrationReport(
        stage_times_s=times,
        vertices=mesh.n_vertices,
        triangles=mesh.n_triangles,
        compression_rate_pct=compression_rate(mesh.n_vertices, src.width, src.height),
        matching_accuracy_pct=acc,
        time_saving_rate_pct=None,
        fold_count=diag.folds[-1] if diag.folds else 0,
        converged=diag.converged,
        landmark_residual=diag.landmark_residual[-1] if diag.landmark_residual else 0.0,
        extra=extra,
    )
    return Registration(warped, report, mesh, fmap.targets, diag.to_dict())


def register_images(src: RasterImage, dst: RasterImage, landmarks, config: PipelineConfig = PipelineConfig()) -> Registration:
    """Triangulate ``src`` with the source landmarks embedded, solve QCLR and warp onto ``dst``'s grid."""
    pairs = _check_pairs(landmarks)
    times: dict[str, float] = {}
    tri = trim_triangulate(src, replace(config, colors=False), landmarks=pairs[:, :2])
    times.update(tri.stage_times)
    constraints = LandmarkCorrespondence(tri.mesh.landmarks, pairs[:, 2:])
    return _finish(src, dst, tri.mesh, constraints, config, times, {"landmark_count": len(pairs)})


def baseline_grid(width: int, height: int, spacing: float) -> TriMesh:
    """Right-triangle grid with ``floor(size / spacing) + 1`` vertices per axis, stretched to the frame."""
    if spacing < 2:
        raise ValueError("grid spacing must be at least 2 px")
    nx = max(1, math.floor(width / spacing))
    ny = max(1, math.floor(height / spacing))
    return grid_mesh(width, height, nx, ny)


def snap_landmarks(mesh: TriMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Nearest mesh vertex for every point and the distance moved."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    v = mesh.vertices
    idx = np.empty(len(pts), dtype=np.int64)
    err = np.empty(len(pts))
    for k, p in enumerate(pts):
        d = np.hypot(v[:, 0] - p[0], v[:, 1] - p[1])
        idx[k] = int(np.argmin(d))
        err[k] = d[idx[k]]
    return idx, err


def grid_baseline_register(src, dst, landmarks, spacing: float = 4, config: PipelineConfig = PipelineConfig()) -> Registration:
    pairs = _check_pairs(landmarks)
    times: dict[str, float] = {}
    with _Timer(times, "grid"):
        mesh = baseline_grid(src.width, src.height, spacing)
        idx, err = snap_landmarks(mesh, pairs[:, :2])
        _, first = np.unique(idx, return_index=True)
        keep = np.sort(first)
        if len(keep) < len(idx):
            log.warning("%d landmarks snapped onto an already used grid vertex and were dropped", len(idx) - len(keep))
        mesh.landmarks = idx[keep].tolist()
    constraints = LandmarkCorrespondence(idx[keep], pairs[keep, 2:])
    extra = {"landmark_count": int(len(keep)), "snap_error_max": float(err.max()), "grid_spacing": spacing}
    return _finish(src, dst, mesh, constraints, config, times, extra)


# ---------------------------------------------------------------- bench


BENCH_COLUMNS = (
    "name",
    "size",
    "trim_vertices",
    "grid_vertices",
    "dof_ratio",
    "compression_rate_pct",
    "trim_time_s",
    "grid_time_s",
    "time_saving_rate_pct",
    "trim_accuracy_pct",
    "grid_accuracy_pct",
)


def bench_pair(name, src, dst, landmarks, config: PipelineConfig = PipelineConfig()) -> dict:
    t0 = time.perf_counter()
    trim = register_images(src, dst, landmarks, config)
    t_trim = time.perf_counter() - t0
    t0 = time.perf_counter()
    grid = grid_baseline_register(src, dst, landmarks, config.baseline_spacing, config)
    t_grid = time.perf_counter() - t0
    return {
        "name": name,
        "size": f"{src.width}x{src.height}",
        "trim_vertices": trim.report.vertices,
        "grid_vertices": grid.report.vertices,
        "dof_ratio": trim.report.vertices / grid.report.vertices,
        "compression_rate_pct": trim.report.compression_rate_pct,
        "trim_time_s": t_trim,
        "grid_time_s": t_grid,
        "time_saving_rate_pct": time_saving_rate(t_trim, t_grid),
        "trim_accuracy_pct": trim.report.matching_accuracy_pct,
        "grid_accuracy_pct": grid.report.matching_accuracy_pct,
    }


def load_manifest(path) -> list[dict]:
    """Pairs listed as ``{"pairs": [{"name", "source", "target", "landmarks" | "auto_landmarks"}]}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    entries = doc["pairs"] if isinstance(doc, dict) else doc
    base = path.parent
    out = []
    for k, e in enumerate(entries):
        item = {"name": e.get("name", f"pair{k}")}
        item["source"] = base / e["source"]
        item["target"] = base / e["target"]
        if "landmarks" in e:
            item["landmarks"] = base / e["landmarks"]
        else:
            item["auto_landmarks"] = int(e.get("auto_landmarks", 50))
        out.append(item)
    return out


def _bench_item(item, config):
    src = load_image(item["source"])
    dst = load_image(item["target"])
    if "landmarks" in item:
        lm = read_landmarks(item["landmarks"])
    else:
        lm = auto_landmarks(src, dst, item["auto_landmarks"])
    return bench_pair(item["name"], src, dst, lm, config)


def bench(pairs, config: PipelineConfig = PipelineConfig(), jobs: int = 1) -> list[dict]:
    """One row per pair, in input order.

    With ``jobs > 1`` pairs run in parallel threads; inside a pair the TRIM and
    grid runs stay sequential so their timings remain comparable.
    """
    pairs = list(pairs)
    if jobs <= 1 or len(pairs) <= 1:
        return [_bench_item(item, config) for item in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda item: _bench_item(item, config), pairs))


def format_table(rows: list[dict]) -> str:
    def cell(v):
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    table = [list(BENCH_COLUMNS)] + [[cell(r[c]) for c in BENCH_COLUMNS] for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(BENCH_COLUMNS))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in table) + "\n"
