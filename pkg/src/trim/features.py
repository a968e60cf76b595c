"""Sparse feature points from segment boundaries, landmarks and frame points."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .segmentation import BoundarySet

log = logging.getLogger(__name__)

INTERSECTION = "intersection"
MERGED = "merged"
LANDMARK = "landmark"
FRAME = "frame"
TAGS = (INTERSECTION, MERGED, LANDMARK, FRAME)


@dataclass(frozen=True)
class SamplingGrid:
    width: float
    height: float
    cols: int
    rows: int
    p: float = 0.2
    n: int = 1000

    @property
    def cell_w(self) -> float:
        return self.width / self.cols

    @property
    def cell_h(self) -> float:
        return self.height / self.rows

    @property
    def tolerance(self) -> float:
        return 0.5 * min(self.cell_w, self.cell_h)

    def edge_count(self) -> int:
        return self.cols + self.rows + 2 * self.cols * self.rows

    def scaled(self, sx: float, sy: float) -> SamplingGrid:
        return SamplingGrid(self.width * sx, self.height * sy, self.cols, self.rows, self.p, self.n)


def size_grid(w: float, h: float, p: float = 0.2, n: int = 1000) -> SamplingGrid:
    """Grid with near-square cells expected to yield about ``n`` boundary hits."""
    if not 0 < p <= 1:
        raise ValueError("sparse ratio must lie in (0, 1]")
    if n < 4:
        raise ValueError("need n >= 4")
    if w <= 0 or h <= 0:
        raise ValueError("image dimensions must be positive")
    rows = math.floor(math.sqrt(n * h / (2 * p * w)))
    cols = math.floor(math.sqrt(n * w / (2 * p * h)))
    if rows < 1 or cols < 1:
        log.warning("grid for n=%d, p=%g collapses; clamping to one cell", n, p)
    return SamplingGrid(w, h, max(cols, 1), max(rows, 1), p, n)


@dataclass
class FeaturePointSet:
    points: np.ndarray  # (k, 2) x, y in pixels
    tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.tags) != len(self.points):
            raise ValueError("one tag per point required")

    def __len__(self):
        return len(self.points)

    @property
    def landmark_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t == LANDMARK]

    def count(self, *tags) -> int:
        return sum(t in tags for t in self.tags)

    def to_text(self) -> str:
        return "".join(f"{x:.6f} {y:.6f} {t}\n" for (x, y), t in zip(self.points, self.tags))

    @classmethod
    def from_text(cls, text: str) -> FeaturePointSet:
        pts, tags = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in TAGS:
                raise ValueError(f"line {lineno}: expected 'x y tag'")
            pts.append((float(parts[0]), float(parts[1])))
            tags.append(parts[2])
        return cls(np.array(pts).reshape(-1, 2), tags)


def intersect_segments(boundary: BoundarySet, grid: SamplingGrid) -> dict[tuple[int, int, int], np.ndarray]:
    """Assign boundary pixel centres to the grid edge they lie on.

    A pixel belongs to an edge when its centre is within half a pixel of the
    segment; with several candidates the nearest wins, horizontal before
    vertical, lower index first. Keys are ``(kind, i, j)`` with kind 1 for the
    horizontal edge g[i,j]-g[i,j+1] and 2 for the vertical edge g[i,j]-g[i+1,j].
    """
    rc = boundary.coords
    if len(rc) == 0:
        return {}
    x = rc[:, 1] + 0.5
    y = rc[:, 0] + 0.5
    lw, lh = grid.cell_w, grid.cell_h

    # nearest horizontal line, and the segment along it
    hi_line = np.clip(np.floor(y / lh + 0.5), 0, grid.rows).astype(np.int64)
    lower = np.clip(np.ceil(y / lh - 0.5), 0, grid.rows).astype(np.int64)
    hi_line = np.where(np.abs(y - lower * lh) <= np.abs(y - hi_line * lh), lower, hi_line)
    h_seg = np.clip(np.ceil(x / lw) - 1, 0, grid.cols - 1).astype(np.int64)
    h_dist = np.hypot(y - hi_line * lh, np.maximum(0, np.maximum(h_seg * lw - x, x - (h_seg + 1) * lw)))

    vj_line = np.clip(np.floor(x / lw + 0.5), 0, grid.cols).astype(np.int64)
    lower = np.clip(np.ceil(x / lw - 0.5), 0, grid.cols).astype(np.int64)
    vj_line = np.where(np.abs(x - lower * lw) <= np.abs(x - vj_line * lw), lower, vj_line)
    v_seg = np.clip(np.ceil(y / lh) - 1, 0, grid.rows - 1).astype(np.int64)
    v_dist = np.hypot(x - vj_line * lw, np.maximum(0, np.maximum(v_seg * lh - y, y - (v_seg + 1) * lh)))

    use_h = (h_dist <= 0.5) & (h_dist <= v_dist)
    use_v = (v_dist <= 0.5) & ~use_h

    keys = np.full((len(x), 3), -1, dtype=np.int64)
    keys[use_h] = np.stack([np.ones(use_h.sum(), np.int64), hi_line[use_h], h_seg[use_h]], axis=1)
    keys[use_v] = np.stack([np.full(use_v.sum(), 2, np.int64), v_seg[use_v], vj_line[use_v]], axis=1)
    hit = use_h | use_v
    keys, px = keys[hit], np.stack([x[hit], y[hit]], axis=1)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys, px = keys[order], px[order]
    out: dict[tuple[int, int, int], np.ndarray] = {}
    if len(keys) == 0:
        return out
    cut = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    for ks, pts in zip(np.split(keys, cut), np.split(px, cut)):
        out[tuple(int(v) for v in ks[0])] = pts
    return out


def merge_points(points) -> np.ndarray | None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return None
    if len(pts) == 1:
        return pts[0].copy()
    return pts.mean(axis=0)


def sparse_features(boundary: BoundarySet, grid: SamplingGrid) -> FeaturePointSet:
    pts, tags = [], []
    for key, members in intersect_segments(boundary, grid).items():
        pts.append(merge_points(members))
        tags.append(INTERSECTION if len(members) == 1 else MERGED)
    return FeaturePointSet(np.array(pts).reshape(-1, 2), tags)


def calibrated_features(
    boundary: BoundarySet, w: float, h: float, p: float, n: int, rounds: int = 4, band: float = 1.2
) -> tuple[FeaturePointSet, SamplingGrid]:
    """Size the grid from ``p`` and ``n``, then re-size with the measured hit fraction.

    ``p`` stands for the fraction of grid edges that meet a boundary. When the
    realised point count misses ``n`` by more than the factor ``band`` the
    observed fraction replaces ``p`` and the grid is rebuilt; the attempt
    closest to ``n`` (in ratio) is kept.
    """
    best = None
    for _ in range(max(1, rounds)):
        grid = size_grid(w, h, p, n)
        P = sparse_features(boundary, grid)
        miss = abs(math.log(max(len(P), 1) / n))
        if best is None or miss < best[0]:
            best = (miss, P, grid)
        if len(P) == 0 or miss <= math.log(band):
            break
        p_new = min(1.0, max(1e-3, len(P) / grid.edge_count()))
        if p_new == p:
            break
        p = p_new
    return best[1], best[2]


def _far_from(points: np.ndarray, anchors: np.ndarray, tol: float) -> np.ndarray:
    if len(anchors) == 0 or len(points) == 0:
        return np.ones(len(points), dtype=bool)
    keep = np.ones(len(points), dtype=bool)
    for a in anchors:
        keep &= np.hypot(points[:, 0] - a[0], points[:, 1] - a[1]) > tol
    return keep


def add_landmarks(P: FeaturePointSet, landmarks, grid: SamplingGrid) -> FeaturePointSet:
    """Append landmarks verbatim and drop ordinary points crowding them."""
    lm = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    if len(lm) == 0:
        return FeaturePointSet(P.points.copy(), list(P.tags))
    for i, (x, y) in enumerate(lm):
        if not (0 <= x <= grid.width and 0 <= y <= grid.height):
            raise ValueError(f"landmark {i} at ({x}, {y}) lies outside the image")
    d = np.hypot(lm[:, None, 0] - lm[None, :, 0], lm[:, None, 1] - lm[None, :, 1])
    close = np.argwhere(np.triu(d < grid.tolerance, 1))
    if len(close):
        log.warning("%d landmark pairs closer than %.3g px; keeping all", len(close), grid.tolerance)
    is_lm = np.array([t == LANDMARK for t in P.tags], dtype=bool)
    keep = is_lm | _far_from(P.points, lm, grid.tolerance)
    pts = np.concatenate([P.points[keep], lm])
    tags = [t for t, k in zip(P.tags, keep) if k] + [LANDMARK] * len(lm)
    return FeaturePointSet(pts, tags)


def frame_points(grid: SamplingGrid) -> np.ndarray:
    w, h = grid.width, grid.height
    pts = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    for k in range(1, grid.cols):
        x = k * grid.cell_w
        pts += [(x, 0.0), (x, h)]
    for k in range(1, grid.rows):
        y = k * grid.cell_h
        pts += [(0.0, y), (w, y)]
    return np.array(pts)


def add_frame_points(P: FeaturePointSet, grid: SamplingGrid) -> FeaturePointSet:
    """Add image corners and evenly spaced border points.

    Frame points displace ordinary points within the dedup tolerance so the
    triangulated hull is the full image rectangle. Landmarks are never
    displaced; a non-corner frame point crowding a landmark is skipped instead.
    """
    fr = frame_points(grid)
    tol = grid.tolerance
    is_lm = np.array([t == LANDMARK for t in P.tags], dtype=bool)
    lm = P.points[is_lm]
    is_frame = np.array([t == FRAME for t in P.tags], dtype=bool)
    existing_frame = P.points[is_frame]

    keep_fr = np.ones(len(fr), dtype=bool)
    for i, f in enumerate(fr):
        corner = i < 4
        if len(existing_frame) and np.min(np.hypot(*(existing_frame - f).T)) <= 1e-9:
            keep_fr[i] = False
        elif not corner and len(lm) and np.min(np.hypot(*(lm - f).T)) <= tol:
            keep_fr[i] = False
        elif len(lm) and np.min(np.hypot(*(lm - f).T)) <= 1e-9:
            keep_fr[i] = False
    fr = fr[keep_fr]
    keep = is_lm | is_frame | _far_from(P.points, fr, tol)
    pts = np.concatenate([P.points[keep], fr])
    tags = [t for t, k in zip(P.tags, keep) if k] + [FRAME] * len(fr)
    return FeaturePointSet(pts, tags)
