"""Triangle meshes over images: construction, coverage rasterisation, colours and JSON I/O."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .delaunay import DegenerateInputError, collapse_duplicates, triangulate
from .features import FRAME, LANDMARK, FeaturePointSet
from .raster import RGB, RasterImage, lab_to_rgb

log = logging.getLogger(__name__)

AREA_TOL = 1e-12


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 2)
    triangles: np.ndarray  # (F, 3), counter-clockwise
    colors: np.ndarray | None = None  # (F, 3) in [0, 1]
    landmarks: list[int] = field(default_factory=list)
    image_size: tuple[int, int] | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.landmarks = [int(i) for i in self.landmarks]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self, positions=None) -> np.ndarray:
        return signed_areas(self.vertices if positions is None else positions, self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_edges(self) -> np.ndarray:
        """Directed hull edges (each appears in exactly one triangle)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(e, axis=1)
        _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return e[cnt[inv.ravel()] == 1]

    @property
    def boundary_vertices(self) -> list[int]:
        return sorted(set(self.boundary_edges().ravel().tolist()))


def signed_areas(vertices, triangles) -> np.ndarray:
    v = np.asarray(vertices)
    a, b, c = v[triangles[:, 0]], v[triangles[:, 1]], v[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def delaunay(P: FeaturePointSet | np.ndarray, image_size=None) -> TriMesh:
    """Delaunay mesh of a point set; near-duplicates (1e-9 px) collapse, landmarks first."""
    if isinstance(P, FeaturePointSet):
        pts, tags = P.points, P.tags
    else:
        pts = np.asarray(P, dtype=np.float64).reshape(-1, 2)
        tags = [""] * len(pts)
    if len(pts) < 3:
        raise DegenerateInputError(f"need at least 3 points, got {len(pts)}")
    priority = [2 if t == LANDMARK else 1 if t == FRAME else 0 for t in tags]
    rep = collapse_duplicates(pts, 1e-9, priority)
    keep = np.flatnonzero(rep == np.arange(len(pts)))
    new_index = np.full(len(pts), -1)
    new_index[keep] = np.arange(len(keep))
    remap = new_index[rep]
    if len(keep) < len(pts):
        log.info("collapsed %d duplicate points", len(pts) - len(keep))
    verts = pts[keep]
    tris = triangulate(verts)
    lms = [int(remap[i]) for i, t in enumerate(tags) if t == LANDMARK]
    if len(set(lms)) < len(lms):
        log.warning("coincident landmarks share a vertex")
    return TriMesh(verts, tris, None, lms, image_size)


def grid_mesh(width: float, height: float, nx: int, ny: int) -> TriMesh:
    """Regular (nx+1) x (ny+1) vertex grid over [0,w]x[0,h], each cell split along one diagonal."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriMesh(verts, tris, image_size=(int(round(width)), int(round(height))))


def _owner(dx, dy):
    return dy < 0 or (dy == 0 and dx > 0)


def _edge_fn(P, a, b, px, py):
    # evaluated from the lower vertex index so shared edges agree bit-for-bit
    if a < b:
        (ax, ay), (bx, by) = P[a], P[b]
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    (ax, ay), (bx, by) = P[b], P[a]
    return -((bx - ax) * (py - ay) - (by - ay) * (px - ax))


def _cover(P, tri, width, height):
    """Pixel indices (rows, cols) whose centres the triangle owns, plus the bbox origin."""
    a, b, c = (int(v) for v in tri)
    xs = (P[a][0], P[b][0], P[c][0])
    ys = (P[a][1], P[b][1], P[c][1])
    j0 = max(0, math.ceil(min(xs) - 0.5))
    j1 = min(width - 1, math.floor(max(xs) - 0.5))
    i0 = max(0, math.ceil(min(ys) - 0.5))
    i1 = min(height - 1, math.floor(max(ys) - 0.5))
    if j1 < j0 or i1 < i0:
        return None
    px = np.arange(j0, j1 + 1) + 0.5
    py = (np.arange(i0, i1 + 1) + 0.5)[:, None]
    inside = np.ones((i1 - i0 + 1, j1 - j0 + 1), dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        e = _edge_fn(P, u, v, px, py)
        if _owner(P[v][0] - P[u][0], P[v][1] - P[u][1]):
            inside &= e >= 0
        else:
            inside &= e > 0
    return i0, j0, inside


def triangle_ids(vertices, triangles, width: int, height: int, return_overlap=False):
    """Index of the triangle covering each pixel centre, -1 where none does.

    Uses a top-left style fill rule so pixel centres on shared edges go to
    exactly one triangle. Clockwise faces are filled as their mirror; when
    faces overlap the lowest face index keeps the pixel.
    """
    P = [(float(x), float(y)) for x, y in np.asarray(vertices)]
    ids = np.full((height, width), -1, dtype=np.int64)
    areas = signed_areas(vertices, np.asarray(triangles))
    overlap = 0
    for f, tri in enumerate(np.asarray(triangles)):
        if areas[f] == 0:
            continue
        if areas[f] < 0:
            tri = (tri[0], tri[2], tri[1])
        hit = _cover(P, tri, width, height)
        if hit is None:
            continue
        i0, j0, inside = hit
        win = ids[i0 : i0 + inside.shape[0], j0 : j0 + inside.shape[1]]
        taken = inside & (win >= 0)
        overlap += int(taken.sum())
        win[inside & (win < 0)] = f
    if return_overlap:
        return ids, overlap
    return ids


def assign_colors(mesh: TriMesh, img: RasterImage) -> TriMesh:
    """Mean RGB of the pixel centres in each triangle; centroid sample for empty ones."""
    if img.colorspace != RGB:
        img = lab_to_rgb(img)
    h, w = img.height, img.width
    ids = triangle_ids(mesh.vertices, mesh.triangles, w, h)
    valid = ids >= 0
    f = ids[valid]
    counts = np.bincount(f, minlength=mesh.n_triangles).astype(np.float64)
    colors = np.zeros((mesh.n_triangles, img.channels))
    for c in range(img.channels):
        colors[:, c] = np.bincount(f, weights=img.data[:, :, c][valid], minlength=mesh.n_triangles)
    empty = counts == 0
    colors[~empty] /= counts[~empty, None]
    if empty.any():
        cen = mesh.vertices[mesh.triangles[empty]].mean(axis=1)
        cj = np.clip(np.floor(cen[:, 0]).astype(int), 0, w - 1)
        ci = np.clip(np.floor(cen[:, 1]).astype(int), 0, h - 1)
        colors[empty] = img.data[ci, cj]
    if colors.shape[1] == 1:
        colors = np.repeat(colors, 3, axis=1)
    return TriMesh(mesh.vertices, mesh.triangles, colors, mesh.landmarks, mesh.image_size or (w, h))


def rasterize_mesh(mesh: TriMesh, size=None) -> RasterImage:
    if mesh.colors is None:
        raise ValueError("mesh has no colours; run assign_colors first")
    w, h = size or mesh.image_size
    ids = triangle_ids(mesh.vertices, mesh.triangles, w, h)
    out = np.zeros((h, w, 3))
    out[ids >= 0] = mesh.colors[ids[ids >= 0]]
    return RasterImage(np.clip(out, 0, 1), RGB)


class MeshFormatError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


def _num(v: float) -> str:
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def mesh_to_json(mesh: TriMesh) -> str:
    """Mesh JSON with one array element per line (stable, diff-friendly)."""
    lines = ["{"]
    size = list(mesh.image_size) if mesh.image_size is not None else None
    lines.append(f'"image_size": {json.dumps(size)},')
    lines.append('"vertices": [')
    lines += [f"[{_num(x)}, {_num(y)}]," for x, y in mesh.vertices]
    _strip_comma(lines)
    lines.append("],")
    lines.append('"triangles": [')
    lines += [f"[{a}, {b}, {c}]," for a, b, c in mesh.triangles]
    _strip_comma(lines)
    lines.append("],")
    if mesh.colors is None:
        lines.append('"colors": null,')
    else:
        lines.append('"colors": [')
        lines += [f"[{_num(r)}, {_num(g)}, {_num(b)}]," for r, g, b in mesh.colors]
        _strip_comma(lines)
        lines.append("],")
    lines.append(f'"landmarks": {json.dumps(mesh.landmarks)}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _strip_comma(lines):
    if lines[-1].endswith(","):
        lines[-1] = lines[-1][:-1]


def export_mesh(mesh: TriMesh, path) -> None:
    Path(path).write_text(mesh_to_json(mesh))


def _section_line(text, key, offset):
    for n, line in enumerate(text.splitlines(), 1):
        if line.lstrip().startswith(f'"{key}"'):
            return n + 1 + offset
    return None


def mesh_from_json(text: str) -> TriMesh:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MeshFormatError(e.msg, e.lineno) from None
    for key in ("vertices", "triangles", "colors", "landmarks", "image_size"):
        if key not in doc:
            raise MeshFormatError(f"missing key {key!r}")
    try:
        verts = np.asarray(doc["vertices"], dtype=np.float64).reshape(-1, 2)
        tris = np.asarray(doc["triangles"], dtype=np.int64).reshape(-1, 3)
    except (ValueError, TypeError) as e:
        raise MeshFormatError(f"bad vertex or triangle array: {e}") from None
    bad = np.argwhere((tris < 0) | (tris >= len(verts)))
    if len(bad):
        t, k = bad[0]
        raise MeshFormatError(
            f"triangle {t} references vertex index {tris[t, k]} (have {len(verts)} vertices)",
            _section_line(text, "triangles", int(t)),
        )
    colors = doc["colors"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if len(colors) != len(tris):
            raise MeshFormatError("colour count does not match triangle count", _section_line(text, "colors", 0))
    lms = [int(i) for i in doc["landmarks"]]
    for i in lms:
        if not 0 <= i < len(verts):
            raise MeshFormatError(f"landmark index {i} out of range", _section_line(text, "landmarks", -1))
    size = doc["image_size"]
    return TriMesh(verts, tris, colors, lms, tuple(size) if size is not None else None)


def import_mesh(path) -> TriMesh:
    return mesh_from_json(Path(path).read_text())
