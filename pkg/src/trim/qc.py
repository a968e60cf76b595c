"""Landmark-constrained quasi-conformal registration on triangle meshes.

Maps are piecewise linear: one target position per vertex. Beltrami
coefficients live on faces when they come from a map (``mu``) and on vertices
when smoothed (``nu``); vertex values reach the faces by corner averaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .mesh import TriMesh, signed_areas, triangle_ids
from .raster import RasterImage

log = logging.getLogger(__name__)


class SingularSystemError(RuntimeError):
    pass


@dataclass
class PLMap:
    mesh: TriMesh
    targets: np.ndarray  # (V, 2)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 2)
        if len(self.targets) != self.mesh.n_vertices:
            raise ValueError("one target per vertex required")
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("map has non-finite targets")

    @classmethod
    def identity(cls, mesh: TriMesh) -> PLMap:
        return cls(mesh, mesh.vertices.copy())

    def __call__(self, index):
        return self.targets[index]


@dataclass
class LandmarkCorrespondence:
    """Source vertex indices paired with target positions."""

    sources: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.sources = np.asarray(self.sources, dtype=np.int64).ravel()
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 2)
        if len(self.sources) != len(self.targets):
            raise ValueError("sources and targets differ in length")
        if len(set(self.sources.tolist())) != len(self.sources):
            raise ValueError("landmark source vertices must be distinct")

    def __len__(self):
        return len(self.sources)


@dataclass
class BoundaryCondition:
    """Per-component Dirichlet data: vertex index -> prescribed coordinate."""

    fixed_u: dict[int, float] = field(default_factory=dict)
    fixed_v: dict[int, float] = field(default_factory=dict)

    @classmethod
    def pinned(cls, indices, positions) -> BoundaryCondition:
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        idx = [int(i) for i in indices]
        return cls(dict(zip(idx, pos[:, 0])), dict(zip(idx, pos[:, 1])))

    @classmethod
    def frame(cls, mesh: TriMesh, source_rect=None, target_rect=None, tol=1e-9) -> BoundaryCondition:
        """Corners to corners; other frame vertices slide along their side.

        Rectangles are ``(x0, y0, x1, y1)``; the source rectangle defaults to
        the mesh bounding box and the target rectangle to the source one.
        """
        v = mesh.vertices
        if source_rect is None:
            source_rect = (*v.min(axis=0), *v.max(axis=0))
        if target_rect is None:
            target_rect = source_rect
        x0, y0, x1, y1 = source_rect
        X0, Y0, X1, Y1 = target_rect
        scale = max(x1 - x0, y1 - y0)
        eps = tol * max(scale, 1.0)
        bc = cls()
        for i in mesh.boundary_vertices:
            x, y = v[i]
            if abs(x - x0) <= eps:
                bc.fixed_u[i] = X0
            elif abs(x - x1) <= eps:
                bc.fixed_u[i] = X1
            if abs(y - y0) <= eps:
                bc.fixed_v[i] = Y0
            elif abs(y - y1) <= eps:
                bc.fixed_v[i] = Y1
        return bc

    def with_landmarks(self, constraints: LandmarkCorrespondence | None) -> BoundaryCondition:
        bc = BoundaryCondition(dict(self.fixed_u), dict(self.fixed_v))
        if constraints is not None:
            for i, (x, y) in zip(constraints.sources, constraints.targets):
                bc.fixed_u[int(i)] = float(x)
                bc.fixed_v[int(i)] = float(y)
        return bc


# ---------------------------------------------------------------- geometry


def face_gradients(vertices, triangles):
    """Gradients of the three hat functions on every face, shape (F, 3, 2), and signed areas."""
    v = np.asarray(vertices)
    t = np.asarray(triangles)
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    area2 = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    if np.any(area2 == 0):
        raise ValueError(f"degenerate source face {int(np.flatnonzero(area2 == 0)[0])}")
    g = np.empty((len(t), 3, 2))
    g[:, 0, 0] = p1[:, 1] - p2[:, 1]
    g[:, 0, 1] = p2[:, 0] - p1[:, 0]
    g[:, 1, 0] = p2[:, 1] - p0[:, 1]
    g[:, 1, 1] = p0[:, 0] - p2[:, 0]
    g[:, 2, 0] = p0[:, 1] - p1[:, 1]
    g[:, 2, 1] = p1[:, 0] - p0[:, 0]
    g /= area2[:, None, None]
    return g, 0.5 * area2


def map_derivatives(mesh: TriMesh, targets):
    """Constant (f_z, f_zbar) of the affine map on every face.

    Partials come from edge differences by Cramer's rule, written so that the
    identity (and any similarity) map yields exact values.
    """
    v = mesh.vertices
    t = mesh.triangles
    tg = np.asarray(targets, dtype=np.float64)
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    d1 = tg[t[:, 1]] - tg[t[:, 0]]
    d2 = tg[t[:, 2]] - tg[t[:, 0]]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det == 0):
        raise ValueError(f"degenerate source face {int(np.flatnonzero(det == 0)[0])}")
    u_x = (d1[:, 0] * e2[:, 1] - e1[:, 1] * d2[:, 0]) / det
    u_y = (e1[:, 0] * d2[:, 0] - d1[:, 0] * e2[:, 0]) / det
    v_x = (d1[:, 1] * e2[:, 1] - e1[:, 1] * d2[:, 1]) / det
    v_y = (e1[:, 0] * d2[:, 1] - d1[:, 1] * e2[:, 0]) / det
    fz = 0.5 * ((u_x + v_y) + 1j * (v_x - u_y))
    fzb = 0.5 * ((u_x - v_y) + 1j * (v_x + u_y))
    return fz, fzb


def face_beltrami(mesh: TriMesh, plmap: PLMap | np.ndarray, return_flags=False):
    """Beltrami coefficient ``f_zbar / f_z`` per face.

    Faces whose image collapses to a point get 0; faces with ``f_z = 0`` but a
    nonzero ``f_zbar`` get a unit-modulus value. Both are flagged.
    """
    targets = plmap.targets if isinstance(plmap, PLMap) else plmap
    fz, fzb = map_derivatives(mesh, targets)
    mu = np.zeros(len(fz), dtype=complex)
    ok = fz != 0
    mu[ok] = fzb[ok] / fz[ok]
    anti = ~ok & (fzb != 0)
    mu[anti] = fzb[anti] / np.abs(fzb[anti])
    flags = ~ok
    if return_flags:
        return mu, flags
    return mu


def face_areas(mesh: TriMesh) -> np.ndarray:
    return np.abs(signed_areas(mesh.vertices, mesh.triangles))


def face_to_vertex(mesh: TriMesh, values) -> np.ndarray:
    """Area-weighted average of face values around every vertex."""
    a = face_areas(mesh)
    V = mesh.n_vertices
    num = np.zeros(V, dtype=np.result_type(values, float))
    den = np.zeros(V)
    for k in range(3):
        np.add.at(num, mesh.triangles[:, k], a * values)
        np.add.at(den, mesh.triangles[:, k], a)
    den[den == 0] = 1.0
    return num / den


def vertex_to_face(mesh: TriMesh, values) -> np.ndarray:
    return np.asarray(values)[mesh.triangles].mean(axis=1)


def stiffness(mesh: TriMesh, coeff=None) -> sp.csr_matrix:
    """Linear finite-element matrix of ``-div(A grad u)``; ``A = I`` gives the cotangent Laplacian."""
    g, area = face_gradients(mesh.vertices, mesh.triangles)
    area = np.abs(area)
    if coeff is None:
        Ag = g
    else:
        Ag = np.einsum("fij,fkj->fki", coeff, g)
    local = area[:, None, None] * np.einsum("fkd,fld->fkl", g, Ag)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    V = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(V, V)).tocsr()


def lumped_mass(mesh: TriMesh) -> np.ndarray:
    a = face_areas(mesh) / 3.0
    m = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(m, mesh.triangles[:, k], a)
    return m


def beltrami_matrix(nu_faces) -> np.ndarray:
    """Per-face 2x2 coefficient of the generalised Laplace equation for Beltrami coefficient ``nu``."""
    nu = np.asarray(nu_faces, dtype=complex)
    r, t = nu.real, nu.imag
    d = 1.0 - r * r - t * t
    A = np.empty((len(nu), 2, 2))
    A[:, 0, 0] = ((r - 1) ** 2 + t * t) / d
    A[:, 0, 1] = A[:, 1, 0] = -2 * t / d
    A[:, 1, 1] = ((1 + r) ** 2 + t * t) / d
    return A


# ---------------------------------------------------------------- solvers


def _dirichlet_solve(K, fixed: dict[int, float], n: int) -> np.ndarray:
    if not fixed:
        raise SingularSystemError("no Dirichlet data: the system is singular")
    idx = np.fromiter(fixed.keys(), dtype=np.int64)
    val = np.fromiter(fixed.values(), dtype=np.float64)
    x = np.zeros(n)
    x[idx] = val
    free = np.ones(n, dtype=bool)
    free[idx] = False
    if not free.any():
        return x
    Kc = K.tocsc()
    Kff = Kc[free][:, free]
    rhs = -(Kc[free][:, ~free] @ x[~free])
    try:
        lu = splu(Kff.tocsc())
    except RuntimeError as e:
        raise SingularSystemError(str(e)) from None
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("solve produced non-finite values")
    x[free] = sol
    # Dirichlet values are written verbatim, never recomputed
    x[idx] = val
    return x


def lbs_solve(
    mesh: TriMesh,
    nu_faces,
    constraints: LandmarkCorrespondence | None = None,
    boundary: BoundaryCondition | None = None,
    delta: float = 1e-3,
) -> PLMap:
    """Piecewise-linear map with Beltrami coefficient ``nu_faces`` honouring the constraints exactly.

    Each coordinate solves ``div(A(nu) grad u) = 0`` with its own Dirichlet set:
    landmark vertices fix both coordinates, ``boundary`` may fix either.
    """
    nu = np.broadcast_to(np.asarray(nu_faces, dtype=complex), (mesh.n_triangles,))
    mod = np.abs(nu)
    bad = np.flatnonzero(mod > 1 - delta + 1e-12)
    if len(bad):
        f = int(bad[0])
        raise ValueError(f"|nu| = {mod[f]:.6f} on face {f} exceeds 1 - delta")
    bc = (boundary or BoundaryCondition()).with_landmarks(constraints)
    K = stiffness(mesh, beltrami_matrix(nu))
    n = mesh.n_vertices
    u = _dirichlet_solve(K, bc.fixed_u, n)
    v = _dirichlet_solve(K, bc.fixed_v, n)
    return PLMap(mesh, np.stack([u, v], axis=1))


def _check_connected(mesh: TriMesh, K):
    ncomp, _ = connected_components(K, directed=False)
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    if ncomp > 1 or not used.all():
        raise SingularSystemError(f"mesh is not connected ({ncomp} components)")


def smooth_update_nu(mesh: TriMesh, mu_faces, alpha: float, rho: float) -> np.ndarray:
    """Vertex field solving ``(-Lap + 2 alpha + 2 rho) nu = 2 rho mu`` (weak form, lumped mass)."""
    K = stiffness(mesh)
    _check_connected(mesh, K)
    M = lumped_mass(mesh)
    mu_v = face_to_vertex(mesh, np.asarray(mu_faces, dtype=complex))
    lhs = (K + sp.diags((2 * alpha + 2 * rho) * M)).tocsc()
    lu = splu(lhs)
    rhs = 2 * rho * M * mu_v
    return lu.solve(rhs.real) + 1j * lu.solve(rhs.imag)


def clamp_nu(nu, delta: float = 1e-3) -> np.ndarray:
    nu = np.array(nu, dtype=complex)
    cap = 1.0 - delta
    mod = np.abs(nu)
    over = mod > cap
    nu[over] *= cap / mod[over]
    return nu


def step_nu(nu, mu, t: float, delta: float = 1e-3) -> np.ndarray:
    nu = np.asarray(nu, dtype=complex)
    return clamp_nu(nu + t * (np.asarray(mu, dtype=complex) - nu), delta)


def split_energy(mesh: TriMesh, nu_vertices, plmap: PLMap | np.ndarray, alpha: float, rho: float) -> float:
    """Dirichlet energy of nu plus mass-lumped ``alpha |nu|^2 + rho |nu - mu(f)|^2``."""
    nu = np.asarray(nu_vertices, dtype=complex)
    K = stiffness(mesh)
    M = lumped_mass(mesh)
    mu_v = face_to_vertex(mesh, face_beltrami(mesh, plmap))
    dirichlet = nu.real @ (K @ nu.real) + nu.imag @ (K @ nu.imag)
    e = dirichlet + alpha * np.sum(M * np.abs(nu) ** 2) + rho * np.sum(M * np.abs(nu - mu_v) ** 2)
    return float(max(e, 0.0))


# ---------------------------------------------------------------- QCLR


@dataclass(frozen=True)
class QclrParams:
    alpha: float = 1.0
    rho: float = 1.0
    t: float = 0.5
    max_iter: int = 50
    tol: float | None = None  # None -> 1e-4 * mesh diagonal
    delta: float = 1e-3
    rho_growth: float = 2.0
    rho_every: int = 5
    rho_max: float = 64.0

    def __post_init__(self):
        if self.alpha <= 0 or self.rho <= 0:
            raise ValueError("alpha and rho must be positive")
        if not 0 < self.t <= 1:
            raise ValueError("t must lie in (0, 1]")
        if not 0 < self.delta <= 0.1:
            raise ValueError("delta must lie in (0, 0.1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class QclrDiagnostics:
    energy: list[float] = field(default_factory=list)
    rho: list[float] = field(default_factory=list)
    nu_sup: list[float] = field(default_factory=list)
    landmark_residual: list[float] = field(default_factory=list)
    displacement: list[float] = field(default_factory=list)
    folds: list[int] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    energy_increases: int = 0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "energy": self.energy,
            "rho": self.rho,
            "nu_sup": self.nu_sup,
            "landmark_residual": self.landmark_residual,
            "displacement": self.displacement,
            "fold_count": self.folds,
            "energy_increases": self.energy_increases,
        }


def landmark_residual(plmap: PLMap, constraints: LandmarkCorrespondence) -> float:
    if len(constraints) == 0:
        return 0.0
    d = plmap.targets[constraints.sources] - constraints.targets
    return float(np.max(np.hypot(d[:, 0], d[:, 1])))


def fold_count(mesh: TriMesh, plmap: PLMap) -> int:
    return int(np.sum(signed_areas(plmap.targets, mesh.triangles) * np.sign(mesh.signed_areas()) <= 0))


def qclr_register(
    mesh: TriMesh,
    constraints: LandmarkCorrespondence,
    params: QclrParams = QclrParams(),
    boundary: BoundaryCondition | None = None,
) -> tuple[PLMap, QclrDiagnostics]:
    """Alternate map solves and Beltrami smoothing until the map stops moving.

    Energy increases between consecutive iterations at the same penalty weight
    are counted in the diagnostics; changes of the penalty weight are not.
    Without convergence the iterate with the fewest folds (latest on ties) is
    returned.
    """
    if len(constraints) == 0:
        raise ValueError("at least one landmark correspondence is required")
    if boundary is None:
        boundary = BoundaryCondition.frame(mesh)
    tol = params.tol
    if tol is None:
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        tol = 1e-4 * float(np.hypot(*(hi - lo)))
    diag = QclrDiagnostics()
    rho = params.rho
    nu = np.zeros(mesh.n_vertices, dtype=complex)
    fmap = lbs_solve(mesh, vertex_to_face(mesh, nu), constraints, boundary, params.delta)
    best = (fold_count(mesh, fmap), fmap, nu)

    for it in range(1, params.max_iter + 1):
        mu = face_beltrami(mesh, fmap)
        nu = clamp_nu(smooth_update_nu(mesh, mu, params.alpha, rho), params.delta)
        trial = lbs_solve(mesh, vertex_to_face(mesh, nu), constraints, boundary, params.delta)
        nu = step_nu(nu, face_to_vertex(mesh, face_beltrami(mesh, trial)), params.t, params.delta)
        new = lbs_solve(mesh, vertex_to_face(mesh, nu), constraints, boundary, params.delta)

        disp = float(np.max(np.hypot(*(new.targets - fmap.targets).T)))
        energy = split_energy(mesh, nu, new, params.alpha, rho)
        if diag.energy and diag.rho[-1] == rho and energy > diag.energy[-1] + 1e-6 * max(diag.energy[0], 1e-300):
            diag.energy_increases += 1
            log.debug("split energy rose at iteration %d: %g -> %g", it, diag.energy[-1], energy)
        diag.energy.append(energy)
        diag.rho.append(rho)
        diag.nu_sup.append(float(np.max(np.abs(nu))) if len(nu) else 0.0)
        diag.landmark_residual.append(landmark_residual(new, constraints))
        diag.displacement.append(disp)
        folds = fold_count(mesh, new)
        diag.folds.append(folds)
        diag.iterations = it
        fmap = new
        if folds <= best[0]:
            best = (folds, fmap, nu)
        if disp < tol:
            diag.converged = True
            break
        if it % params.rho_every == 0:
            rho = min(rho * params.rho_growth, params.rho_max)

    if not diag.converged:
        log.warning("QCLR stopped after %d iterations without converging", diag.iterations)
        fmap = best[1]
    return fmap, diag


# ---------------------------------------------------------------- warping


def bilinear_sample(data: np.ndarray, x: np.ndarray, y: np.ndarray, snap: float = 1e-9) -> np.ndarray:
    """Sample ``(h, w, c)`` data at continuous pixel coordinates (centres at +0.5), edges clamped."""
    h, w = data.shape[:2]
    fx = np.clip(x - 0.5, 0, w - 1)
    fy = np.clip(y - 0.5, 0, h - 1)
    j0 = np.floor(fx).astype(np.int64)
    i0 = np.floor(fy).astype(np.int64)
    tx = fx - j0
    ty = fy - i0
    # sampling positions within round-off of a pixel centre hit it exactly
    for t, base in ((tx, j0), (ty, i0)):
        near_one = t > 1 - snap
        base[near_one] += 1
        t[near_one] = 0.0
        t[t < snap] = 0.0
    j0 = np.minimum(j0, w - 1)
    i0 = np.minimum(i0, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    tx = tx[:, None]
    ty = ty[:, None]
    top = data[i0, j0] * (1 - tx) + data[i0, j1] * tx
    bot = data[i1, j0] * (1 - tx) + data[i1, j1] * tx
    return top * (1 - ty) + bot * ty


@dataclass
class WarpStats:
    outside: int
    overlap: int


def warp_image(
    source: RasterImage, mesh: TriMesh, plmap: PLMap, target_size, fill: float = 0.0
) -> tuple[RasterImage, WarpStats]:
    """Pull ``source`` through the inverse of the map onto a ``target_size`` canvas.

    Every target pixel centre is located in a mapped face, carried back to the
    source by barycentric coordinates and sampled bilinearly. Uncovered pixels
    receive ``fill``.
    """
    W, H = int(target_size[0]), int(target_size[1])
    tri = mesh.triangles
    ids, overlap = triangle_ids(plmap.targets, tri, W, H, return_overlap=True)
    out = np.full((H, W, source.channels), float(fill))
    rows, cols = np.nonzero(ids >= 0)
    if len(rows):
        f = ids[rows, cols]
        px = cols + 0.5
        py = rows + 0.5
        T = plmap.targets[tri[f]]  # (n, 3, 2)
        S = mesh.vertices[tri[f]]
        ax, ay = T[:, 0, 0], T[:, 0, 1]
        e1x, e1y = T[:, 1, 0] - ax, T[:, 1, 1] - ay
        e2x, e2y = T[:, 2, 0] - ax, T[:, 2, 1] - ay
        d = e1x * e2y - e1y * e2x
        qx, qy = px - ax, py - ay
        l1 = (qx * e2y - qy * e2x) / d
        l2 = (e1x * qy - e1y * qx) / d
        l0 = 1.0 - l1 - l2
        sx = l0 * S[:, 0, 0] + l1 * S[:, 1, 0] + l2 * S[:, 2, 0]
        sy = l0 * S[:, 0, 1] + l1 * S[:, 1, 1] + l2 * S[:, 2, 1]
        out[rows, cols] = bilinear_sample(source.data, sx, sy)
    outside = int(np.sum(ids < 0))
    return RasterImage(np.clip(out, 0.0, 1.0), source.colorspace), WarpStats(outside, overlap)
