"""Independent brute-force reference computations."""

from __future__ import annotations

import itertools
import math

import numpy as np


def otsu_cost(p, thresholds) -> float:
    """Between-class variance by explicit per-level loops."""
    L = len(p)
    mu_t = sum(i * p[i] for i in range(L))
    bounds = [-1, *thresholds, L - 1]
    total = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        w = sum(p[i] for i in range(a + 1, b + 1))
        if w > 0:
            mu = sum(i * p[i] for i in range(a + 1, b + 1)) / w
            total += w * (mu - mu_t) ** 2
    return total


def exhaustive_thresholds(p, regions):
    best, arg = -1.0, None
    for thr in itertools.combinations(range(len(p) - 1), regions - 1):
        c = otsu_cost(p, thr)
        if c > best:
            best, arg = c, thr
    return best, arg


def circumcircle_violations(points, triangles, margin=1e-9) -> int:
    """Count (triangle, vertex) pairs with the vertex strictly inside the circumcircle."""
    P = np.asarray(points, dtype=float)
    bad = 0
    for t in triangles:
        a, b, c = P[t[0]], P[t[1]], P[t[2]]
        d = 2 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
        ux = ((a @ a) * (b[1] - c[1]) + (b @ b) * (c[1] - a[1]) + (c @ c) * (a[1] - b[1])) / d
        uy = ((a @ a) * (c[0] - b[0]) + (b @ b) * (a[0] - c[0]) + (c @ c) * (b[0] - a[0])) / d
        r = math.hypot(a[0] - ux, a[1] - uy)
        dist = np.hypot(P[:, 0] - ux, P[:, 1] - uy)
        inside = dist < r - margin * max(1.0, r)
        inside[list(t)] = False
        bad += int(inside.sum())
    return bad


def opposite_angle_sums(points, triangles):
    """alpha + beta for every interior edge."""
    P = np.asarray(points, dtype=float)
    opp = {}
    for t in triangles:
        for k in range(3):
            i, j, o = t[k], t[(k + 1) % 3], t[(k + 2) % 3]
            u, v = P[i] - P[o], P[j] - P[o]
            ang = math.atan2(abs(u[0] * v[1] - u[1] * v[0]), u @ v)
            opp.setdefault(tuple(sorted((int(i), int(j)))), []).append(ang)
    return [sum(a) for a in opp.values() if len(a) == 2]


def coverage_counts(points, triangles, width, height):
    """How many triangles claim each pixel centre under a top-left style fill rule.

    Written against exact rational arithmetic so it is independent of the
    floating point edge functions used by the library.
    """
    from fractions import Fraction

    P = [(Fraction(x), Fraction(y)) for x, y in np.asarray(points, dtype=float)]
    counts = np.zeros((height, width), dtype=int)
    for t in triangles:
        a, b, c = (P[int(i)] for i in t)
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area2 < 0:
            b, c = c, b
        edges = [(a, b), (b, c), (c, a)]
        xs = [v[0] for v in (a, b, c)]
        ys = [v[1] for v in (a, b, c)]
        x0 = max(0, int(math.floor(min(xs) - 1)))
        x1 = min(width, int(math.ceil(max(xs) + 1)))
        y0 = max(0, int(math.floor(min(ys) - 1)))
        y1 = min(height, int(math.ceil(max(ys) + 1)))
        for yi in range(y0, y1):
            py = Fraction(2 * yi + 1, 2)
            for xi in range(x0, x1):
                px = Fraction(2 * xi + 1, 2)
                ok = True
                for (ex, ey), (fx, fy) in edges:
                    e = (fx - ex) * (py - ey) - (fy - ey) * (px - ex)
                    dx, dy = fx - ex, fy - ey
                    owner = dy < 0 or (dy == 0 and dx > 0)
                    if e < 0 or (e == 0 and not owner):
                        ok = False
                        break
                if ok:
                    counts[yi, xi] += 1
    return counts


def fd_harmonic(n, fixed: dict[tuple[int, int], float], boundary):
    """5-point Laplace solve on an (n+1)^2 unit grid; ``fixed`` pins interior nodes."""
    import scipy.sparse as sp
    from scipy.sparse.linalg import spsolve

    N = (n + 1) ** 2
    idx = lambda i, j: i * (n + 1) + j  # noqa: E731
    A = sp.lil_matrix((N, N))
    b = np.zeros(N)
    for i in range(n + 1):
        for j in range(n + 1):
            k = idx(i, j)
            if i in (0, n) or j in (0, n):
                A[k, k] = 1
                b[k] = boundary(j / n, i / n)
            elif (i, j) in fixed:
                A[k, k] = 1
                b[k] = fixed[(i, j)]
            else:
                A[k, k] = 4
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    A[k, idx(i + di, j + dj)] = -1
    return spsolve(A.tocsr(), b).reshape(n + 1, n + 1)
