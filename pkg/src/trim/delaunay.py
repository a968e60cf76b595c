"""Incremental sweep triangulation legalised into a Delaunay triangulation by edge flips.

All geometric decisions go through the exact predicates, so near-degenerate
input (grid-aligned, cocircular, collinear) is handled consistently. Among
cocircular configurations the diagonal with the lexicographically smaller
sorted vertex-index pair is kept.
"""

from __future__ import annotations

import numpy as np

from .predicates import incircle, orient2d


class DegenerateInputError(ValueError):
    pass


def collapse_duplicates(points: np.ndarray, tol: float = 1e-9, priority=None) -> np.ndarray:
    """Map every point to a representative; points within ``tol`` collapse.

    With ``priority`` given, the highest-priority point in a cluster is the
    representative, otherwise the lowest index.
    """
    n = len(points)
    rep = np.arange(n)
    if n < 2:
        return rep
    pri = np.zeros(n) if priority is None else np.asarray(priority, dtype=np.float64)
    order = np.lexsort((points[:, 1], points[:, 0]))
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    xs = points[order, 0]
    for a in range(n):
        i = order[a]
        b = a + 1
        while b < n and xs[b] - xs[a] <= tol:
            j = order[b]
            if np.hypot(*(points[i] - points[j])) <= tol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            b += 1
    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    for members in clusters.values():
        best = min(members, key=lambda k: (-pri[k], k))
        rep[members] = best
    return rep


def _third(tri, a, b):
    for v in tri:
        if v != a and v != b:
            return v
    raise AssertionError("degenerate triangle")


def triangulate(points: np.ndarray) -> np.ndarray:
    """Delaunay triangles (counter-clockwise index triples) of distinct points."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise DegenerateInputError(f"need at least 3 points, got {n}")
    P = [(float(x), float(y)) for x, y in pts]

    def orient(a, b, c):
        return orient2d(P[a][0], P[a][1], P[b][0], P[b][1], P[c][0], P[c][1])

    order = sorted(range(n), key=lambda i: P[i])
    k = 2
    while k < n and orient(order[0], order[1], order[k]) == 0:
        k += 1
    if k == n:
        raise DegenerateInputError("all points are collinear")

    tris: list[list[int]] = []
    apex = order[k]
    side = orient(order[0], order[1], apex)
    for i in range(k - 1):
        a, b = order[i], order[i + 1]
        tris.append([a, b, apex] if side > 0 else [b, a, apex])
    chain = order[:k]
    hull = chain + [apex] if side > 0 else [chain[0], apex] + chain[:0:-1]
    nxt = {hull[i]: hull[(i + 1) % len(hull)] for i in range(len(hull))}
    prv = {v: u for u, v in nxt.items()}

    last = apex
    for idx in range(k + 1, n):
        p = order[idx]
        start = None
        for v in (last, prv[last]):
            if orient(v, nxt[v], p) < 0:
                start = v
                break
        if start is None:
            v = nxt[last]
            while v != last:
                if orient(v, nxt[v], p) < 0:
                    start = v
                    break
                v = nxt[v]
        if start is None:
            raise AssertionError("point sees no hull edge")
        lo = start
        while orient(prv[lo], lo, p) < 0:
            lo = prv[lo]
        hi = start
        while orient(hi, nxt[hi], p) < 0:
            tris.append([hi, p, nxt[hi]])
            hi = nxt[hi]
        v = lo
        while v != start:
            tris.append([v, p, nxt[v]])
            v = nxt[v]
        # splice p between lo and hi
        v = nxt[lo]
        while v != hi:
            w = nxt[v]
            del nxt[v], prv[v]
            v = w
        nxt[lo], prv[p] = p, lo
        nxt[p], prv[hi] = hi, p
        last = p

    return _legalize(P, tris)


def _legalize(P, tris):
    emap: dict[tuple[int, int], int] = {}
    for t, (a, b, c) in enumerate(tris):
        emap[(a, b)] = t
        emap[(b, c)] = t
        emap[(c, a)] = t
    stack = [e for e in emap if e[0] < e[1] or (e[1], e[0]) not in emap]

    while stack:
        a, b = stack.pop()
        t1 = emap.get((a, b))
        t2 = emap.get((b, a))
        if t1 is None or t2 is None:
            continue
        c = _third(tris[t1], a, b)
        d = _third(tris[t2], a, b)
        s = incircle(P[a][0], P[a][1], P[b][0], P[b][1], P[c][0], P[c][1], P[d][0], P[d][1])
        if s < 0:
            continue
        if s == 0 and (min(c, d), max(c, d)) >= (min(a, b), max(a, b)):
            continue
        tris[t1] = [a, d, c]
        tris[t2] = [d, b, c]
        del emap[(a, b)], emap[(b, a)]
        emap[(a, d)] = t1
        emap[(d, c)] = t1
        emap[(c, a)] = t1
        emap[(d, b)] = t2
        emap[(b, c)] = t2
        emap[(c, d)] = t2
        stack.extend([(a, d), (d, b), (b, c), (c, a)])

    return np.array(tris, dtype=np.int64).reshape(-1, 3)
