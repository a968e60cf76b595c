"""Harris corner detection and a simple landmark matcher."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .raster import RasterImage


def harris_response(gray: np.ndarray, k: float = 0.04, sigma: float = 1.5) -> np.ndarray:
    g = np.asarray(gray, dtype=np.float64)
    ix = ndimage.sobel(g, axis=1, mode="reflect")
    iy = ndimage.sobel(g, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="reflect")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="reflect")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="reflect")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(
    img: RasterImage | np.ndarray,
    max_count: int = 50,
    k: float = 0.04,
    sigma: float = 1.5,
    radius: int = 3,
    rel_threshold: float = 0.01,
) -> np.ndarray:
    """Strongest Harris corners as ``(x, y)`` pixel-centre coordinates, best first."""
    gray = img.gray() if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)
    R = harris_response(gray, k, sigma)
    peak = R.max() if R.size else 0.0
    if peak <= 1e-12:
        return np.zeros((0, 2))
    local_max = R == ndimage.maximum_filter(R, size=2 * radius + 1, mode="constant", cval=-np.inf)
    cand = np.argwhere(local_max & (R > rel_threshold * peak))
    resp = R[cand[:, 0], cand[:, 1]]
    # strongest first; row-major position breaks ties
    cand = cand[np.lexsort((cand[:, 1], cand[:, 0], -resp))]
    # greedy suppression also thins plateaus of equal response
    kept: list[np.ndarray] = []
    for rc in cand:
        if all(max(abs(rc[0] - k[0]), abs(rc[1] - k[1])) > radius for k in kept):
            kept.append(rc)
            if len(kept) == max_count:
                break
    rc = np.array(kept, dtype=np.int64).reshape(-1, 2)
    return np.stack([rc[:, 1] + 0.5, rc[:, 0] + 0.5], axis=1).astype(np.float64)


def estimate_translation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shift ``(dx, dy)`` that best moves ``a`` onto ``b`` (phase correlation)."""
    fa = np.fft.fft2(a - a.mean())
    fb = np.fft.fft2(b - b.mean())
    cross = fb * np.conj(fa)
    cross /= np.maximum(np.abs(cross), 1e-12)
    corr = np.fft.ifft2(cross).real
    i, j = np.unravel_index(np.argmax(corr), corr.shape)
    h, w = corr.shape
    dy = i - h if i > h // 2 else i
    dx = j - w if j > w // 2 else j
    return np.array([dx, dy], dtype=np.float64)


def auto_landmarks(src: RasterImage, dst: RasterImage, count: int, max_dist: float | None = None) -> np.ndarray:
    """Mutual nearest-neighbour pairing of corners after removing a global shift.

    Returns rows ``(x_src, y_src, x_dst, y_dst)``.
    """
    ps = detect_corners(src, count)
    pd = detect_corners(dst, count)
    if len(ps) == 0 or len(pd) == 0:
        return np.zeros((0, 4))
    shift = np.zeros(2)
    if src.size == dst.size:
        shift = estimate_translation(src.gray(), dst.gray())
    if max_dist is None:
        max_dist = 0.03 * float(np.hypot(*dst.size))
    moved = ps + shift
    d = np.hypot(moved[:, None, 0] - pd[None, :, 0], moved[:, None, 1] - pd[None, :, 1])
    fwd = d.argmin(axis=1)
    bwd = d.argmin(axis=0)
    rows = [
        (*ps[i], *pd[j])
        for i, j in enumerate(fwd)
        if bwd[j] == i and d[i, j] <= max_dist
    ]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)
