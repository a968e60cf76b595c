"""Registration quality and efficiency figures."""

from __future__ import annotations

import numpy as np

from .raster import RasterImage


def matching_accuracy(a: RasterImage | np.ndarray, b: RasterImage | np.ndarray, eps: float = 0.2) -> float:
    """Percentage of pixels whose channel-averaged absolute difference is below ``eps``."""
    da = a.data if isinstance(a, RasterImage) else np.asarray(a, dtype=np.float64)
    db = b.data if isinstance(b, RasterImage) else np.asarray(b, dtype=np.float64)
    if da.ndim == 2:
        da = da[:, :, None]
    if db.ndim == 2:
        db = db[:, :, None]
    if da.shape != db.shape:
        raise ValueError(f"image shapes differ: {da.shape} vs {db.shape}")
    diff = np.abs(da - db).mean(axis=2)
    return 100.0 * float(np.count_nonzero(diff < eps)) / diff.size


def compression_rate(n_vertices: int, width: int, height: int) -> float:
    """Mesh nodes per image pixel, in percent."""
    return 100.0 * n_vertices / (width * height)


def time_saving_rate(t_trim: float, t_grid: float) -> float:
    """TRIM time as a percentage of grid time; smaller means a larger saving."""
    if t_grid <= 0:
        return 0.0
    return min(100.0, 100.0 * t_trim / t_grid)
