"""Multilevel thresholding by particle swarm optimisation and segment boundaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .raster import RGB, RasterImage, lab_to_rgb

log = logging.getLogger(__name__)


@dataclass
class ChannelHistogram:
    """Per-channel level counts of an image quantised to ``levels`` levels."""

    counts: np.ndarray  # (channels, levels)

    @property
    def levels(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts[0].sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    @property
    def global_mean(self) -> np.ndarray:
        return self.probabilities @ np.arange(self.levels)


@dataclass(frozen=True)
class PsoParams:
    particles: int = 30
    iterations: int = 100
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    velocity_clamp: float | None = None  # None -> levels / 4
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2 or self.iterations < 1:
            raise ValueError("need at least 2 particles and 1 iteration")


@dataclass
class ThresholdSet:
    """Ordered thresholds per channel; region j covers (x_{j-1}, x_j]."""

    thresholds: list[np.ndarray]
    levels: int

    def regions(self, channel: int) -> int:
        return len(self.thresholds[channel]) + 1


def quantize(data: np.ndarray, levels: int = 256) -> np.ndarray:
    return np.floor(np.asarray(data) * (levels - 1) + 0.5).astype(np.int64)


def channel_histogram(img: RasterImage | np.ndarray, levels: int = 256) -> ChannelHistogram:
    """Histogram of every channel. Arrays are taken as already-quantised levels."""
    if isinstance(img, RasterImage):
        if img.colorspace != RGB:
            img = lab_to_rgb(img)
        q = quantize(img.data, levels)
    else:
        q = np.asarray(img, dtype=np.int64)
        if q.ndim == 2:
            q = q[:, :, None]
    if q.size == 0:
        raise ValueError("empty image")
    if q.min() < 0 or q.max() >= levels:
        raise ValueError("levels out of range")
    counts = np.stack([np.bincount(q[:, :, c].ravel(), minlength=levels) for c in range(q.shape[2])])
    return ChannelHistogram(counts)


def between_class_variance(p: np.ndarray, thresholds) -> float:
    """Inter-region variance of a probability vector ``p`` split at ``thresholds``.

    Empty regions contribute nothing.
    """
    p = np.asarray(p, dtype=np.float64)
    levels = np.arange(len(p))
    mu_t = float(p @ levels)
    edges = [-1, *[int(t) for t in thresholds], len(p) - 1]
    cost = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = p[lo + 1 : hi + 1].sum()
        if w > 0:
            mu = (p[lo + 1 : hi + 1] @ levels[lo + 1 : hi + 1]) / w
            cost += w * (mu - mu_t) ** 2
    return cost


def class_statistics(p, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """Region weights and means (NaN mean for empty regions)."""
    p = np.asarray(p, dtype=np.float64)
    levels = np.arange(len(p))
    edges = [-1, *[int(t) for t in thresholds], len(p) - 1]
    w, mu = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        wj = p[lo + 1 : hi + 1].sum()
        w.append(wj)
        mu.append((p[lo + 1 : hi + 1] @ levels[lo + 1 : hi + 1]) / wj if wj > 0 else np.nan)
    return np.array(w), np.array(mu)


def _batch_cost(cum_p, cum_ip, mu_t, thr):
    # thr: (particles, k) integer, sorted; cum_* padded with a leading zero
    n = len(cum_p) - 1
    lo = np.concatenate([np.zeros((thr.shape[0], 1), np.int64), thr + 1], axis=1)
    hi = np.concatenate([thr + 1, np.full((thr.shape[0], 1), n, np.int64)], axis=1)
    w = cum_p[hi] - cum_p[lo]
    s = cum_ip[hi] - cum_ip[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        term = np.where(w > 0, (s - w * mu_t) ** 2 / np.where(w > 0, w, 1.0), 0.0)
    return term.sum(axis=1)


def _repair(pos, levels):
    """Round, sort and spread positions into strictly increasing thresholds in [0, levels-2]."""
    k = pos.shape[1]
    t = np.sort(np.rint(pos).astype(np.int64), axis=1)
    t = np.clip(t, 0, levels - 2)
    for j in range(1, k):
        t[:, j] = np.maximum(t[:, j], t[:, j - 1] + 1)
    t[:, k - 1] = np.minimum(t[:, k - 1], levels - 2)
    for j in range(k - 2, -1, -1):
        t[:, j] = np.minimum(t[:, j], t[:, j + 1] - 1)
    return t


def pso_thresholds(p: np.ndarray, regions: int, params: PsoParams = PsoParams(), rng=None) -> np.ndarray:
    """Global-best PSO maximising the between-class variance of one channel."""
    p = np.asarray(p, dtype=np.float64)
    levels = len(p)
    k = regions - 1
    if k < 1:
        return np.zeros(0, dtype=np.int64)
    if regions > levels:
        raise ValueError(f"cannot split {levels} levels into {regions} regions")
    occupied = np.flatnonzero(p > 0)
    if len(occupied) < regions:
        log.warning("only %d occupied levels for %d regions; using level boundaries", len(occupied), regions)
        return occupied[:-1].astype(np.int64)
    if rng is None:
        rng = np.random.default_rng(params.seed)

    cum_p = np.concatenate([[0.0], np.cumsum(p)])
    cum_ip = np.concatenate([[0.0], np.cumsum(p * np.arange(levels))])
    mu_t = cum_ip[-1]
    vmax = params.velocity_clamp if params.velocity_clamp is not None else levels / 4
    top = levels - 2

    pos = np.sort(rng.uniform(0, top, size=(params.particles, k)), axis=1)
    vel = rng.uniform(-vmax, vmax, size=pos.shape)
    cand = _repair(pos, levels)
    fit = _batch_cost(cum_p, cum_ip, mu_t, cand)
    best_pos, best_fit, best_thr = pos.copy(), fit.copy(), cand.copy()
    g = int(np.argmax(best_fit))  # first index wins ties
    for _ in range(params.iterations):
        r1 = rng.random(pos.shape)
        r2 = rng.random(pos.shape)
        vel = (
            params.inertia * vel
            + params.cognitive * r1 * (best_pos - pos)
            + params.social * r2 * (best_pos[g] - pos)
        )
        vel = np.clip(vel, -vmax, vmax)
        pos = np.clip(pos + vel, 0, top)
        cand = _repair(pos, levels)
        fit = _batch_cost(cum_p, cum_ip, mu_t, cand)
        better = fit > best_fit
        best_pos[better] = pos[better]
        best_fit[better] = fit[better]
        best_thr[better] = cand[better]
        g = int(np.argmax(best_fit))
    return best_thr[g]


def pso_optimize(hist: ChannelHistogram, regions: int = 4, params: PsoParams = PsoParams()) -> ThresholdSet:
    """Thresholds for every channel, channels optimised independently in order."""
    if regions < 2:
        raise ValueError("need at least 2 regions")
    if regions > hist.levels:
        raise ValueError("more regions than levels")
    rng = np.random.default_rng(params.seed)
    probs = hist.probabilities
    thr = [pso_thresholds(probs[c], regions, params, rng) for c in range(probs.shape[0])]
    return ThresholdSet(thr, hist.levels)


def channel_costs(hist: ChannelHistogram, thr: ThresholdSet) -> list[float]:
    probs = hist.probabilities
    return [between_class_variance(probs[c], thr.thresholds[c]) for c in range(probs.shape[0])]


def apply_thresholds(levels_img: np.ndarray, thr: ThresholdSet) -> np.ndarray:
    """Per-pixel region indices (1-based), shape ``(h, w, channels)``.

    A level equal to a threshold falls in the region that threshold closes.
    """
    q = np.asarray(levels_img, dtype=np.int64)
    if q.ndim == 2:
        q = q[:, :, None]
    out = np.empty(q.shape, dtype=np.int64)
    for c in range(q.shape[2]):
        out[:, :, c] = np.searchsorted(np.asarray(thr.thresholds[c]), q[:, :, c], side="left") + 1
    return out


def label_ids(labels: np.ndarray) -> np.ndarray:
    """Collapse label triples into a single integer per pixel."""
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim == 2:
        return lab
    base = int(lab.max()) + 1
    ids = np.zeros(lab.shape[:2], dtype=np.int64)
    for c in range(lab.shape[2]):
        ids = ids * base + lab[:, :, c]
    return ids


@dataclass
class BoundarySet:
    mask: np.ndarray  # (h, w) bool

    @property
    def coords(self) -> np.ndarray:
        """(row, col) pairs in row-major order."""
        return np.argwhere(self.mask)

    def __len__(self):
        return int(self.mask.sum())


def extract_boundaries(labels: np.ndarray) -> BoundarySet:
    """Pixels with at least one 4-neighbour carrying a different label."""
    ids = label_ids(labels)
    mask = np.zeros(ids.shape, dtype=bool)
    dv = ids[1:, :] != ids[:-1, :]
    dh = ids[:, 1:] != ids[:, :-1]
    mask[1:, :] |= dv
    mask[:-1, :] |= dv
    mask[:, 1:] |= dh
    mask[:, :-1] |= dh
    return BoundarySet(mask)


def segment(img: RasterImage, regions: int = 4, params: PsoParams = PsoParams(), levels: int = 256):
    """Quantise, threshold every RGB channel and return ``(labels, thresholds, hist)``."""
    if img.colorspace != RGB:
        img = lab_to_rgb(img)
    q = quantize(img.data, levels)
    hist = channel_histogram(q, levels)
    thr = pso_optimize(hist, regions, params)
    return apply_thresholds(q, thr), thr, hist
