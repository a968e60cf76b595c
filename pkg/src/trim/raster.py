"""Raster images, color conversion, subsampling and variance-gated unsharp masking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

RGB = "rgb"
LAB = "lab"

# D65 reference white, sRGB primaries
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)


@dataclass
class RasterImage:
    """Dense image with intensities in [0, 1], stored as ``(height, width, channels)``."""

    data: np.ndarray
    colorspace: str = RGB

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        if self.colorspace not in (RGB, LAB):
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def copy(self) -> RasterImage:
        return RasterImage(self.data.copy(), self.colorspace)

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.array([0.299, 0.587, 0.114])


def load_image(path) -> RasterImage:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return RasterImage(arr, RGB)


def save_image(img: RasterImage, path) -> None:
    if img.colorspace != RGB:
        img = lab_to_rgb(img)
    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(Path(path), format="PNG")


def from_uint8(arr) -> RasterImage:
    return RasterImage(np.asarray(arr, dtype=np.float64) / 255.0, RGB)


def subsample(img: RasterImage, max_dim: int = 512) -> RasterImage:
    """Box-filter ``img`` so that its longer side is at most ``max_dim``.

    The source is cut into an integer block grid whose edges are
    ``floor(k * W / w_out)``; every output pixel is the plain mean of its block.
    Images that already fit are returned unchanged (as a copy).
    """
    if img.width < 2 or img.height < 2:
        raise ValueError(f"degenerate image {img.width}x{img.height}")
    if max_dim < 1:
        raise ValueError("max_dim must be positive")
    w, h = img.width, img.height
    if max(w, h) <= max_dim:
        return img.copy()
    factor = math.ceil(max(w, h) / max_dim)
    out_w = max(1, w // factor)
    out_h = max(1, h // factor)
    xe = (np.arange(out_w) * w) // out_w
    ye = (np.arange(out_h) * h) // out_h
    xs = np.diff(np.append(xe, w))
    ys = np.diff(np.append(ye, h))
    sums = np.add.reduceat(np.add.reduceat(img.data, ye, axis=0), xe, axis=1)
    data = sums / (ys[:, None, None] * xs[None, :, None])
    return RasterImage(np.clip(data, 0.0, 1.0), img.colorspace)


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def _f(t):
    eps = (6 / 29) ** 3
    return np.where(t > eps, np.cbrt(t), t / (3 * (6 / 29) ** 2) + 4 / 29)


def _finv(t):
    return np.where(t > 6 / 29, t**3, 3 * (6 / 29) ** 2 * (t - 4 / 29))


def rgb_to_lab(img: RasterImage) -> RasterImage:
    """sRGB (D65) to CIELAB; L* / 100 and (a*, b* + 128) / 255 stored in [0, 1]."""
    if img.channels != 3 or img.colorspace != RGB:
        raise ValueError("rgb_to_lab needs a 3-channel RGB image")
    xyz = _srgb_to_linear(img.data) @ _RGB_TO_XYZ.T / _WHITE_D65
    fx, fy, fz = (_f(xyz[..., i]) for i in range(3))
    L = 116 * fy - 16
    a = 500 * (fx - fy)
    b = 200 * (fy - fz)
    out = np.stack([L / 100.0, (a + 128) / 255.0, (b + 128) / 255.0], axis=-1)
    return RasterImage(np.clip(out, 0.0, 1.0), LAB)


def lab_to_rgb(img: RasterImage) -> RasterImage:
    if img.channels != 3 or img.colorspace != LAB:
        raise ValueError("lab_to_rgb needs a 3-channel CIELAB image")
    L = img.data[..., 0] * 100.0
    a = img.data[..., 1] * 255.0 - 128
    b = img.data[..., 2] * 255.0 - 128
    fy = (L + 16) / 116
    fx = fy + a / 500
    fz = fy - b / 200
    xyz = np.stack([_finv(fx), _finv(fy), _finv(fz)], axis=-1) * _WHITE_D65
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return RasterImage(np.clip(rgb, 0.0, 1.0), RGB)


def disk_offsets(s: float) -> list[tuple[int, int]]:
    r = int(math.floor(s))
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= s * s]


def local_stats(channel: np.ndarray, s: float = 2) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population standard deviation over the disk of radius ``s``.

    Disk pixels falling outside the image are dropped (the disk is clipped).
    Differences are taken relative to the centre pixel so a flat disk yields a
    standard deviation of exactly zero.
    """
    ch = np.asarray(channel, dtype=np.float64)
    if ch.ndim != 2:
        raise ValueError("local_stats expects a single channel")
    h, w = ch.shape
    r = int(math.floor(s))
    padded = np.pad(ch, r)
    inside = np.pad(np.ones_like(ch), r)
    offsets = disk_offsets(s)
    count = np.zeros_like(ch)
    dsum = np.zeros_like(ch)
    for dy, dx in offsets:
        win = padded[r + dy : r + dy + h, r + dx : r + dx + w]
        msk = inside[r + dy : r + dy + h, r + dx : r + dx + w]
        count += msk
        dsum += (win - ch) * msk
    dmean = dsum / count
    ssq = np.zeros_like(ch)
    for dy, dx in offsets:
        win = padded[r + dy : r + dy + h, r + dx : r + dx + w]
        msk = inside[r + dy : r + dy + h, r + dx : r + dx + w]
        ssq += ((win - ch) - dmean) ** 2 * msk
    return ch + dmean, np.sqrt(ssq / count)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(channel: np.ndarray, sigma: float) -> np.ndarray:
    """Separable truncated Gaussian with mirrored borders."""
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    h, w = channel.shape
    padded = np.pad(channel, r, mode="symmetric")
    rows = np.zeros((h + 2 * r, w))
    for i, wt in enumerate(k):
        rows += wt * padded[:, i : i + w]
    out = np.zeros((h, w))
    for i, wt in enumerate(k):
        out += wt * rows[i : i + h, :]
    return out


@dataclass(frozen=True)
class UnsharpParams:
    lam: float = 0.5
    sigma: float = 2.0
    s: float = 2.0
    theta: float = 0.5  # L std is at most 0.5, so the default gate never opens
    classic: bool = False

    def __post_init__(self):
        if self.lam < 0 or self.sigma <= 0 or self.s < 1 or self.theta < 0:
            raise ValueError(f"invalid unsharp parameters {self}")


def unsharp_mask(img: RasterImage, params: UnsharpParams = UnsharpParams()) -> RasterImage:
    """Sharpen the lightness channel where the local deviation exceeds ``theta``.

    The default form subtracts ``lam`` times the Gaussian mean; with
    ``classic=True`` the usual ``L + lam * (L - blur)`` is used instead.
    The chroma channels pass through untouched.
    """
    if img.colorspace != LAB:
        raise ValueError("unsharp_mask operates on CIELAB images")
    L = img.data[:, :, 0]
    _, dev = local_stats(L, params.s)
    active = dev > params.theta
    if not active.any():
        return img.copy()
    blur = gaussian_blur(L, params.sigma)
    if params.classic:
        sharpened = L + params.lam * (L - blur)
    else:
        sharpened = L - params.lam * blur
    out = img.data.copy()
    out[:, :, 0] = np.clip(np.where(active, sharpened, L), 0.0, 1.0)
    return RasterImage(out, LAB)
