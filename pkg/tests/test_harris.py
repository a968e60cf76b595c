import numpy as np

from trim.harris import auto_landmarks, detect_corners, estimate_translation
from trim.raster import RasterImage


def _checker(n=8, cell=10):
    return ((np.indices((n * cell, n * cell)) // cell).sum(axis=0) % 2).astype(float)


def test_constant_image_has_no_corners():
    assert detect_corners(np.full((30, 30), 0.4), 10).shape == (0, 2)


def test_checkerboard_corners_within_one_pixel():
    img = _checker()
    truth = np.array([(x, y) for x in range(10, 80, 10) for y in range(10, 80, 10)], float)
    found = detect_corners(img, 49)
    assert len(found) == 49
    d = np.hypot(found[:, None, 0] - truth[None, :, 0], found[:, None, 1] - truth[None, :, 1])
    assert np.all(d.min(axis=1) <= 1.0)
    assert np.all(d.min(axis=0) <= 1.0)


def test_max_count_one_is_strongest():
    img = np.zeros((40, 40))
    img[10:20, 10:20] = 1.0
    img[25:35, 25:35] = 0.3
    one = detect_corners(img, 1)
    many = detect_corners(img, 8)
    assert len(one) == 1 and np.array_equal(one[0], many[0])


def test_estimate_translation():
    rng = np.random.default_rng(0)
    a = rng.random((64, 64))
    b = np.roll(a, (3, -5), axis=(0, 1))
    assert estimate_translation(a, b).tolist() == [-5, 3]


def test_auto_landmarks_on_shifted_pair():
    a = np.zeros((80, 80))
    rng = np.random.default_rng(1)
    for _ in range(10):
        y, x = rng.integers(5, 60, 2)
        a[y : y + 12, x : x + 12] = rng.uniform(0.3, 1)
    b = np.zeros_like(a)
    b[:, 4:] = a[:, :-4]
    pairs = auto_landmarks(RasterImage(a), RasterImage(b), 40)
    assert len(pairs) >= 4
    assert np.allclose(pairs[:, 2] - pairs[:, 0], 4, atol=1.0)
    assert np.allclose(pairs[:, 3], pairs[:, 1], atol=1.0)
