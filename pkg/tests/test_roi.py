from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from gazepercept.core import BBox2D
from gazepercept.errors import EmptyHistogram, EmptyMask
from gazepercept.roi import (
    BinaryMask,
    binarize,
    extract_roi,
    largest_component,
    mask_to_bbox,
    otsu_threshold,
    save_box_json,
    save_mask_png,
)


def otsu_oracle(h):
    """Exhaustive scan over all 256 thresholds with exact rational arithmetic."""
    N = sum(h)
    best_t, best = None, None
    for t in range(256):
        n0 = sum(h[: t + 1])
        if n0 == 0:
            continue
        n1 = N - n0
        if n1 == 0:
            var = Fraction(0)
        else:
            mu0 = Fraction(sum(i * h[i] for i in range(t + 1)), n0)
            mu1 = Fraction(sum(i * h[i] for i in range(t + 1, 256)), n1)
            var = Fraction(n0 * n1, N * N) * (mu0 - mu1) ** 2
        if best is None or var > best:
            best_t, best = t, var
    return best_t


def hist(values):
    h = [0] * 256
    for v, c in values.items():
        h[v] = c
    return h


def test_single_bin():
    assert otsu_threshold(hist({77: 10})) == 77


def test_two_extreme_peaks():
    assert otsu_threshold(hist({0: 5, 255: 5})) == 0


def test_mixed_histogram():
    h = hist({10: 12, 200: 4})
    assert otsu_threshold(h) == otsu_oracle(h) == 10


def test_random_histograms_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        h = [0] * 256
        for v in rng.integers(0, 256, size=rng.integers(1, 6)):
            h[int(v)] = int(rng.integers(1, 50))
        assert otsu_threshold(h) == otsu_oracle(h)


def test_float_histogram_path():
    h = np.zeros(256)
    h[[20, 21, 200, 210]] = [1.5, 2.5, 0.5, 3.25]
    assert otsu_threshold(h) == otsu_threshold(np.round(h * 4).astype(int))


def test_histogram_errors():
    with pytest.raises(EmptyHistogram):
        otsu_threshold([0] * 256)
    with pytest.raises(ValueError):
        otsu_threshold([1] * 10)


def test_single_pixel_mask():
    m = np.zeros((10, 10), bool)
    m[5, 3] = True
    assert mask_to_bbox(m) == BBox2D(3, 5, 3, 5)


def test_full_mask():
    assert mask_to_bbox(np.ones((6, 9), bool)) == BBox2D(0, 0, 8, 5)
    assert mask_to_bbox(np.ones((6, 9), bool), full_shape=(60, 90)) == BBox2D(0, 0, 89, 59)


def test_empty_mask():
    with pytest.raises(EmptyMask):
        mask_to_bbox(np.zeros((3, 3), bool))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.3))
def test_bbox_matches_pixel_scan(seed, density):
    m = np.random.default_rng(seed).uniform(size=(17, 23)) < density
    if not m.any():
        m[0, 0] = True
    ys, xs = [], []
    for r in range(m.shape[0]):
        for c in range(m.shape[1]):
            if m[r, c]:
                ys.append(r)
                xs.append(c)
    assert mask_to_bbox(m) == BBox2D(min(xs), min(ys), max(xs), max(ys))


def test_centred_disk_box():
    yy, xx = np.mgrid[:32, :32]
    field = ((xx - 16) ** 2 + (yy - 15) ** 2 <= 36).astype(float) + 0.05
    box, mask = extract_roi(field)
    for got, want in zip(box.as_tuple(), (10, 9, 22, 21)):
        assert abs(got - want) <= 2


def test_uniform_field_is_empty():
    with pytest.raises(EmptyMask):
        extract_roi(np.full((8, 8), 0.4))


def test_scale_covariance():
    rng = np.random.default_rng(1)
    field = rng.uniform(size=(20, 20)) ** 3
    assert_array_equal(binarize(field).mask, binarize(0.5 * field).mask)


def test_largest_component():
    m = np.zeros((10, 10), bool)
    m[0:2, 0:2] = True
    m[5:9, 5:9] = True
    assert largest_component(m).sum() == 16
    field = m.astype(float)
    box, _ = extract_roi(field, largest_only=True)
    assert box == BBox2D(5, 5, 8, 8)
    box, _ = extract_roi(field)
    assert box == BBox2D(0, 0, 8, 8)


def test_writers(tmp_path):
    from PIL import Image
    import json

    m = BinaryMask(np.eye(4, dtype=bool), 100)
    save_mask_png(m, tmp_path / "m.png")
    assert_array_equal(np.asarray(Image.open(tmp_path / "m.png")), np.eye(4, dtype=bool))
    save_box_json(BBox2D(1, 2, 3, 4), tmp_path / "b.json", "cup", 100)
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc == {"x1": 1, "y1": 2, "x2": 3, "y2": 4, "class": "cup", "threshold": 100}
