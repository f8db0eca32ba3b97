import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gazepercept.core import BBox2D, GazeSample
from gazepercept.errors import EmptyLog, EmptyWindow, OutOfRange
from gazepercept.heatmap import (
    NO_OBJECT,
    OBJECT,
    Window,
    WindowSpec,
    build_features,
    cell_indices,
    encode,
    flatten,
    label_window,
    load_features,
    save_features,
    windows,
)
from gazepercept.ingest import AnnotationSet, GazeLog, LabeledBox

RES = (1088.0, 1080.0, 5.0)


def make_log(times, positions=None):
    if positions is None:
        positions = [(1.0, 1.0)] * len(times)
    return GazeLog(tuple(GazeSample(float(t), tuple(p)) for t, p in zip(times, positions)), RES)


def membership_oracle(times, start, length):
    return [t for t in times if start <= t < start + length]


def test_windows_disjoint_ten_ms():
    times = list(range(0, 100, 10))
    ws = windows(make_log(times), WindowSpec(50, 50))
    assert len(ws) == 2
    assert [len(w) for w in ws] == [5, 5]
    for w in ws:
        assert w.times.tolist() == membership_oracle(times, w.start, 50)


def test_window_longer_than_span():
    times = [0, 3, 7, 40]
    ws = windows(make_log(times), WindowSpec(100, 1000))
    assert len(ws) == 1
    assert ws[0].times.tolist() == times


def test_half_stride_overlap():
    times = list(range(0, 200, 10))
    ws = windows(make_log(times), WindowSpec(60, 30))
    for a, b in zip(ws, ws[1:]):
        shared = set(a.times.tolist()) & set(b.times.tolist())
        assert shared == set(membership_oracle(times, b.start, a.end - b.start))
    for w in ws:
        assert w.times.tolist() == membership_oracle(times, w.start, 60)


@settings(max_examples=100)
@given(
    st.lists(st.integers(0, 5000), min_size=1, max_size=60),
    st.integers(1, 800),
    st.integers(1, 800),
)
def test_windows_membership_property(times, length, stride):
    times = sorted(times)
    ws = windows(make_log(times), WindowSpec(length, stride))
    assert ws[0].start == times[0]
    assert ws[-1].start <= times[-1] < ws[-1].start + stride
    for w in ws:
        assert w.times.tolist() == membership_oracle(times, w.start, length)


def test_windows_empty_log():
    with pytest.raises(EmptyLog):
        windows(GazeLog((), RES), WindowSpec(10))


def test_window_spec_validation():
    assert WindowSpec(100).stride_ms == 100
    with pytest.raises(ValueError):
        WindowSpec(0)
    with pytest.raises(ValueError):
        WindowSpec(10, -1)


def test_encode_single_sample_origin():
    g = encode([[0.0, 0.0]], RES, (2, 2, 1))
    assert g[0, 0, 0] == 1.0
    assert g.values.sum() == 1.0
    assert g.shape_xyz == (2, 2, 1)


def test_encode_full_sweep_is_uniform():
    # cell centres in scaled units 0 and 1 map to indices 0 and 1
    pts = [[0, 0], [544, 0], [0, 540], [544, 540]]
    g = encode(pts, RES, (2, 2, 1))
    assert_array_equal(g.values, np.full((1, 2, 2), 0.25))


def test_encode_half_rounds_away_from_zero():
    idx = cell_indices([[544.0, 540.0]], RES, (15, 15, 1))
    # 544 / 1088 * 15 = 7.5 -> 8
    assert idx[0].tolist() == [8, 8, 0]
    g = encode([[544.0, 540.0]], RES, (15, 15, 1))
    assert g[8, 8, 0] == 1.0


def test_encode_clamps_upper_edge():
    idx = cell_indices([[1088.0, 1080.0, 5.0]], RES, (15, 15, 15))
    assert idx[0].tolist() == [14, 14, 14]


def test_encode_errors():
    with pytest.raises(EmptyWindow):
        encode(np.zeros((0, 2)), RES, (3, 3, 1))
    with pytest.raises(OutOfRange):
        encode([[-1.0, 0.0]], RES, (3, 3, 1))
    with pytest.raises(OutOfRange):
        encode([[2000.0, 0.0]], RES, (3, 3, 1))


positions_2d = st.lists(
    st.tuples(st.floats(0, 1088), st.floats(0, 1080)), min_size=1, max_size=50
)


@settings(max_examples=200)
@given(positions_2d, st.integers(1, 50), st.integers(1, 50), st.randoms())
def test_encode_properties(pts, gx, gy, rnd):
    g = encode(pts, RES, (gx, gy, 1))
    assert abs(g.values.sum() - 1.0) <= 1e-9
    assert g.values.size == gx * gy
    assert (g.values >= 0).all()
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert_array_equal(encode(shuffled, RES, (gx, gy, 1)).values, g.values)
    idx = cell_indices(pts, RES, (gx, gy, 1))
    assert (idx >= 0).all() and (idx[:, 0] < gx).all() and (idx[:, 1] < gy).all()


@settings(max_examples=100)
@given(positions_2d, st.integers(1, 20))
def test_2d_equals_3d_with_single_depth_cell(pts, n):
    p2 = np.array(pts)
    p3 = np.c_[p2, np.full(len(p2), 2.5)]
    assert_array_equal(encode(p2, RES, (n, n, 1)).values, encode(p3, RES, (n, n, 1)).values)


def test_encode_counts_match_oracle():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, size=(500, 3)) * RES
    grid = (7, 5, 3)
    g = encode(pts, RES, grid)
    oracle = np.zeros((3, 5, 7))
    for x, y, z in pts:
        ix = min(int(np.floor(x / RES[0] * 7 + 0.5)), 6)
        iy = min(int(np.floor(y / RES[1] * 5 + 0.5)), 4)
        iz = min(int(np.floor(z / RES[2] * 3 + 0.5)), 2)
        oracle[iz, iy, ix] += 1
    assert_allclose(g.values, oracle / 500, atol=1e-15)


def test_flatten_layout():
    from gazepercept.heatmap import HeatmapGrid

    g = HeatmapGrid(np.array([[[0.1, 0.2], [0.3, 0.4]]]))
    assert flatten(g).tolist() == [0.1, 0.2, 0.3, 0.4]


def test_flatten_3d_length():
    g = encode([[1.0, 1.0, 1.0]], RES, (50, 50, 50))
    assert flatten(g).shape == (125_000,)


def _window(start, end):
    return Window(start, end, np.array([start]), np.zeros((1, 2)))


def test_label_no_annotation():
    lab = label_window(_window(0, 100), AnnotationSet({}), RES)
    assert lab.cls == NO_OBJECT and lab.target is None


def test_label_single_annotation():
    ann = AnnotationSet({40.0: LabeledBox("cup", BBox2D(108.8, 108, 217.6, 540))})
    lab = label_window(_window(0, 100), ann, RES)
    assert lab.cls == OBJECT
    assert_allclose(lab.target, (0.1, 0.1, 0.1, 0.4))
    assert lab.label == "cup"


def test_label_equidistant_picks_earlier():
    ann = AnnotationSet(
        {60.0: LabeledBox("late", BBox2D(0, 0, 1, 1)), 40.0: LabeledBox("early", BBox2D(0, 0, 2, 2))}
    )
    assert label_window(_window(0, 100), ann, RES).label == "early"


def test_label_nearest_center_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        ts = rng.choice(np.arange(0, 100, 5), size=4, replace=False).astype(float)
        ann = AnnotationSet({t: LabeledBox(str(t), BBox2D(0, 0, 1, 1)) for t in ts})
        best = min(ts, key=lambda t: (abs(t - 50), t))
        assert label_window(_window(0, 100), ann, RES).label == str(best)


def test_label_empty_annotated_frame_is_ignored():
    ann = AnnotationSet({50.0: None})
    assert label_window(_window(0, 100), ann, RES).cls == NO_OBJECT


def test_build_features_and_binary_round_trip(tmp_path):
    times = np.arange(0, 1000, 10)
    rng = np.random.default_rng(2)
    pos = rng.uniform(0, 1, size=(len(times), 2)) * RES[:2]
    log = make_log(times, pos)
    ann = AnnotationSet({250.0: LabeledBox("x", BBox2D(10, 10, 20, 20))})
    fs = build_features(log, WindowSpec(100), (15, 15, 1), ann)
    assert fs.features.shape == (10, 225)
    assert_allclose(fs.features.sum(axis=1), 1.0)
    assert fs.classes.tolist() == [0, 0, 1] + [0] * 7
    path = tmp_path / "f.bin"
    save_features(path, fs.features, (15, 15, 1), RES, WindowSpec(100))
    arr, meta = load_features(path)
    assert_array_equal(arr, fs.features)
    assert meta["grid"] == [15, 15, 1]
    assert path.stat().st_size == fs.features.size * 8
