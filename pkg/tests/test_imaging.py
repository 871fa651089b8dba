import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from microchar import imaging as im
from microchar.errors import NoMarkers, TooSmall

from oracles import bfs_distance, flood_fill_labels, naive_sobel

masks = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def test_dt_all_background_is_zero():
    assert (im.cityblock_distance_transform(np.zeros((3, 3), bool)) == 0).all()


def test_dt_single_pixel():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    d = im.cityblock_distance_transform(m)
    assert d[2, 2] == 1 and d.sum() == 1


def test_dt_no_background_saturates():
    assert (im.cityblock_distance_transform(np.ones((4, 6), bool)) == 10).all()


@settings(max_examples=60, deadline=None)
@given(masks)
def test_dt_matches_bfs(m):
    if not (~m).any():
        return
    np.testing.assert_array_equal(im.cityblock_distance_transform(m), bfs_distance(m))


@settings(max_examples=60, deadline=None)
@given(masks)
def test_dt_is_1_lipschitz(m):
    d = im.cityblock_distance_transform(m).astype(int)
    assert np.abs(np.diff(d, axis=0)).max(initial=0) <= 1
    assert np.abs(np.diff(d, axis=1)).max(initial=0) <= 1


def test_watershed_strip_splits_at_ridge():
    elev = np.array([[0, 1, 2, 3, 2, 1, 0]])
    markers = np.array([[1, 0, 0, 0, 0, 0, 2]])
    lab = im.watershed(elev, markers, np.ones((1, 7), bool))
    np.testing.assert_array_equal(lab[0], [1, 1, 1, 1, 2, 2, 2])


def test_watershed_unmarked_component_stays_zero():
    m = np.zeros((3, 7), bool)
    m[:, :2] = m[:, 5:] = True
    mk = np.zeros((3, 7), int)
    mk[1, 0] = 1
    lab = im.watershed(np.zeros((3, 7)), mk, m)
    assert (lab[:, :2] == 1).all() and (lab[:, 5:] == 0).all()


def test_watershed_without_markers_raises():
    with pytest.raises(NoMarkers):
        im.watershed(np.zeros((3, 3)), np.zeros((3, 3), int), np.ones((3, 3), bool))


def test_watershed_marker_outside_mask_rejected():
    mk = np.zeros((3, 3), int)
    mk[0, 0] = 1
    m = np.ones((3, 3), bool)
    m[0, 0] = False
    with pytest.raises(ValueError):
        im.watershed(np.zeros((3, 3)), mk, m)


def test_local_maxima_plateau_gives_one_marker():
    d = np.zeros((9, 9), int)
    d[4, 3:6] = 3
    mk = im.local_maxima(d, 2)
    assert mk.max() == 1 and mk[4, 3] == 1


def test_sobel_step_response():
    img = np.zeros((5, 6), np.uint8)
    img[:, 3:] = 100
    r = im.sobel(img)
    assert (r.gx[:, 2] == 400).all() and (r.gx[:, 3] == 400).all()
    assert (r.gy == 0).all()
    assert (r.magnitude[:, 2] == 255).all() and (r.magnitude[:, 0] == 0).all()


def test_sobel_too_small():
    with pytest.raises(TooSmall):
        im.sobel(np.zeros((2, 5), np.uint8))


@settings(max_examples=20, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(3, 8), st.integers(3, 8))))
def test_sobel_matches_naive(img):
    gx, gy = naive_sobel(img)
    r = im.sobel(img)
    np.testing.assert_array_equal(r.gx, gx)
    np.testing.assert_array_equal(r.gy, gy)


def test_otsu_two_levels():
    img = np.array([[50] * 8 + [200] * 8], np.uint8)
    t, mask = im.threshold_otsu(img)
    assert 50 < t <= 200
    np.testing.assert_array_equal(mask[0], [True] * 8 + [False] * 8)
    _, inv = im.threshold_otsu(img, invert=True)
    np.testing.assert_array_equal(inv, ~mask)


def test_otsu_constant_image():
    t, mask = im.threshold_otsu(np.full((4, 4), 77, np.uint8))
    assert t == 77 and not mask.any()


def test_otsu_tie_takes_lowest_threshold():
    # every t in (50, 200] separates the classes equally well
    hist = np.zeros(256, int)
    hist[50] = hist[200] = 5
    assert im.otsu_level(hist) == 51


def test_cc_diagonal_connectivity():
    m = np.eye(2, dtype=bool)
    assert im.connected_components(m, 4)[1] == 2
    assert im.connected_components(m, 8)[1] == 1


def test_cc_labels_in_first_visit_order():
    m = np.zeros((4, 4), bool)
    m[3, 0] = m[0, 3] = True
    lab, n = im.connected_components(m)
    assert n == 2 and lab[0, 3] == 1 and lab[3, 0] == 2


@settings(max_examples=60, deadline=None)
@given(masks, st.sampled_from([4, 8]))
def test_cc_matches_flood_fill(m, conn):
    lab, n = im.connected_components(m, conn)
    ref, rn = flood_fill_labels(m, conn)
    assert n == rn
    np.testing.assert_array_equal(lab, ref)


def test_close_merges_one_pixel_gap():
    m = np.zeros((7, 9), bool)
    m[2:5, 1:4] = m[2:5, 5:8] = True
    assert im.connected_components(im.morph(m, "close", 1))[1] == 1


def test_open_removes_single_pixel():
    m = np.zeros((7, 7), bool)
    m[3, 3] = True
    assert not im.morph(m, "open", 1).any()


@settings(max_examples=40, deadline=None)
@given(masks)
def test_morph_ordering(m):
    assert (im.morph(m, "open") <= m).all()
    assert (im.morph(m, "close") >= m).all()
    assert (im.morph(m, "erode") <= im.morph(m, "dilate")).all()
