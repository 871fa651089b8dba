import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microchar import psilm, synth
from microchar.errors import NoSamples
from microchar.psilm import PsilmConfig


def test_jet_anchors_and_midpoint():
    assert psilm.jet_color(0, 0, 10) == (0, 0, 139)
    assert psilm.jet_color(10, 0, 10) == (139, 0, 0)
    r, g, b = psilm.jet_color(5, 0, 10)
    assert g >= r and g >= b
    assert psilm.jet_color(-3, 0, 10) == (0, 0, 139) and psilm.jet_color(99, 0, 10) == (139, 0, 0)


def test_anchor_index_monotone():
    idx = [psilm.anchor_index(v, 0, 1) for v in np.linspace(0, 1, 41)]
    assert idx == sorted(idx) and idx[0] == 0 and idx[-1] == len(psilm.JET_ANCHORS) - 2


def test_constant_image_no_edges():
    assert not psilm.gb_edge_mask(np.full((32, 32), 120, np.uint8)).any()


def test_two_grain_edges_near_bisector():
    img, truth = synth.gen_grains(synth.GrainSpec(seed_count=2), 64, 5)
    edges = psilm.gb_edge_mask(img)
    cm = truth.cellmap
    true_b = np.zeros_like(edges)
    true_b[:, 1:] |= cm[:, 1:] != cm[:, :-1]
    true_b[1:, :] |= cm[1:, :] != cm[:-1, :]
    from scipy import ndimage
    near = ndimage.distance_transform_cdt(~true_b, metric="chessboard") <= 2
    assert edges.any() and (edges <= near).all()


def test_single_grain_chords_span_image():
    s = psilm.sample_intercepts(np.zeros((20, 30), bool), PsilmConfig(grid_step=10))
    assert len(s) == 6
    for p in s:
        assert p.lengths[0] == 30 and p.lengths[1] == 20
        assert all(p.truncated)


def test_vertical_boundary_chords():
    edges = np.zeros((16, 17), bool)
    edges[:, 8] = True
    lengths, trunc = psilm.chord_fields(edges)
    assert lengths[0, 3, 2] == 8 and lengths[0, 3, 12] == 8
    assert lengths[1, 3, 2] == 16
    assert lengths[0, 3, 8] == 0
    assert trunc[0, 3, 2]


def test_diagonal_boundary_cannot_be_slipped():
    edges = np.eye(12, dtype=bool)
    lengths, _ = psilm.chord_fields(edges)
    # the -45 chord runs parallel; the +45 chord must stop at the 8-connected line
    assert lengths[2, 6, 4] <= math.sqrt(2) * 6


def test_single_grain_uniform_dark_red():
    img, _ = synth.gen_grains(synth.GrainSpec(seed_count=1), 48, 0)
    rgb, samples = psilm.rgb_segmentation(img, PsilmConfig(grid_step=8))
    assert samples
    # no boundaries, so nothing is black; the largest sample sits near the centre
    assert rgb.reshape(-1, 3).any(axis=1).all()
    assert tuple(rgb[24, 24]) == (139, 0, 0)
    # corner samples see short diagonal chords and read as smaller grains
    assert tuple(rgb[0, 0]) != (139, 0, 0)


def test_larger_grain_is_redder():
    img = np.full((48, 64), 180, np.uint8)
    img[:, 15:17] = 40
    rgb, _ = psilm.rgb_segmentation(img, PsilmConfig(grid_step=4))
    pal = psilm.jet_palette(256).astype(int)

    def level(c):
        return int(np.argmin(((pal - np.asarray(c, int)) ** 2).sum(1)))

    assert level(rgb[24, 5]) < level(rgb[24, 45])


def test_pores_render_black_and_give_no_samples():
    img, truth = synth.gen_mixed(synth.GrainSpec(seed_count=6), synth.DEFAULT_MIXED_PORES, 64, 3)
    rgb, samples = psilm.rgb_segmentation(img, PsilmConfig(grid_step=2), truth.mask)
    assert (rgb[truth.mask] == 0).all()
    assert not any(truth.mask[s.y, s.x] for s in samples)


def test_histogram_examples():
    h = psilm.grain_histogram([1, 1, 2, 3], bins=2, range=(0, 4))
    assert h.frequencies.tolist() == [2, 2]
    h = psilm.grain_histogram([2.5] * 7, bins=5)
    assert np.count_nonzero(h.frequencies) == 1
    with pytest.raises(NoSamples):
        psilm.grain_histogram([], bins=3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=60), st.integers(1, 30),
       st.one_of(st.none(), st.tuples(st.floats(0, 10), st.floats(10, 60))))
def test_histogram_mass_conserved(radii, bins, rng_):
    h = psilm.grain_histogram(radii, bins, rng_)
    assert h.frequencies.sum() == len(radii) == h.n
    assert len(h.bin_edges) == bins + 1


def test_edge_fraction_small():
    img, _ = synth.gen_grains(synth.GrainSpec(seed_count=12, noise_sigma=6), 128, 1)
    assert psilm.gb_edge_mask(img).mean() < 0.2


def test_histogram_csv_roundtrip(tmp_path):
    h = psilm.grain_histogram([1.0, 2.0, 2.5, 7.0], 4)
    psilm.write_histogram_csv(tmp_path / "h.csv", h)
    edges, freq = psilm.read_histogram_csv(tmp_path / "h.csv")
    np.testing.assert_allclose(edges, h.bin_edges, atol=1e-6)
    assert freq.tolist() == h.frequencies.tolist()


def test_analyze_fixed_range():
    img, _ = synth.gen_grains(synth.GrainSpec(seed_count=10), 64, 2)
    cfg = synth.label_psilm_config(64)
    _, h = psilm.analyze(img, cfg)
    assert h.bin_edges[0] == 0 and h.bin_edges[-1] == pytest.approx(24.0)
    assert psilm.histogram_mean(h.centers, h.frequencies) == pytest.approx(h.mean, abs=24 / 20)
