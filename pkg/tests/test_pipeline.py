import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from microchar import imageio, models, psilm, synth, wcbd
from microchar.errors import MissingCheckpoint
from microchar.pipeline import Checkpoints, process_image, run_pipeline
from microchar.synth import GrainSpec, ParticleSpec

GOLDEN = Path(__file__).parent / "golden"


def _schema(name):
    return json.loads((GOLDEN / name).read_text())


@pytest.fixture(scope="module")
def nets(checkpoint_dir):
    return Checkpoints.load(checkpoint_dir)


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    p_img, p_truth = synth.gen_particles(synth.DEFAULT_PARTICLE_SPECS[0], 64, 901)
    g_img, _ = synth.gen_grains(synth.DEFAULT_GRAIN_SPECS[2], 64, 902)
    m_img, m_truth = synth.gen_mixed(GrainSpec(seed_count=8, noise_sigma=6), synth.DEFAULT_MIXED_PORES, 64, 903)
    imageio.write_gray(d / "a_particles.png", p_img)
    imageio.write_gray(d / "b_grains.png", g_img)
    imageio.write_gray(d / "c_mixed.png", m_img)
    return d, p_truth, m_truth


def test_particle_image_routes_to_binary(nets, images, tmp_path):
    d, truth, _ = images
    rep = process_image(d / "a_particles.png", nets, tmp_path)
    assert rep.error is None and rep.predicted_class == "particles" and rep.branch == "binary"
    boxes = wcbd.read_boxes_csv(rep.artifacts["boxes"])
    assert len(boxes) == truth.placed
    assert imageio.read_mask(rep.artifacts["mask"]).shape == (64, 64)
    jsonschema.validate(rep.to_dict(), _schema("pipeline_report.schema.json"))


def test_grain_image_routes_to_rgb(nets, images, tmp_path):
    d, _, _ = images
    rep = process_image(d / "b_grains.png", nets, tmp_path)
    assert rep.predicted_class == "grains" and rep.branch == "rgb"
    edges, freq = psilm.read_histogram_csv(rep.artifacts["histogram"])
    assert freq.sum() == rep.summary["psilm"]["n"]
    for key in ("rgb", "histogram_pred", "histogram_plot", "report"):
        assert Path(rep.artifacts[key]).is_file()
    assert rep.stages == ["load", "classify", "rgb.segment", "rgb.regress", "rgb.psilm"]


def test_mixed_both_paints_pores_black(nets, images, tmp_path):
    d, _, _ = images
    rep = process_image(d / "c_mixed.png", nets, tmp_path, mode="both")
    assert rep.branch == "both"
    assert {"mask", "boxes", "rgb", "histogram"} <= set(rep.artifacts)
    mask = imageio.read_mask(rep.artifacts["mask"])
    rgb = imageio.read_rgb(rep.artifacts["rgb"])
    assert mask.any() and (rgb[mask] == 0).all()


def test_low_confidence_falls_back_to_both(nets, images, tmp_path):
    d, _, _ = images
    rep = process_image(d / "b_grains.png", nets, tmp_path, min_confidence=1.01)
    assert rep.branch == "both"


def test_directory_run_order_and_bad_file(nets, images, tmp_path):
    d, _, _ = images
    (d / "zz_broken.png").write_bytes(b"not an image")
    try:
        reps = run_pipeline(d, nets, tmp_path / "out", workers=2)
    finally:
        (d / "zz_broken.png").unlink()
    assert [Path(r.input).name for r in reps] == ["a_particles.png", "b_grains.png", "c_mixed.png", "zz_broken.png"]
    assert reps[-1].error and reps[0].error is None
    lines = (tmp_path / "out" / "reports.jsonl").read_text().splitlines()
    assert len(lines) == 4


def test_missing_checkpoints(images, tmp_path):
    d, _, _ = images
    with pytest.raises(MissingCheckpoint):
        run_pipeline(d / "a_particles.png", Checkpoints(), tmp_path)
    with pytest.raises(MissingCheckpoint):
        process_image(d / "a_particles.png", Checkpoints(), tmp_path, mode="binary")


def test_forced_binary_without_classifier(nets, images, tmp_path):
    d, truth, _ = images
    only = Checkpoints(binary=nets.binary)
    rep = process_image(d / "a_particles.png", only, tmp_path, mode="binary")
    assert rep.predicted_class is None and rep.summary["defect_polarity"] == "bright"
