import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# shared datasets and trained networks (built once per session, on first use)
# ---------------------------------------------------------------------------

BINARY_EPOCHS = 15
CLASSIFIER_EPOCHS = 4
RGB_EPOCHS = 8


def _timed(fn, *args, **kw):
    import time

    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("work")


@pytest.fixture(scope="session")
def particle_manifest(work):
    from microchar import synth

    return synth.make_dataset("particles", 200, (160, 20, 20), 11, work / "particles", size=64)


def train_binary(manifest, path):
    from microchar import models

    return _timed(models.train_cedn, models.ArchSpec(), manifest, epochs=BINARY_EPOCHS, seed=0,
                  checkpoint_path=path)


@pytest.fixture(scope="session")
def binary_run(particle_manifest, work):
    path = work / "binary.ckpt"
    res, secs = train_binary(particle_manifest, path)
    return res, path, secs


@pytest.fixture(scope="session")
def class_manifest(work):
    from microchar import models, synth

    # 330 per class, stratified: 300 train, 10 val, 20 test
    return synth.make_dataset(list(models.CLASSES), 990, (900, 30, 60), 12, work / "classes", size=64,
                              labels=False)


def train_classifier(manifest, path):
    from microchar import models

    return _timed(models.train_classifier, manifest, epochs=CLASSIFIER_EPOCHS, seed=0, checkpoint_path=path)


@pytest.fixture(scope="session")
def classifier_run(class_manifest, work):
    path = work / "classifier.ckpt"
    res, secs = train_classifier(class_manifest, path)
    return res, path, secs


@pytest.fixture(scope="session")
def grain_manifest(work):
    from microchar import synth

    return synth.make_dataset("grains", 360, (300, 30, 30), 13, work / "grains", size=64)


@pytest.fixture(scope="session")
def regressor_run(grain_manifest, work):
    from microchar import models

    path = work / "regressor.ckpt"
    res, secs = _timed(models.train_regressor, grain_manifest, seed=0, checkpoint_path=path)
    return res, path, secs


@pytest.fixture(scope="session")
def rgb_run(grain_manifest, work):
    from microchar import models

    path = work / "rgb.ckpt"
    res, secs = _timed(models.train_cedn, models.ArchSpec(out_channels=3), grain_manifest,
                       epochs=RGB_EPOCHS, seed=0, max_train=96, checkpoint_path=path)
    return res, path, secs


@pytest.fixture(scope="session")
def checkpoint_dir(work, binary_run, classifier_run, regressor_run, rgb_run):
    import shutil

    from microchar.pipeline import CHECKPOINT_FILES

    d = work / "checkpoints"
    d.mkdir(exist_ok=True)
    for key, run in (("binary", binary_run), ("classifier", classifier_run),
                     ("regressor", regressor_run), ("rgb", rgb_run)):
        shutil.copy(run[1], d / CHECKPOINT_FILES[key])
    return d
