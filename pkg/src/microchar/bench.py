"""Timing of the classical PSILM path against the network path on grain images.

The network timing starts at checkpoint loading, which is counted once
per batch; per-image times then cover classification, RGB segmentation
and histogram regression.  Runs are serial, so the total is the sum of
the per-image times plus the one-off load.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import models, psilm, synth
from .pipeline import Checkpoints
from .rng import derive_seed

REFERENCE_TIMES = {
    "psilm_10_images": "15:21",
    "framework_cpu_10_images": "3:11",
    "framework_gpu_10_images": "1:04",
    "note": "reference wall-clock times (min:s) for 10 grain micrographs; hardware-dependent, not asserted",
}


@dataclass
class BenchReport:
    method: str
    n: int
    total_s: float
    per_image_mean_s: float
    per_image_s: list[float]
    stages_s: dict
    mode: str = "serial"
    load_s: float = 0.0
    image_size: int = 64
    seed: int = 0
    reference_times: dict = field(default_factory=lambda: dict(REFERENCE_TIMES))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_mmss"] = mmss(self.total_s)
        return d


def mmss(seconds: float) -> str:
    m, s = divmod(int(round(seconds)), 60)
    return f"{m}:{s:02d}"


def bench_images(n: int, seed: int, size: int = 64):
    specs = synth.DEFAULT_GRAIN_SPECS
    return [synth.gen_grains(specs[i % len(specs)], size, derive_seed(seed, "bench", i))[0] for i in range(n)]


def bench_psilm(images, cfg: psilm.PsilmConfig, seed: int = 0) -> BenchReport:
    times = []
    for img in images:
        t0 = time.perf_counter()
        psilm.analyze(img, cfg)
        times.append(time.perf_counter() - t0)
    total = sum(times)
    return BenchReport("psilm", len(images), total, total / len(images), times, {"psilm": total},
                       image_size=images[0].shape[0], seed=seed)


def bench_ml(images, checkpoint_dir, seed: int = 0) -> BenchReport:
    t0 = time.perf_counter()
    nets = Checkpoints.load(checkpoint_dir, ("classifier", "rgb", "regressor"))
    nets.require("classifier", "rgb", "regressor")
    load = time.perf_counter() - t0
    stages = {"load": load, "classify": 0.0, "segment": 0.0, "regress": 0.0}
    times = []
    for img in images:
        t_img = time.perf_counter()
        t = time.perf_counter()
        models.classify(nets.classifier, img)
        stages["classify"] += time.perf_counter() - t
        t = time.perf_counter()
        rgb = models.segment_rgb(nets.rgb, img)
        stages["segment"] += time.perf_counter() - t
        t = time.perf_counter()
        models.predict_histogram(nets.regressor, rgb)
        stages["regress"] += time.perf_counter() - t
        times.append(time.perf_counter() - t_img)
    total = load + sum(times)
    return BenchReport("ml_pipeline", len(images), total, sum(times) / len(images), times, stages,
                       load_s=load, image_size=images[0].shape[0], seed=seed)


def bench(n: int, method: str = "both", seed: int = 0, checkpoint_dir=None, size: int = 64,
          out_dir=None) -> list[BenchReport]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if method not in ("psilm", "ml_pipeline", "both"):
        raise ValueError("method must be psilm, ml_pipeline or both")
    images = bench_images(n, seed, size)
    reports = []
    if method in ("psilm", "both"):
        reports.append(bench_psilm(images, synth.label_psilm_config(size), seed))
    if method in ("ml_pipeline", "both"):
        reports.append(bench_ml(images, checkpoint_dir, seed))
    if out_dir is not None:
        write_reports(out_dir, reports)
    return reports


def write_reports(out_dir, reports: list[BenchReport]) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / "bench.json", out / "bench.csv"
    with open(jpath, "w") as fh:
        json.dump({"reports": [r.to_dict() for r in reports]}, fh, indent=2, sort_keys=True)
    with open(cpath, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "image", "seconds"])
        for r in reports:
            for i, t in enumerate(r.per_image_s):
                wr.writerow([r.method, i, f"{t:.6f}"])
            wr.writerow([r.method, "load", f"{r.load_s:.6f}"])
            wr.writerow([r.method, "total", f"{r.total_s:.6f}"])
    return jpath, cpath
