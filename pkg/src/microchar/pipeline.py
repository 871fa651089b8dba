"""End-to-end characterization: classify, then route to the binary or RGB branch.

Binary branch: segment defects, split touching ones, write boxes.
RGB branch: grain-size map, network histogram, and a PSILM histogram from
the same image as a cross-check.  ``both`` runs the two branches and paints
the binary defects black on the RGB map.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import imageio, models, plotting, psilm, wcbd
from .errors import MissingCheckpoint, NoSamples, UnreadableImage
from .evaluate import CONVENTIONS

Mode = Literal["auto", "binary", "rgb", "both"]
MODES = ("auto", "binary", "rgb", "both")
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
CHECKPOINT_FILES = {"classifier": "classifier.ckpt", "binary": "binary.ckpt",
                    "rgb": "rgb.ckpt", "regressor": "regressor.ckpt"}
DEFAULT_MIN_CONFIDENCE = 0.6


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MICROCHAR_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Checkpoints:
    classifier: models.Classifier | None = None
    binary: models.CEDN | None = None
    rgb: models.CEDN | None = None
    regressor: models.HistogramRegressor | None = None

    @classmethod
    def load(cls, directory, names=tuple(CHECKPOINT_FILES)) -> "Checkpoints":
        d = Path(directory)
        nets = {}
        for key in names:
            p = d / CHECKPOINT_FILES[key]
            if p.is_file():
                nets[key] = models.load_net(p)
        return cls(**nets)

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingCheckpoint(f"missing checkpoint(s): {', '.join(CHECKPOINT_FILES[m] for m in missing)}")


@dataclass
class PipelineReport:
    input: str
    predicted_class: str | None = None
    probabilities: dict | None = None
    branch: str | None = None
    artifacts: dict = field(default_factory=dict)
    stage_times: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: str | None = None
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def to_dict(self) -> dict:
        return asdict(self)


class _Stages:
    def __init__(self, report: PipelineReport):
        self.report = report

    def run(self, name: str, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.report.stage_times[name] = time.perf_counter() - t0
        self.report.stages.append(name)
        return out


def _defects_are_dark(img: np.ndarray, cls: str | None) -> bool:
    if cls in ("pores", "grains"):
        return True
    if cls == "particles":
        return False
    # unknown class: defects are the minority phase, so a dark image has bright defects
    return float(np.median(img)) >= 128


def _binary_branch(img, nets: Checkpoints, cls, out: Path, st: _Stages) -> np.ndarray:
    nets.require("binary")
    dark = _defects_are_dark(img, cls)
    mask = st.run("binary.segment", models.segment_binary, nets.binary, img, dark)
    labels = st.run("binary.split", wcbd.split_overlaps, mask)
    boxes = wcbd.extract_boxes(labels)
    rep = st.report
    rep.artifacts["mask"] = str(imageio.write_mask(out / "mask.png", mask))
    wcbd.write_boxes_csv(out / "boxes.csv", boxes)
    rep.artifacts["boxes"] = str(out / "boxes.csv")
    rep.summary["defect_polarity"] = "dark" if dark else "bright"
    rep.summary["box_count"] = len(boxes)
    if boxes:
        d = np.array([b.equivalent_diameter for b in boxes])
        rep.summary["equivalent_diameter"] = {"mean": float(d.mean()), "std": float(d.std())}
    return mask


def _rgb_branch(img, nets: Checkpoints, out: Path, st: _Stages, cfg: psilm.PsilmConfig,
                pores: np.ndarray | None) -> None:
    nets.require("rgb")
    rep = st.report
    rgb = st.run("rgb.segment", models.segment_rgb, nets.rgb, img)
    if pores is not None:
        rgb = rgb.copy()
        rgb[pores] = psilm.BLACK
    rep.artifacts["rgb"] = str(imageio.write_rgb(out / "rgb.png", rgb))
    pred = None
    if nets.regressor is not None:
        pred = st.run("rgb.regress", models.predict_histogram, nets.regressor, rgb)
        with open(out / "histogram_pred.csv", "w") as fh:
            fh.write("radius,freq\n")
            for c, f in zip(pred.radii, pred.frequencies):
                fh.write(f"{c:.6f},{f:.6f}\n")
        rep.artifacts["histogram_pred"] = str(out / "histogram_pred.csv")
        rep.summary["predicted_mean_radius"] = pred.mean
    try:
        _, samples = st.run("rgb.psilm", psilm.rgb_segmentation, img, cfg, pores)
        hist = psilm.grain_histogram(samples, cfg.bins, cfg.hist_range)
    except NoSamples:
        rep.summary["psilm"] = None
        return
    psilm.write_histogram_csv(out / "histogram.csv", hist)
    rep.artifacts["histogram"] = str(out / "histogram.csv")
    rep.summary["psilm"] = {"mean": hist.mean, "std": hist.std, "n": hist.n, "summary": hist.summary()}
    overlay = (pred.radii, pred.frequencies) if pred is not None else None
    plotting.radius_histogram(out / "histogram.svg", hist.bin_edges, hist.frequencies, overlay)
    rep.artifacts["histogram_plot"] = str(out / "histogram.svg")


def process_image(path, nets: Checkpoints, out_dir, mode: Mode = "auto",
                  min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                  psilm_config: psilm.PsilmConfig | None = None) -> PipelineReport:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    path = Path(path)
    rep = PipelineReport(input=str(path))
    st = _Stages(rep)
    try:
        img = st.run("load", imageio.read_gray, path)
    except UnreadableImage as exc:
        rep.error = str(exc)
        return rep
    cfg = psilm_config or psilm.PsilmConfig(grid_step=max(2, min(img.shape) // 16),
                                             colormap_max=0.375 * min(img.shape))
    out = Path(out_dir) / path.stem
    out.mkdir(parents=True, exist_ok=True)

    if mode == "auto":
        nets.require("classifier")
    cls = None
    if nets.classifier is not None:
        lab = st.run("classify", models.classify, nets.classifier, img)
        cls = lab.label
        rep.predicted_class = lab.label
        rep.probabilities = dict(zip(models.CLASSES, lab.probabilities))
        if mode == "auto":
            if lab.confidence < min_confidence:
                mode = "both"
            else:
                mode = "rgb" if lab.label == "grains" else "binary"
    rep.branch = mode

    if mode == "binary":
        _binary_branch(img, nets, cls, out, st)
    elif mode == "rgb":
        _rgb_branch(img, nets, out, st, cfg, None)
    else:
        # pores inside grains are dark whatever the classifier said
        pores = _binary_branch(img, nets, "pores" if cls in (None, "grains") else cls, out, st)
        _rgb_branch(img, nets, out, st, cfg, pores)
    with open(out / "report.json", "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)
    rep.artifacts["report"] = str(out / "report.json")
    return rep


def list_inputs(target) -> list[Path]:
    p = Path(target)
    if p.is_dir():
        return sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
    return [p]


def run_pipeline(target, nets: Checkpoints, out_dir, mode: Mode = "auto",
                 min_confidence: float = DEFAULT_MIN_CONFIDENCE, workers: int | None = None,
                 psilm_config: psilm.PsilmConfig | None = None) -> list[PipelineReport]:
    """Process one image or every image in a directory; reports come back in path order."""
    if mode == "auto":
        nets.require("classifier")
    paths = list_inputs(target)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    workers = workers or worker_count()

    def one(p):
        return process_image(p, nets, out_dir, mode, min_confidence, psilm_config)

    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, paths))
    else:
        reports = [one(p) for p in paths]
    with open(Path(out_dir) / "reports.jsonl", "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return reports
