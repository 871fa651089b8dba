"""Watershed + city-block distance (WCBD) defect segmentation and box extraction.

Pipeline: Otsu threshold -> radius-1 opening -> defect mask; touching
defects are split by flooding the negated L1 distance map from its regional
maxima; each resulting region becomes an axis-aligned bounding box.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from .imaging import (
    cityblock_distance_transform,
    connected_components,
    local_maxima,
    morph,
    relabel_first_visit,
    threshold_otsu,
    watershed,
)
from .synth import rasterize_disks

DEFAULT_MIN_SEPARATION = 5

CONVENTIONS = {
    "center_error": "abs(pred - truth) / image_side * 100",
    "size_error": "abs(pred - truth) / truth_dimension * 100",
    "matching": "greedy nearest centre, ascending distance, each truth matched at most once",
    "statistics": "mean and population std over matched pairs only; unmatched boxes are counted",
}


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: int
    h: int
    label: int
    equivalent_diameter: float


@dataclass
class ErrorStat:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"


@dataclass
class BoxErrorReport:
    n_truth: int
    n_pred: int
    n_matched: int
    recall: float
    center_x: ErrorStat
    center_y: ErrorStat
    width: ErrorStat
    height: ErrorStat
    matches: list[tuple[int, int]] = field(default_factory=list)
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["matches"] = [list(m) for m in self.matches]
        return d


def wcbd_segment(img: np.ndarray, polarity: Literal["bright", "dark"] = "dark",
                 open_radius: int = 1) -> np.ndarray:
    """Binary defect mask (True = defect) from Otsu thresholding and an opening."""
    if polarity not in ("bright", "dark"):
        raise ValueError("polarity must be 'bright' or 'dark'")
    _, mask = threshold_otsu(img, invert=(polarity == "bright"))
    return morph(mask, "open", open_radius)


def split_overlaps(mask: np.ndarray, min_separation: int = DEFAULT_MIN_SEPARATION) -> np.ndarray:
    """Split touching defects into one labeled region per distance-map maximum.

    Any connected component left without a marker (its peak is shadowed by
    a taller neighbour inside the suppression window) gets one at its
    deepest pixel, so every foreground pixel ends up labeled.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return np.zeros(m.shape, dtype=np.int32)
    dist = cityblock_distance_transform(m)
    markers = local_maxima(dist, min_separation)
    comps, ncomp = connected_components(m, 4)
    have = set(np.unique(comps[markers > 0]).tolist())
    extra = [c for c in range(1, ncomp + 1) if c not in have]
    if extra:
        next_label = int(markers.max()) + 1
        for c in extra:
            sel = np.flatnonzero(comps.ravel() == c)
            idx = sel[np.argmax(dist.ravel()[sel])]
            markers.ravel()[idx] = next_label
            next_label += 1
    labels = watershed(-dist, markers, m)
    return relabel_first_visit(labels)[0]


def extract_boxes(labels: np.ndarray) -> list[BoundingBox]:
    """Tight axis-aligned box per label, centre at the box midpoint, sorted by label."""
    lab = np.asarray(labels)
    boxes = []
    n = int(lab.max(initial=0))
    if n == 0:
        return boxes
    ys, xs = np.nonzero(lab)
    vals = lab[ys, xs]
    for k in range(1, n + 1):
        sel = vals == k
        if not sel.any():
            continue
        y, x = ys[sel], xs[sel]
        x0, x1, y0, y1 = int(x.min()), int(x.max()), int(y.min()), int(y.max())
        area = int(sel.sum())
        boxes.append(BoundingBox(
            cx=(x0 + x1) / 2.0, cy=(y0 + y1) / 2.0,
            w=x1 - x0 + 1, h=y1 - y0 + 1, label=k,
            equivalent_diameter=2.0 * math.sqrt(area / math.pi),
        ))
    return boxes


def _stat(values: list[float]) -> ErrorStat:
    if not values:
        return ErrorStat(0.0, 0.0)
    a = np.asarray(values, dtype=np.float64)
    return ErrorStat(float(a.mean()), float(a.std()))


def match_boxes(pred: Sequence[BoundingBox], truth: Sequence[BoundingBox]) -> list[tuple[int, int]]:
    """Greedy nearest-centre pairing as (pred_index, truth_index), ascending distance.

    Ties in distance are broken by truth then prediction centre coordinates,
    so the pairing depends on the boxes only and not on list order.
    """
    cand = []
    for i, p in enumerate(pred):
        for j, t in enumerate(truth):
            d = math.hypot(p.cx - t.cx, p.cy - t.cy)
            cand.append((d, t.cy, t.cx, p.cy, p.cx, i, j))
    cand.sort()
    used_p, used_t, pairs = set(), set(), []
    for *_, i, j in cand:
        if i not in used_p and j not in used_t:
            used_p.add(i)
            used_t.add(j)
            pairs.append((i, j))
    return pairs


def box_error_report(pred: Sequence[BoundingBox], truth: Sequence[BoundingBox],
                     image_size: int | tuple[int, int]) -> BoxErrorReport:
    """Percentage errors of box parameters against ground truth.

    Centre errors are normalized by the image side (width for x, height
    for y); width and height errors by the matched truth dimension.
    """
    if isinstance(image_size, int):
        img_w = img_h = image_size
    else:
        img_h, img_w = image_size
    pairs = match_boxes(pred, truth)
    ex, ey, ew, eh = [], [], [], []
    for i, j in pairs:
        p, t = pred[i], truth[j]
        ex.append(abs(p.cx - t.cx) / img_w * 100.0)
        ey.append(abs(p.cy - t.cy) / img_h * 100.0)
        ew.append(abs(p.w - t.w) / t.w * 100.0)
        eh.append(abs(p.h - t.h) / t.h * 100.0)
    return BoxErrorReport(
        n_truth=len(truth), n_pred=len(pred), n_matched=len(pairs),
        recall=len(pairs) / len(truth) if truth else 1.0,
        center_x=_stat(ex), center_y=_stat(ey), width=_stat(ew), height=_stat(eh),
        matches=pairs,
    )


def boxes_from_disks(disks: Sequence[tuple[int, int, float]], shape: tuple[int, int]) -> list[BoundingBox]:
    """Truth boxes: the tight box of each disk rasterized on its own."""
    boxes = []
    for k, disk in enumerate(disks, start=1):
        (box,) = extract_boxes(rasterize_disks([disk], shape).astype(np.int32))
        boxes.append(BoundingBox(box.cx, box.cy, box.w, box.h, k, box.equivalent_diameter))
    return boxes


def boxes_from_mask(mask: np.ndarray, min_separation: int = DEFAULT_MIN_SEPARATION) -> list[BoundingBox]:
    return extract_boxes(split_overlaps(mask, min_separation))


def write_boxes_csv(path: str | os.PathLike, boxes: Sequence[BoundingBox]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["label", "cx", "cy", "w", "h", "eq_diam"])
        for b in boxes:
            wr.writerow([b.label, f"{b.cx:.1f}", f"{b.cy:.1f}", b.w, b.h, f"{b.equivalent_diameter:.4f}"])


def read_boxes_csv(path: str | os.PathLike) -> list[BoundingBox]:
    with open(path, newline="") as fh:
        return [BoundingBox(float(r["cx"]), float(r["cy"]), int(r["w"]), int(r["h"]),
                            int(r["label"]), float(r["eq_diam"])) for r in csv.DictReader(fh)]


def write_boxes_json(path: str | os.PathLike, boxes: Sequence[BoundingBox]) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(b) for b in boxes], fh, indent=2)
