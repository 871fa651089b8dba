"""Held-out evaluation reports as plain JSON-ready dicts."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import imageio, models, psilm, wcbd
from .errors import EmptyDataset
from .synth import read_disks_csv, read_manifest, resolve

CONVENTIONS = {
    **wcbd.CONVENTIONS,
    "pixel_error": "per class, |truth=c and pred!=c| / |truth=c| * 100; black = defect, white = background",
    "rgb_accuracy": "pixels whose nearest palette colour (16 jet colours + black) agrees, percent",
    "radius": "local radius = mean of four chords / 2, in microns",
}


def _split_rows(manifest, split: str, need: str, classes: Sequence[str] | None = None) -> list[dict]:
    rows = [r for r in read_manifest(manifest) if r["split"] == split and need in r]
    if classes is not None:
        rows = [r for r in rows if r["class"] in classes]
    if not rows:
        raise EmptyDataset(f"no {split} rows with {need}")
    return rows


def _mean_std(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "summary": f"{a.mean():.2f} ± {a.std():.2f}"}


def eval_binary(net, manifest, split: str = "test") -> dict:
    """Per-image and aggregate pixel error of the binary segmenter against generator truth."""
    per = []
    for r in _split_rows(manifest, split, "truth_mask", ("particles", "pores")):
        pred = models.segment_binary(net, imageio.read_gray(resolve(r)), r["class"] == "pores")
        black, white = models.pixel_error(pred, imageio.read_mask(resolve(r, "truth_mask")))
        per.append({"path": r["path"], "class": r["class"], "err_black": black, "err_white": white})
    b = np.array([p["err_black"] for p in per])
    w = np.array([p["err_white"] for p in per])
    return {
        "branch": "binary", "split": split, "n": len(per),
        "avg_pixel_error": {"black": float(b.mean()), "white": float(w.mean())},
        "max_pixel_error": {"black": float(b.max()), "white": float(w.max())},
        "per_image": per, "conventions": CONVENTIONS,
    }


def boxes_for(row: dict, net=None) -> list[wcbd.BoundingBox]:
    """Predicted boxes: network mask when ``net`` is given, else the classical WCBD mask."""
    img = imageio.read_gray(resolve(row))
    if net is None:
        mask = wcbd.wcbd_segment(img, "bright" if row["class"] == "particles" else "dark")
    else:
        mask = models.segment_binary(net, img, row["class"] == "pores")
    return wcbd.boxes_from_mask(mask)


def eval_boxes(manifest, split: str = "test", net=None) -> dict:
    """Box count and parameter errors against the generator's disks, per image and pooled."""
    per, pooled = [], {"center_x": [], "center_y": [], "width": [], "height": []}
    n_truth = n_pred = n_matched = 0
    for r in _split_rows(manifest, split, "truth_disks", ("particles", "pores")):
        img_shape = imageio.read_gray(resolve(r)).shape
        truth = wcbd.boxes_from_disks(read_disks_csv(resolve(r, "truth_disks")), img_shape)
        pred = boxes_for(r, net)
        rep = wcbd.box_error_report(pred, truth, img_shape)
        for i, j in rep.matches:
            p, t = pred[i], truth[j]
            pooled["center_x"].append(abs(p.cx - t.cx) / img_shape[1] * 100)
            pooled["center_y"].append(abs(p.cy - t.cy) / img_shape[0] * 100)
            pooled["width"].append(abs(p.w - t.w) / t.w * 100)
            pooled["height"].append(abs(p.h - t.h) / t.h * 100)
        n_truth, n_pred, n_matched = n_truth + rep.n_truth, n_pred + rep.n_pred, n_matched + rep.n_matched
        per.append({"path": r["path"], **rep.to_dict()})
    agg = {k: _mean_std(v) if v else {"mean": 0.0, "std": 0.0, "summary": "n/a"} for k, v in pooled.items()}
    return {
        "branch": "boxes", "method": "network" if net is not None else "wcbd", "split": split,
        "n_images": len(per),
        "count": {"truth": n_truth, "pred": n_pred, "matched": n_matched,
                  "recall": n_matched / n_truth if n_truth else 1.0},
        "error_pct": agg, "per_image": per, "conventions": CONVENTIONS,
    }


def eval_rgb(net, manifest, split: str = "test") -> dict:
    per = []
    for r in _split_rows(manifest, split, "label_rgb"):
        pred = models.segment_rgb(net, imageio.read_gray(resolve(r)))
        per.append({"path": r["path"], "accuracy": models.rgb_accuracy(pred, imageio.read_rgb(resolve(r, "label_rgb")))})
    acc = np.array([p["accuracy"] for p in per])
    return {"branch": "rgb", "split": split, "n": len(per), "accuracy": float(acc.mean()),
            "min_accuracy": float(acc.min()), "per_image": per, "conventions": CONVENTIONS}


def eval_classifier(net, manifest, split: str = "test") -> dict:
    rows = _split_rows(manifest, split, "path", models.CLASSES)
    confusion = np.zeros((3, 3), dtype=int)
    per = []
    for r in rows:
        lab = models.classify(net, imageio.read_gray(resolve(r)))
        confusion[models.CLASSES.index(r["class"]), models.CLASSES.index(lab.label)] += 1
        per.append({"path": r["path"], "class": r["class"], "predicted": lab.label,
                    "probabilities": list(lab.probabilities)})
    return {"branch": "classifier", "split": split, "n": len(rows),
            "accuracy": 100.0 * float(np.trace(confusion)) / len(rows),
            "classes": list(models.CLASSES), "confusion": confusion.tolist(), "per_image": per}


def eval_regression(net, manifest, split: str = "test") -> dict:
    """Predicted vs PSILM histogram mean radius on held-out RGB label maps."""
    per = []
    for r in _split_rows(manifest, split, "label_hist"):
        pred = models.predict_histogram(net, imageio.read_rgb(resolve(r, "label_rgb")))
        edges, freq = psilm.read_histogram_csv(resolve(r, "label_hist"))
        oracle = psilm.histogram_mean(0.5 * (edges[:-1] + edges[1:]), freq)
        per.append({"path": r["path"], "psilm_mean": oracle, "predicted_mean": pred.mean,
                    "rel_error": abs(pred.mean - oracle) / oracle})
    rel = np.array([p["rel_error"] for p in per])
    return {"branch": "regression", "split": split, "n": len(per),
            "psilm_radius": _mean_std([p["psilm_mean"] for p in per]),
            "predicted_radius": _mean_std([p["predicted_mean"] for p in per]),
            "mean_rel_error": float(rel.mean()), "max_rel_error": float(rel.max()),
            "per_image": per, "conventions": CONVENTIONS}
