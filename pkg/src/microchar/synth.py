"""Synthetic microstructures with exact ground truth.

Four kinds of image are produced: bright powder particles on a dark
background, dark pores on a light background, Voronoi grain networks with
dark boundary strokes, and grain networks with pores stamped on top.  Each
image is a pure function of ``(spec, size, seed)``.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from . import imageio
from .errors import IoError
from .imaging import relabel_first_visit
from .rng import derive_seed, stream

Kind = Literal["particles", "pores", "grains", "mixed"]
KINDS: tuple[str, ...] = ("particles", "pores", "grains", "mixed")

PARTICLE_LEVEL = 200
PARTICLE_BACKGROUND = 60
PORE_LEVEL = 40
PORE_BACKGROUND = 190
GRAIN_INTERIOR = 180
GRAIN_BOUNDARY = 40
MIXED_PORE_LEVEL = 15

_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class ParticleSpec:
    count: int = 8
    radius_log_mean: float = math.log(6.0)
    radius_log_sigma: float = 0.2
    allow_overlap: bool = False
    noise_sigma: float = 0.0
    polarity: Literal["bright", "dark"] = "bright"

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.radius_log_sigma < 0:
            raise ValueError("radius_log_sigma must be >= 0")
        if self.polarity not in ("bright", "dark"):
            raise ValueError("polarity must be 'bright' or 'dark'")


@dataclass(frozen=True)
class GrainSpec:
    seed_count: int = 12
    relaxation_steps: int = 0
    boundary_width: float = 2.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.seed_count < 1:
            raise ValueError("seed_count must be >= 1")
        if self.relaxation_steps < 0:
            raise ValueError("relaxation_steps must be >= 0")


@dataclass
class GroundTruth:
    kind: str
    mask: np.ndarray
    disks: list[tuple[int, int, float]] = field(default_factory=list)
    cellmap: np.ndarray | None = None
    seeds: np.ndarray | None = None
    requested: int = 0

    @property
    def placed(self) -> int:
        return len(self.disks)


# ---------------------------------------------------------------------------
# disks
# ---------------------------------------------------------------------------

def rasterize_disks(disks: Iterable[tuple[int, int, float]], shape: tuple[int, int]) -> np.ndarray:
    """Union of disks: pixel (x, y) is inside when (x-cx)^2 + (y-cy)^2 <= r^2."""
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    for cx, cy, r in disks:
        ri = int(math.ceil(r))
        y0, y1 = max(0, cy - ri), min(h, cy + ri + 1)
        x0, x1 = max(0, cx - ri), min(w, cx + ri + 1)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        out[y0:y1, x0:x1] |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return out


def _place_disks(spec: ParticleSpec, size: int, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    radii = rng.lognormal(spec.radius_log_mean, spec.radius_log_sigma, size=spec.count)
    disks: list[tuple[int, int, float]] = []
    for r in radii:
        # keep every disk inside the frame
        r = float(min(r, (size - 1) / 2.0 - 0.5))
        lo, hi = int(math.ceil(r)), size - 1 - int(math.ceil(r))
        for _ in range(_MAX_ATTEMPTS):
            cx, cy = (int(v) for v in rng.integers(lo, hi + 1, size=2))
            if spec.allow_overlap or all(
                math.hypot(cx - ox, cy - oy) > r + orad + 2.0 for ox, oy, orad in disks
            ):
                disks.append((cx, cy, r))
                break
    return disks


def _add_noise(base: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    img = base.astype(np.float64)
    if sigma > 0:
        img = img + rng.normal(0.0, sigma, size=base.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _gen_disks(kind: str, spec: ParticleSpec, size: int, seed: int,
               level: int, background: int) -> tuple[np.ndarray, GroundTruth]:
    if size < 32:
        raise ValueError("size must be >= 32")
    disks = _place_disks(spec, size, stream(seed, f"{kind}.geometry"))
    mask = rasterize_disks(disks, (size, size))
    base = np.where(mask, level, background)
    img = _add_noise(base, spec.noise_sigma, stream(seed, f"{kind}.noise"))
    return img, GroundTruth(kind=kind, mask=mask, disks=disks, requested=spec.count)


def gen_particles(spec: ParticleSpec, size: int, seed: int) -> tuple[np.ndarray, GroundTruth]:
    """Powder particles: lognormal radii, bright (or dark, per ``spec.polarity``) disks.

    With ``allow_overlap=False`` each disk is retried up to 1000 times and
    then skipped; ``truth.placed`` reports how many made it.
    """
    if spec.polarity == "bright":
        return _gen_disks("particles", spec, size, seed, PARTICLE_LEVEL, PARTICLE_BACKGROUND)
    return _gen_disks("particles", spec, size, seed, PORE_LEVEL, PORE_BACKGROUND)


def gen_pores(spec: ParticleSpec, size: int, seed: int) -> tuple[np.ndarray, GroundTruth]:
    """Dark pores on a light matrix; ``spec.polarity`` is ignored."""
    return _gen_disks("pores", spec, size, seed, PORE_LEVEL, PORE_BACKGROUND)


# ---------------------------------------------------------------------------
# grains
# ---------------------------------------------------------------------------

def _pixel_grid(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)


def _sq_dists(points: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)


def nearest_seed(seeds: np.ndarray, size: int) -> np.ndarray:
    """Index of the nearest seed (L2, lowest index on ties) for every pixel centre."""
    d2 = _sq_dists(_pixel_grid(size), np.asarray(seeds, dtype=np.float64))
    return d2.argmin(axis=1).reshape(size, size)


def voronoi_cellmap(seeds: np.ndarray, size: int) -> np.ndarray:
    """Voronoi label map of ``seeds`` (x, y) over a ``size`` square, labels 1..K."""
    lab, _ = relabel_first_visit(nearest_seed(seeds, size) + 1)
    return lab


def lloyd_relax(seeds: np.ndarray, size: int, steps: int) -> np.ndarray:
    seeds = np.asarray(seeds, dtype=np.float64).copy()
    grid = _pixel_grid(size)
    for _ in range(steps):
        owner = _sq_dists(grid, seeds).argmin(axis=1)
        counts = np.bincount(owner, minlength=len(seeds))
        sx = np.bincount(owner, weights=grid[:, 0], minlength=len(seeds))
        sy = np.bincount(owner, weights=grid[:, 1], minlength=len(seeds))
        moved = counts > 0
        seeds[moved, 0] = sx[moved] / counts[moved]
        seeds[moved, 1] = sy[moved] / counts[moved]
    return seeds


def boundary_band(seeds: np.ndarray, size: int, width: float) -> np.ndarray:
    """Pixels whose centre lies within ``width / 2`` of a Voronoi bisector."""
    seeds = np.asarray(seeds, dtype=np.float64)
    if len(seeds) < 2 or width <= 0:
        return np.zeros((size, size), dtype=bool)
    grid = _pixel_grid(size)
    d2 = _sq_dists(grid, seeds)
    own = d2.argmin(axis=1)
    d_own = d2[np.arange(len(grid)), own]
    sep = np.sqrt(_sq_dists(seeds[own], seeds))  # |s_i - s_j|
    with np.errstate(divide="ignore", invalid="ignore"):
        to_bisector = (d2 - d_own[:, None]) / (2.0 * sep)
    to_bisector[np.arange(len(grid)), own] = np.inf
    to_bisector[~np.isfinite(to_bisector)] = np.inf
    return (to_bisector.min(axis=1) < width / 2.0).reshape(size, size)


def cell_equivalent_radii(cellmap: np.ndarray) -> np.ndarray:
    """sqrt(area / pi) for every label 1..K of a cell map."""
    areas = np.bincount(np.asarray(cellmap).ravel())[1:]
    return np.sqrt(areas[areas > 0] / math.pi)


def _grain_base(spec: GrainSpec, size: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if size < 32:
        raise ValueError("size must be >= 32")
    if spec.seed_count > size * size / 16:
        raise ValueError("seed_count must be <= size**2 / 16")
    rng = stream(seed, "grains.geometry")
    seeds = rng.uniform(0.0, size - 1.0, size=(spec.seed_count, 2))
    seeds = lloyd_relax(seeds, size, spec.relaxation_steps)
    cellmap = voronoi_cellmap(seeds, size)
    band = boundary_band(seeds, size, spec.boundary_width)
    base = np.where(band, GRAIN_BOUNDARY, GRAIN_INTERIOR)
    return base, cellmap, seeds


def gen_grains(spec: GrainSpec, size: int, seed: int) -> tuple[np.ndarray, GroundTruth]:
    """Lloyd-relaxed Voronoi grains: light interiors (180) and dark boundary strokes (40)."""
    base, cellmap, seeds = _grain_base(spec, size, seed)
    img = _add_noise(base, spec.noise_sigma, stream(seed, "grains.noise"))
    truth = GroundTruth(kind="grains", mask=np.zeros((size, size), dtype=bool),
                        cellmap=cellmap, seeds=seeds)
    return img, truth


def gen_mixed(gspec: GrainSpec, pspec: ParticleSpec, size: int, seed: int) -> tuple[np.ndarray, GroundTruth]:
    """Grain network with dark pores stamped on the clean image before noise.

    Noise follows ``gspec.noise_sigma``; with ``pspec.count == 0`` the output
    equals :func:`gen_grains` bit for bit.
    """
    base, cellmap, seeds = _grain_base(gspec, size, seed)
    disks = _place_disks(pspec, size, stream(seed, "mixed.geometry")) if pspec.count else []
    mask = rasterize_disks(disks, (size, size))
    base = np.where(mask, MIXED_PORE_LEVEL, base)
    img = _add_noise(base, gspec.noise_sigma, stream(seed, "grains.noise"))
    truth = GroundTruth(kind="mixed", mask=mask, disks=disks, cellmap=cellmap,
                        seeds=seeds, requested=pspec.count)
    return img, truth


# ---------------------------------------------------------------------------
# datasets on disk
# ---------------------------------------------------------------------------

DEFAULT_PARTICLE_SPECS = (
    ParticleSpec(count=6, radius_log_mean=math.log(6.0), radius_log_sigma=0.15, noise_sigma=6.0),
    ParticleSpec(count=9, radius_log_mean=math.log(5.0), radius_log_sigma=0.2, noise_sigma=6.0),
    ParticleSpec(count=4, radius_log_mean=math.log(8.0), radius_log_sigma=0.2, noise_sigma=6.0),
    ParticleSpec(count=12, radius_log_mean=math.log(4.5), radius_log_sigma=0.15, noise_sigma=6.0),
)
DEFAULT_PORE_SPECS = tuple(dataclasses.replace(s, polarity="dark") for s in DEFAULT_PARTICLE_SPECS)
DEFAULT_GRAIN_SPECS = tuple(GrainSpec(seed_count=n, noise_sigma=6.0) for n in (5, 8, 12, 18, 26))
DEFAULT_MIXED_PORES = ParticleSpec(count=3, radius_log_mean=math.log(4.5), radius_log_sigma=0.15, polarity="dark")


def generate(kind: str, size: int, seed: int, spec=None, pore_spec=None) -> tuple[np.ndarray, GroundTruth, dict]:
    """Dispatch on ``kind``; returns the image, truth and the spec actually used as a dict."""
    if kind == "particles":
        spec = spec or DEFAULT_PARTICLE_SPECS[0]
        img, truth = gen_particles(spec, size, seed)
        used = {"particles": dataclasses.asdict(spec)}
    elif kind == "pores":
        spec = spec or DEFAULT_PORE_SPECS[0]
        img, truth = gen_pores(spec, size, seed)
        used = {"pores": dataclasses.asdict(spec)}
    elif kind == "grains":
        spec = spec or DEFAULT_GRAIN_SPECS[0]
        img, truth = gen_grains(spec, size, seed)
        used = {"grains": dataclasses.asdict(spec)}
    elif kind == "mixed":
        spec = spec or DEFAULT_GRAIN_SPECS[1]
        pore_spec = pore_spec or DEFAULT_MIXED_PORES
        img, truth = gen_mixed(spec, pore_spec, size, seed)
        used = {"grains": dataclasses.asdict(spec), "pores": dataclasses.asdict(pore_spec)}
    else:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    return img, truth, used


def write_disks_csv(path: str | os.PathLike, disks: Sequence[tuple[int, int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cx", "cy", "r"])
        for cx, cy, r in disks:
            wr.writerow([cx, cy, f"{r:.6f}"])


def read_disks_csv(path: str | os.PathLike) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        return [(int(row["cx"]), int(row["cy"]), float(row["r"])) for row in csv.DictReader(fh)]


def read_manifest(path: str | os.PathLike) -> list[dict]:
    path = Path(path)
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                row["_root"] = str(path.parent)
                rows.append(row)
    return rows


def resolve(row: dict, key: str = "path") -> Path:
    return Path(row["_root"]) / row[key]


def manifest_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def label_psilm_config(size: int):
    """PSILM settings for training labels: dense grid, fixed colour scale.

    A fixed scale makes a colour mean the same radius in every image,
    which is what lets a network read sizes back off the RGB map.
    """
    from .psilm import PsilmConfig

    return PsilmConfig(grid_step=max(2, size // 16), colormap_max=0.375 * size)


def _assign_splits(n: int, split: tuple[int, int, int], n_kinds: int, seed: int) -> dict[int, str]:
    """Random split; stratified by kind when every count divides evenly among the kinds."""
    if n_kinds > 1 and n % n_kinds == 0 and all(c % n_kinds == 0 for c in split):
        names = ["train"] * (split[0] // n_kinds) + ["val"] * (split[1] // n_kinds) + ["test"] * (split[2] // n_kinds)
        out = {}
        for k in range(n_kinds):
            members = np.arange(k, n, n_kinds)
            order = stream(seed, "dataset.split", k).permutation(len(members))
            out.update({int(members[i]): names[rank] for rank, i in enumerate(order)})
        return out
    order = stream(seed, "dataset.split").permutation(n)
    names = ["train"] * split[0] + ["val"] * split[1] + ["test"] * split[2]
    return {int(i): names[rank] for rank, i in enumerate(order)}


def make_dataset(
    kind: str | Sequence[str],
    n: int,
    split: tuple[int, int, int],
    seed: int,
    out_dir: str | os.PathLike,
    size: int = 64,
    specs: Sequence | None = None,
    labels: bool = True,
    psilm_config=None,
) -> Path:
    """Write ``n`` images, their truth and a JSON-lines manifest under ``out_dir``.

    ``kind`` may be a list, in which case image ``i`` has kind
    ``kind[i % len(kind)]`` (used for classifier datasets) and the split is
    stratified by kind when the counts allow it.  Specs cycle the
    same way through ``specs`` or the per-kind defaults.  With ``labels``
    the classical baselines produce the training targets: WCBD masks for
    particles, pores and mixed images, PSILM RGB maps and histograms for
    grains and mixed images.
    """
    from . import psilm, wcbd  # both import this module

    kinds = [kind] if isinstance(kind, str) else list(kind)
    if sum(split) != n:
        raise ValueError("split counts must add up to n")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for sub in ("images", "truth", "labels"):
            (out / sub).mkdir(exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc

    split_of = _assign_splits(n, split, len(kinds), seed)
    cfg = psilm_config or label_psilm_config(size)

    defaults = {"particles": DEFAULT_PARTICLE_SPECS, "pores": DEFAULT_PORE_SPECS,
                "grains": DEFAULT_GRAIN_SPECS, "mixed": DEFAULT_GRAIN_SPECS}
    rows = []
    try:
        for i in range(n):
            k = kinds[i % len(kinds)]
            pool = specs if specs is not None else defaults[k]
            spec = pool[(i // len(kinds)) % len(pool)]
            img_seed = derive_seed(seed, f"dataset.{k}", i)
            img, truth, used = generate(k, size, img_seed, spec)
            stem = f"{i:05d}_{k}"
            row = {"path": f"images/{stem}.png", "class": k, "split": split_of[i],
                   "seed": img_seed, "spec": used}
            imageio.write_gray(out / row["path"], img)
            if k in ("particles", "pores", "mixed"):
                row["truth_mask"] = f"truth/{stem}_mask.png"
                row["truth_disks"] = f"truth/{stem}_disks.csv"
                imageio.write_mask(out / row["truth_mask"], truth.mask)
                write_disks_csv(out / row["truth_disks"], truth.disks)
            if truth.cellmap is not None:
                row["truth_cells"] = f"truth/{stem}_cells.npy"
                np.save(out / row["truth_cells"], truth.cellmap)
            if labels:
                lab = None
                if k in ("particles", "pores", "mixed"):
                    polarity = "bright" if k == "particles" else "dark"
                    # radius 2 strips the 2 px boundary strokes from mixed images
                    open_radius = 2 if k == "mixed" else 1
                    lab = wcbd.wcbd_segment(img, polarity, open_radius=open_radius)
                    row["label_mask"] = f"labels/{stem}_mask.png"
                    imageio.write_mask(out / row["label_mask"], lab)
                if k in ("grains", "mixed"):
                    rgb, samples = psilm.rgb_segmentation(img, cfg, pore_mask=lab)
                    hist = psilm.grain_histogram(samples, cfg.bins, cfg.hist_range)
                    row["label_rgb"] = f"labels/{stem}_rgb.png"
                    row["label_hist"] = f"labels/{stem}_hist.csv"
                    imageio.write_rgb(out / row["label_rgb"], rgb)
                    psilm.write_histogram_csv(out / row["label_hist"], hist)
            rows.append(row)
        manifest = out / "manifest.jsonl"
        with open(manifest, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return manifest
