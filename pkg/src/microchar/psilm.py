"""Point-sampled intercept length method (PSILM) for grain sizing.

Grain boundaries come from a Sobel/Otsu edge map thinned to one pixel.
Sample points on a regular grid inside the grains each get four chords
(0, 90, 45 and -45 degrees) measured boundary to boundary; half the mean
chord is the point's local radius.  The radius field is spread over each
grain by nearest-sample interpolation, coloured with a jet scale (dark blue
small, dark red large) and summarized as a radius histogram.

Chords that run into the image frame are kept and flagged as truncated;
the method has no way to see past the border.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from skimage.morphology import thin

from .errors import NoSamples
from .imaging import (
    cityblock_distance_transform,
    connected_components,
    morph,
    sobel,
    threshold_otsu,
)

DIRECTIONS = (0, 90, 45, -45)

JET_ANCHORS: tuple[tuple[float, tuple[int, int, int]], ...] = (
    (0.0, (0, 0, 139)),
    (0.25, (0, 0, 255)),
    (0.375, (0, 255, 255)),
    (0.625, (0, 255, 0)),
    (0.75, (255, 255, 0)),
    (0.875, (255, 0, 0)),
    (1.0, (139, 0, 0)),
)
_ANCHOR_T = np.array([a[0] for a in JET_ANCHORS])
_ANCHOR_RGB = np.array([a[1] for a in JET_ANCHORS], dtype=np.float64)

BLACK = (0, 0, 0)


@dataclass(frozen=True)
class PsilmConfig:
    grid_step: int = 8
    microns_per_pixel: float = 1.0
    colormap_min: float = 0.0
    colormap_max: float | None = None  # None: largest sample radius of the image
    bins: int = 20

    def __post_init__(self):
        if self.grid_step < 1:
            raise ValueError("grid_step must be >= 1")
        if self.microns_per_pixel <= 0:
            raise ValueError("microns_per_pixel must be > 0")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")

    @property
    def directions(self) -> tuple[int, ...]:
        return DIRECTIONS

    @property
    def hist_range(self) -> tuple[float, float] | None:
        """Fixed histogram range when the colour scale is fixed, else None (auto)."""
        if self.colormap_max is None:
            return None
        return (self.colormap_min, self.colormap_max)


@dataclass(frozen=True)
class InterceptSample:
    x: int
    y: int
    lengths: tuple[float, float, float, float]  # pixels, in DIRECTIONS order
    truncated: tuple[bool, bool, bool, bool]
    local_radius: float


@dataclass
class Histogram:
    bin_edges: np.ndarray
    frequencies: np.ndarray
    mean: float
    std: float
    n: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def summary(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": self.n,
                "bin_edges": self.bin_edges.tolist(),
                "frequencies": self.frequencies.tolist()}


# ---------------------------------------------------------------------------
# colour scale
# ---------------------------------------------------------------------------

def jet_colors(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Vectorized :func:`jet_color`; returns uint8 (..., 3)."""
    if not vmin < vmax:
        raise ValueError("vmin must be < vmax")
    t = np.clip((np.asarray(values, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    rgb = np.stack([np.interp(t, _ANCHOR_T, _ANCHOR_RGB[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def jet_color(value: float, vmin: float, vmax: float) -> tuple[int, int, int]:
    """Piecewise-linear jet through ``JET_ANCHORS``; values outside [vmin, vmax] clamp."""
    r, g, b = jet_colors(np.array([value]), vmin, vmax)[0]
    return int(r), int(g), int(b)


def anchor_index(value: float, vmin: float, vmax: float) -> int:
    """Index of the colour-table segment ``value`` falls into."""
    t = min(max((value - vmin) / (vmax - vmin), 0.0), 1.0)
    return int(min(np.searchsorted(_ANCHOR_T, t, side="right") - 1, len(JET_ANCHORS) - 2))


def jet_palette(n: int = 16) -> np.ndarray:
    """``n`` evenly spaced jet colours from dark blue to dark red."""
    return jet_colors(np.linspace(0.0, 1.0, n), 0.0, 1.0)


# ---------------------------------------------------------------------------
# edges and chords
# ---------------------------------------------------------------------------

def gb_edge_mask(img: np.ndarray) -> np.ndarray:
    """One-pixel grain-boundary map: Sobel magnitude, Otsu split, close, thin."""
    mag = sobel(img).magnitude
    _, strong = threshold_otsu(mag, invert=True)
    if not strong.any():
        return strong
    closed = morph(strong, "close", 1)
    # replicate-pad so thinning does not shorten lines that meet the frame
    pad = 4
    return thin(np.pad(closed, pad, mode="edge"))[pad:-pad, pad:-pad]


def _runs_right(blocked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Free pixels from each pixel going +x (inclusive) and whether the run hits the frame."""
    h, w = blocked.shape
    run = np.zeros((h, w), dtype=np.int32)
    border = np.zeros((h, w), dtype=bool)
    free = ~blocked
    run[:, -1] = free[:, -1]
    border[:, -1] = free[:, -1]
    for x in range(w - 2, -1, -1):
        run[:, x] = np.where(free[:, x], 1 + run[:, x + 1], 0)
        border[:, x] = free[:, x] & np.where(free[:, x + 1], border[:, x + 1], False)
    return run, border


def _runs_down_right(blocked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`_runs_right` along (+1, +1).

    A diagonal step is refused when both pixels flanking it are blocked, so
    an 8-connected one-pixel boundary cannot be slipped through.
    """
    h, w = blocked.shape
    run = np.zeros((h, w), dtype=np.int32)
    border = np.zeros((h, w), dtype=bool)
    free = ~blocked
    run[-1] = free[-1]
    border[-1] = free[-1]
    for y in range(h - 2, -1, -1):
        cur = free[y]
        run[y, -1] = cur[-1]
        border[y, -1] = cur[-1]
        nxt_free = free[y + 1, 1:]
        cross = blocked[y, 1:] & blocked[y + 1, :-1]
        step = cur[:-1] & nxt_free & ~cross
        run[y, :-1] = np.where(step, 1 + run[y + 1, 1:], cur[:-1].astype(np.int32))
        border[y, :-1] = np.where(step, border[y + 1, 1:], False)
    return run, border


def chord_fields(blocked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chord lengths (pixels) and truncation flags for every pixel and direction.

    Returns arrays of shape (4, H, W) in ``DIRECTIONS`` order.  Blocked
    pixels get length 0.
    """
    b = np.asarray(blocked, dtype=bool)

    def both_ways(runner, fwd, inv):
        r1, t1 = runner(fwd(b))
        r2, t2 = runner(fwd(b)[::-1, ::-1])
        r2, t2 = r2[::-1, ::-1], t2[::-1, ::-1]
        count = np.where(r1 > 0, r1 + r2 - 1, 0)
        return inv(count), inv(t1 | t2)

    ident = lambda a: a  # noqa: E731
    c0, t0 = both_ways(_runs_right, ident, ident)
    c90, t90 = both_ways(_runs_right, np.transpose, np.transpose)
    # +45 degrees runs up-right: flip rows so it becomes down-right
    c45, t45 = both_ways(_runs_down_right, np.flipud, np.flipud)
    cm45, tm45 = both_ways(_runs_down_right, ident, ident)
    diag = math.sqrt(2.0)
    lengths = np.stack([c0.astype(np.float64), c90.astype(np.float64), c45 * diag, cm45 * diag])
    truncated = np.stack([t0, t90, t45, tm45])
    return lengths, truncated


def sample_intercepts(edges: np.ndarray, cfg: PsilmConfig = PsilmConfig(),
                      exclude: np.ndarray | None = None) -> list[InterceptSample]:
    """Grid samples (step ``cfg.grid_step``, offset half a step) with their four chords.

    Points on an edge pixel or inside ``exclude`` (pores) are skipped.
    Samples are ordered by grid index (row-major).
    """
    blocked = np.asarray(edges, dtype=bool)
    if exclude is not None:
        blocked = blocked | np.asarray(exclude, dtype=bool)
    lengths, truncated = chord_fields(blocked)
    h, w = blocked.shape
    off = cfg.grid_step // 2
    return _samples_at(
        [(x, y) for y in range(off, h, cfg.grid_step) for x in range(off, w, cfg.grid_step)
         if not blocked[y, x]],
        lengths, truncated, cfg)


def _samples_at(points: Iterable[tuple[int, int]], lengths: np.ndarray, truncated: np.ndarray,
                cfg: PsilmConfig) -> list[InterceptSample]:
    out = []
    for x, y in points:
        ls = tuple(float(v) for v in lengths[:, y, x])
        out.append(InterceptSample(
            x=int(x), y=int(y), lengths=ls,
            truncated=tuple(bool(v) for v in truncated[:, y, x]),
            local_radius=float(np.mean(ls)) / 2.0 * cfg.microns_per_pixel,
        ))
    return out


# ---------------------------------------------------------------------------
# RGB map and histogram
# ---------------------------------------------------------------------------

def radius_field(blocked: np.ndarray, samples: Sequence[InterceptSample]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-sample radius for every free pixel, never crossing a blocked pixel.

    Returns the float field (NaN on blocked pixels or sample-free regions)
    and the region label map it was computed on.
    """
    regions, _ = connected_components(~blocked, 4)
    field = np.full(blocked.shape, np.nan)
    if not samples:
        return field, regions
    sx = np.array([s.x for s in samples])
    sy = np.array([s.y for s in samples])
    sr = np.array([s.local_radius for s in samples])
    s_region = regions[sy, sx]
    ys, xs = np.nonzero(regions)
    pix_region = regions[ys, xs]
    order = np.argsort(pix_region, kind="stable")
    ys, xs, pix_region = ys[order], xs[order], pix_region[order]
    bounds = np.searchsorted(pix_region, np.arange(1, regions.max() + 2))
    for k in range(1, int(regions.max()) + 1):
        own = np.flatnonzero(s_region == k)
        if len(own) == 0:
            continue
        py, px = ys[bounds[k - 1]:bounds[k]], xs[bounds[k - 1]:bounds[k]]
        d2 = (px[:, None] - sx[own][None, :]) ** 2 + (py[:, None] - sy[own][None, :]) ** 2
        # argmin keeps the earliest sample on ties, i.e. the lowest grid index
        field[py, px] = sr[own][d2.argmin(axis=1)]
    return field, regions


def rgb_segmentation(img: np.ndarray, cfg: PsilmConfig = PsilmConfig(),
                     pore_mask: np.ndarray | None = None) -> tuple[np.ndarray, list[InterceptSample]]:
    """Colour-coded grain-size map and the samples behind it.

    Grains the sampling grid misses are coloured from one extra sample at
    their deepest pixel; those fill-in samples are not returned, so the
    histogram stays a pure grid estimate.  Boundaries and pores render
    black and pores contribute no samples.
    """
    edges = gb_edge_mask(img)
    blocked = edges if pore_mask is None else edges | np.asarray(pore_mask, dtype=bool)
    lengths, truncated = chord_fields(blocked)
    h, w = blocked.shape
    off = cfg.grid_step // 2
    points = [(x, y) for y in range(off, h, cfg.grid_step) for x in range(off, w, cfg.grid_step)
              if not blocked[y, x]]
    samples = _samples_at(points, lengths, truncated, cfg)
    regions, n_regions = connected_components(~blocked, 4)
    covered = {int(regions[y, x]) for x, y in points}
    fill = []
    missing = [k for k in range(1, n_regions + 1) if k not in covered]
    if missing:
        depth = cityblock_distance_transform(~blocked).ravel()
        flat = regions.ravel()
        for k in missing:
            sel = np.flatnonzero(flat == k)
            y, x = divmod(int(sel[np.argmax(depth[sel])]), w)
            fill.append((x, y))
    fill_samples = _samples_at(fill, lengths, truncated, cfg)
    field, _ = radius_field(blocked, samples + fill_samples)
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    if samples or fill_samples:
        vmax = cfg.colormap_max
        if vmax is None:
            vmax = max(s.local_radius for s in samples + fill_samples)
        vmin = cfg.colormap_min
        if vmax <= vmin:
            vmax = vmin + 1.0
        ok = ~np.isnan(field)
        rgb[ok] = jet_colors(field[ok], vmin, vmax)
    return rgb, samples


def grain_histogram(samples: Sequence[InterceptSample] | Sequence[float], bins: int = 20,
                    range: tuple[float, float] | None = None) -> Histogram:  # noqa: A002
    """Uniform-bin histogram of local radii.

    The default range is [0, largest radius]; values outside the range are
    counted in the end bins so the frequencies always sum to the sample count.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    radii = np.array([s.local_radius if isinstance(s, InterceptSample) else float(s) for s in samples])
    if radii.size == 0:
        raise NoSamples("no intercept samples to histogram")
    lo, hi = (0.0, float(radii.max())) if range is None else (float(range[0]), float(range[1]))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.floor((radii - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)
    freq = np.bincount(idx, minlength=bins)
    return Histogram(edges, freq, float(radii.mean()), float(radii.std()), int(radii.size))


def histogram_mean(centers: np.ndarray, frequencies: np.ndarray) -> float:
    """Frequency-weighted mean of bin centres (NaN when all frequencies are zero)."""
    f = np.clip(np.asarray(frequencies, dtype=np.float64), 0.0, None)
    total = f.sum()
    return float((np.asarray(centers) * f).sum() / total) if total > 0 else float("nan")


def write_histogram_csv(path: str | os.PathLike, hist: Histogram) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bin_lo", "bin_hi", "freq"])
        for lo, hi, f in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.frequencies):
            wr.writerow([f"{lo:.6f}", f"{hi:.6f}", int(f) if float(f).is_integer() else f"{f:.6f}"])


def read_histogram_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Returns (bin_edges, frequencies) from a histogram CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = np.array([float(r["bin_lo"]) for r in rows] + [float(rows[-1]["bin_hi"])])
    freq = np.array([float(r["freq"]) for r in rows])
    return edges, freq


def write_histogram_summary(path: str | os.PathLike, hist: Histogram) -> None:
    with open(path, "w") as fh:
        json.dump({"mean": hist.mean, "std": hist.std, "n": hist.n,
                   "summary": hist.summary()}, fh, indent=2)


def analyze(img: np.ndarray, cfg: PsilmConfig = PsilmConfig(),
            pore_mask: np.ndarray | None = None) -> tuple[np.ndarray, Histogram]:
    """Full baseline: RGB grain-size map plus radius histogram."""
    rgb, samples = rgb_segmentation(img, cfg, pore_mask)
    return rgb, grain_histogram(samples, cfg.bins, cfg.hist_range)
