"""Raster primitives: distance transform, watershed, Sobel, Otsu, labeling, morphology.

Images are plain numpy arrays in row-major (height, width) layout:

* gray images are ``uint8`` of shape (H, W),
* RGB images are ``uint8`` of shape (H, W, 3),
* masks are ``bool`` of shape (H, W), ``True`` marking defects / foreground,
* label maps are ``int32`` of shape (H, W) with 0 as background and labels 1..K,
* distance maps are ``int32`` of shape (H, W) in city-block units.

Every function here is pure; nothing holds state between calls.
"""
from __future__ import annotations

import heapq
from typing import Literal, NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import NoMarkers, TooSmall

GrayImage = np.ndarray
BinaryMask = np.ndarray
LabelMap = np.ndarray
DistanceMap = np.ndarray

_OFFSETS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


def _as_mask(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("expected a non-empty 2-D mask")
    return m


# ---------------------------------------------------------------------------
# distance transform
# ---------------------------------------------------------------------------

def cityblock_distance_transform(mask: BinaryMask) -> DistanceMap:
    """Exact L1 distance from each foreground pixel to the nearest background pixel.

    The L1 metric is separable, so the two raster passes (forward and
    backward, unit weights) are run first down the columns and then along
    the rows, each vectorized across the other axis.  A mask with no
    background at all saturates at ``width + height``.
    """
    m = _as_mask(mask)
    h, w = m.shape
    sat = h + w
    d = np.where(m, sat, 0).astype(np.int32)
    for y in range(1, h):
        np.minimum(d[y], d[y - 1] + 1, out=d[y])
    for y in range(h - 2, -1, -1):
        np.minimum(d[y], d[y + 1] + 1, out=d[y])
    for x in range(1, w):
        np.minimum(d[:, x], d[:, x - 1] + 1, out=d[:, x])
    for x in range(w - 2, -1, -1):
        np.minimum(d[:, x], d[:, x + 1] + 1, out=d[:, x])
    np.minimum(d, sat, out=d)
    return d


# ---------------------------------------------------------------------------
# markers and watershed
# ---------------------------------------------------------------------------

def _merge_to_lowest(coords: np.ndarray, radius: float) -> list[int]:
    """Cluster points linked at Chebyshev distance <= radius; keep each cluster's first point."""
    n = len(coords)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n > 1:
        for i, j in sorted(cKDTree(coords).query_pairs(r=radius, p=np.inf)):
            ri, rj = find(i), find(j)
            if ri != rj:
                # coords arrive in row-major order, so the smaller index wins
                parent[max(ri, rj)] = min(ri, rj)
    return sorted({find(i) for i in range(n)})


def local_maxima(dm: DistanceMap, min_separation: int = 5) -> LabelMap:
    """Marker image of regional maxima of a distance map.

    A pixel is a candidate when its value is positive and at least as large
    as every value in its ``(2*min_separation+1)**2`` window.  Candidates
    that fall inside each other's windows (necessarily of equal value) form
    one plateau and are represented by their lowest row-major pixel.
    Markers are numbered 1..K in row-major order.
    """
    if min_separation < 1:
        raise ValueError("min_separation must be >= 1")
    d = np.asarray(dm)
    size = 2 * int(min_separation) + 1
    peak = ndimage.maximum_filter(d, size=size, mode="constant", cval=0)
    cand = (d > 0) & (d == peak)
    ys, xs = np.nonzero(cand)  # row-major order
    out = np.zeros(d.shape, dtype=np.int32)
    if len(ys) == 0:
        return out
    coords = np.column_stack([ys, xs]).astype(float)
    keep = _merge_to_lowest(coords, float(min_separation))
    for label, k in enumerate(keep, start=1):
        out[ys[k], xs[k]] = label
    return out


def watershed(elevation: np.ndarray, markers: LabelMap, mask: BinaryMask) -> LabelMap:
    """Marker-based priority flood restricted to ``mask`` (4-connectivity).

    Pixels are flooded in ascending elevation; equal elevations are served
    first-in first-out, which makes the result independent of heap
    internals.  A pixel takes the label of the neighbour that first reaches
    it.  Foreground components that contain no marker stay 0.
    """
    m = _as_mask(mask)
    elev = np.asarray(elevation)
    mk = np.asarray(markers)
    if elev.shape != m.shape or mk.shape != m.shape:
        raise ValueError("elevation, markers and mask must share a shape")
    if np.any((mk > 0) & ~m):
        raise ValueError("markers must lie inside the mask foreground")
    h, w = m.shape
    out = np.where(m, mk, 0).astype(np.int32)
    seeds = np.flatnonzero(out)
    if len(seeds) == 0:
        if m.any():
            raise NoMarkers("mask has foreground but no markers were given")
        return out

    lab = out.ravel().tolist()
    fg = m.ravel().tolist()
    ev = elev.ravel().tolist()
    heap: list[tuple] = []
    age = 0
    for idx in seeds.tolist():
        heap.append((ev[idx], age, idx))
        age += 1
    heapq.heapify(heap)
    while heap:
        _, _, idx = heapq.heappop(heap)
        y, x = divmod(idx, w)
        cur = lab[idx]
        for dy, dx in _OFFSETS_4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w:
                n = ny * w + nx
                if fg[n] and not lab[n]:
                    lab[n] = cur
                    heapq.heappush(heap, (ev[n], age, n))
                    age += 1
    return np.asarray(lab, dtype=np.int32).reshape(h, w)


# ---------------------------------------------------------------------------
# gradients and thresholds
# ---------------------------------------------------------------------------

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int32)
SOBEL_Y = SOBEL_X.T.copy()


class SobelResult(NamedTuple):
    magnitude: np.ndarray  # uint8, clamped to [0, 255]
    gx: np.ndarray  # int32 raw responses
    gy: np.ndarray
    raw_magnitude: np.ndarray  # float64 sqrt(gx**2 + gy**2)


def sobel(img: GrayImage) -> SobelResult:
    """3x3 Sobel gradient with replicate padding (output size equals input)."""
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    if a.shape[0] < 3 or a.shape[1] < 3:
        raise TooSmall(f"Sobel needs at least 3x3 pixels, got {a.shape[1]}x{a.shape[0]}")
    p = np.pad(a.astype(np.int32), 1, mode="edge")
    h, w = a.shape
    gx = np.zeros((h, w), dtype=np.int32)
    gy = np.zeros((h, w), dtype=np.int32)
    for dy in range(3):
        for dx in range(3):
            win = p[dy:dy + h, dx:dx + w]
            if SOBEL_X[dy, dx]:
                gx += SOBEL_X[dy, dx] * win
            if SOBEL_Y[dy, dx]:
                gy += SOBEL_Y[dy, dx] * win
    raw = np.sqrt(gx.astype(np.float64) ** 2 + gy.astype(np.float64) ** 2)
    mag = np.clip(np.rint(raw), 0, 255).astype(np.uint8)
    return SobelResult(mag, gx, gy, raw)


def sobel_magnitude(img: GrayImage) -> GrayImage:
    return sobel(img).magnitude


def otsu_level(hist: np.ndarray) -> int:
    """Otsu threshold for a 256-bin histogram.

    Candidate ``t`` splits the intensities into ``[0, t)`` and ``[t, 255]``.
    The between-class variance is compared exactly in integer arithmetic so
    that ties resolve to the lowest ``t``.  Returns -1 when the histogram
    holds a single intensity.
    """
    hist = [int(v) for v in hist]
    total_n = sum(hist)
    total_s = sum(i * c for i, c in enumerate(hist))
    best_t, best_num, best_den = -1, 0, 1
    n0 = s0 = 0
    for t in range(256):
        if t > 0:
            n0 += hist[t - 1]
            s0 += (t - 1) * hist[t - 1]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * N^2 = (N*S0 - n0*S)^2 / (n0*n1)
        num = (total_n * s0 - n0 * total_s) ** 2
        den = n0 * n1
        if best_t < 0 or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def threshold_otsu(img: GrayImage, invert: bool = False) -> tuple[int, BinaryMask]:
    """Otsu binarization with dark foreground.

    Foreground is every pixel strictly below the threshold.  ``invert``
    thresholds ``255 - img`` instead, making bright pixels the foreground;
    the returned threshold then refers to the inverted intensities.  A
    constant image yields its own value as threshold and an empty mask.
    """
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(a, 0, 255).astype(np.uint8)
    if invert:
        a = 255 - a
    hist = np.bincount(a.ravel(), minlength=256)
    t = otsu_level(hist)
    if t < 0:
        return int(a.flat[0]), np.zeros(a.shape, dtype=bool)
    return t, a < t


# ---------------------------------------------------------------------------
# labeling and morphology
# ---------------------------------------------------------------------------

def relabel_first_visit(labels: np.ndarray) -> tuple[LabelMap, int]:
    """Renumber a label image so labels appear in row-major first-visit order."""
    lab = np.asarray(labels)
    flat = lab.ravel()
    values, first = np.unique(flat, return_index=True)
    keep = values != 0
    values, first = values[keep], first[keep]
    order = values[np.argsort(first, kind="stable")]
    lut = np.zeros(int(flat.max(initial=0)) + 1, dtype=np.int32)
    lut[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    return lut[lab].astype(np.int32), len(order)


def connected_components(mask: BinaryMask, connectivity: Literal[4, 8] = 4) -> tuple[LabelMap, int]:
    """Label connected foreground components, numbered in row-major first-visit order."""
    m = _as_mask(mask)
    if connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    elif connectivity == 8:
        structure = np.ones((3, 3), dtype=bool)
    else:
        raise ValueError("connectivity must be 4 or 8")
    lab, _ = ndimage.label(m, structure=structure)
    return relabel_first_visit(lab)


def l1_ball(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (np.abs(yy) + np.abs(xx)) <= r


def morph(mask: BinaryMask, op: Literal["open", "close", "erode", "dilate"], radius: int = 1) -> BinaryMask:
    """Binary morphology with an L1-ball (diamond) structuring element.

    Pixels outside the image count as background; the image is padded by
    ``radius`` before the operation so closing stays extensive at the border.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    m = _as_mask(mask)
    se = l1_ball(radius)
    r = int(radius)
    p = np.pad(m, r, constant_values=False)
    if op == "erode":
        out = ndimage.binary_erosion(p, se)
    elif op == "dilate":
        out = ndimage.binary_dilation(p, se)
    elif op == "open":
        out = ndimage.binary_dilation(ndimage.binary_erosion(p, se), se)
    elif op == "close":
        p = np.pad(m, 2 * r, constant_values=False)
        out = ndimage.binary_erosion(ndimage.binary_dilation(p, se), se)
        return out[2 * r:-2 * r, 2 * r:-2 * r]
    else:
        raise ValueError(f"unknown morphological op {op!r}")
    return out[r:-r, r:-r]
