"""Raster I/O for grayscale, RGB and mask images (PNG and NetPBM).

Masks are stored with the inverted convention: defect pixels are black (0)
and the surrounding space is white (255).
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import UnreadableImage

_FORMATS = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}


def _format_for(path: Path) -> str:
    try:
        return _FORMATS[path.suffix.lower()]
    except KeyError:
        raise ValueError(f"unsupported image extension: {path.suffix!r}") from None


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit grayscale image; RGB inputs are converted with ITU-R 601 luma."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            if im.mode == "RGB":
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def read_rgb(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def write_gray(path: str | os.PathLike, img: np.ndarray) -> Path:
    path = Path(path)
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError("grayscale images must be 2-D uint8 arrays")
    Image.fromarray(arr).save(path, format=_format_for(path))
    return path


def write_rgb(path: str | os.PathLike, img: np.ndarray) -> Path:
    path = Path(path)
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError("RGB images must be (H, W, 3) uint8 arrays")
    Image.fromarray(arr).save(path, format=_format_for(path))
    return path


def mask_to_gray(mask: np.ndarray) -> np.ndarray:
    """Render a boolean defect mask: defects black, background white."""
    return np.where(np.asarray(mask, dtype=bool), 0, 255).astype(np.uint8)


def gray_to_mask(img: np.ndarray) -> np.ndarray:
    return np.asarray(img) < 128


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> Path:
    return write_gray(path, mask_to_gray(mask))


def read_mask(path: str | os.PathLike) -> np.ndarray:
    return gray_to_mask(read_gray(path))
