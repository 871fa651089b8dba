"""Networks used by the framework and the metrics that score them.

* ``CEDN``: encoder-decoder with skip connections.  One output channel and
  a sigmoid head gives the binary defect segmenter; three channels and a
  linear head give the RGB grain-size segmenter.
* ``Classifier``: three conv levels, global average pool, linear, softmax
  over (pores, particles, grains).
* ``HistogramRegressor``: two small conv nets reading an RGB grain map, one
  for radius bin centres and one for bin frequencies.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import imageio, psilm
from .errors import EmptyDataset, InvalidSpec, NoCheckpoint, ShapeMismatch
from .nn import checkpoint
from .nn.layers import ALLOWED_KERNELS, Conv2d, ConvTranspose2d, Linear, Module, count_params
from .nn.optim import Adam
from .nn.tensor import (
    Tensor,
    concat,
    global_avg_pool,
    loss,
    max_pool2d,
    no_grad,
    relu,
    sigmoid,
    softmax,
)
from .rng import stream
from .synth import read_manifest, resolve

CLASSES = ("pores", "particles", "grains")
BINARY_THRESHOLD = 0.5
HIST_BINS = 20


# ---------------------------------------------------------------------------
# architecture spec
# ---------------------------------------------------------------------------

def n_searched(levels: int) -> int:
    """Searchable conv layers: two per encoder level, two in the bottleneck, one per decoder level."""
    return 3 * levels + 2


@dataclass(frozen=True)
class ArchSpec:
    levels: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    enc_filters: tuple[int, ...] = ()  # 2 * (levels + 1): encoder pairs then the bottleneck pair
    dec_filters: tuple[int, ...] = ()  # one per decoder level, deepest first
    out_channels: int = 1
    in_channels: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidSpec("levels must be >= 1")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.enc_filters:
            object.__setattr__(self, "enc_filters", (3,) * (2 * self.levels + 2))
        if not self.dec_filters:
            object.__setattr__(self, "dec_filters", (3,) * self.levels)
        object.__setattr__(self, "enc_filters", tuple(int(k) for k in self.enc_filters))
        object.__setattr__(self, "dec_filters", tuple(int(k) for k in self.dec_filters))
        if len(self.channels) != self.levels or any(c < 1 for c in self.channels):
            raise InvalidSpec(f"need {self.levels} positive channel widths, got {self.channels}")
        if len(self.enc_filters) != 2 * self.levels + 2 or len(self.dec_filters) != self.levels:
            raise InvalidSpec("filter list lengths do not match the depth")
        bad = [k for k in self.filters if k not in ALLOWED_KERNELS]
        if bad:
            raise InvalidSpec(f"filter sizes {bad} not in {ALLOWED_KERNELS}")
        if self.out_channels not in (1, 3):
            raise InvalidSpec("out_channels must be 1 (binary) or 3 (RGB)")

    @property
    def filters(self) -> tuple[int, ...]:
        return self.enc_filters + self.dec_filters

    def with_filters(self, filters: Sequence[int]) -> "ArchSpec":
        f = [int(k) for k in filters]
        if len(f) != n_searched(self.levels):
            raise InvalidSpec(f"expected {n_searched(self.levels)} filters, got {len(f)}")
        cut = 2 * self.levels + 2
        return dataclasses.replace(self, enc_filters=tuple(f[:cut]), dec_filters=tuple(f[cut:]))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class CEDN(Module):
    def __init__(self, spec: ArchSpec, seed: int = 0):
        self.spec = spec
        rng = stream(seed, "init.cedn")
        ef, ch = spec.enc_filters, spec.channels
        self.enc = []
        prev = spec.in_channels
        for lvl, c in enumerate(ch):
            self.enc.append(Conv2d(prev, c, ef[2 * lvl], rng))
            self.enc.append(Conv2d(c, c, ef[2 * lvl + 1], rng))
            prev = c
        wide = 2 * ch[-1]
        self.mid = [Conv2d(prev, wide, ef[-2], rng), Conv2d(wide, wide, ef[-1], rng)]
        prev = wide
        self.up, self.dec = [], []
        for i, c in enumerate(reversed(ch)):
            self.up.append(ConvTranspose2d(prev, c, rng))
            self.dec.append(Conv2d(2 * c, c, spec.dec_filters[i], rng))
            prev = c
        self.head = Conv2d(prev, spec.out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        f = 2 ** self.spec.levels
        if h % f or w % f:
            raise ShapeMismatch(f"input {h}x{w} must be divisible by {f}")
        skips = []
        for lvl in range(self.spec.levels):
            x = relu(self.enc[2 * lvl](x))
            x = relu(self.enc[2 * lvl + 1](x))
            skips.append(x)
            x = max_pool2d(x)
        x = relu(self.mid[1](relu(self.mid[0](x))))
        for up, conv, skip in zip(self.up, self.dec, reversed(skips)):
            x = relu(conv(concat([up(x), skip], axis=1)))
        out = self.head(x)
        return sigmoid(out) if self.spec.out_channels == 1 else out

    def descriptor(self) -> dict:
        return {"kind": "cedn", "spec": self.spec.to_dict()}


def build_cedn(spec: ArchSpec, seed: int = 0) -> CEDN:
    return CEDN(spec, seed)


class Classifier(Module):
    def __init__(self, seed: int = 0, channels: Sequence[int] = (8, 16, 32), n_classes: int = len(CLASSES)):
        rng = stream(seed, "init.classifier")
        self.channels = tuple(channels)
        self.convs = []
        prev = 1
        for c in self.channels:
            self.convs.append(Conv2d(prev, c, 3, rng))
            prev = c
        self.fc = Linear(prev, n_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        """Logits (N, classes)."""
        for conv in self.convs:
            x = max_pool2d(relu(conv(x)))
        return self.fc(global_avg_pool(x))

    def descriptor(self) -> dict:
        return {"kind": "classifier", "channels": list(self.channels)}


class _Head(Module):
    # a 1x1 layer first turns each pixel's colour into radius features
    def __init__(self, rng: np.random.Generator, out: int, channels: Sequence[int]):
        self.point = Conv2d(3, channels[0], 1, rng)
        self.convs = []
        prev = channels[0]
        for c in channels:
            self.convs.append(Conv2d(prev, c, 3, rng))
            prev = c
        self.hidden = Linear(prev, 2 * prev, rng)
        self.fc = Linear(2 * prev, out, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = relu(self.point(x))
        for conv in self.convs:
            x = max_pool2d(relu(conv(x)))
        return self.fc(relu(self.hidden(global_avg_pool(x))))


class HistogramRegressor(Module):
    """Radius-centre head and frequency head, each conv + pool + linear."""

    def __init__(self, seed: int = 0, bins: int = HIST_BINS, channels: Sequence[int] = (8, 16, 32)):
        self.bins, self.channels = bins, tuple(channels)
        self.centers = _Head(stream(seed, "init.reg.centers"), bins, channels)
        self.freqs = _Head(stream(seed, "init.reg.freqs"), bins, channels)

    def forward(self, x: Tensor) -> Tensor:
        return concat([self.centers(x), self.freqs(x)], axis=1)

    def descriptor(self) -> dict:
        return {"kind": "regressor", "bins": self.bins, "channels": list(self.channels)}


def from_descriptor(desc: dict) -> Module:
    kind = desc.get("kind")
    if kind == "cedn":
        return CEDN(ArchSpec.from_dict(desc["spec"]))
    if kind == "classifier":
        return Classifier(channels=desc["channels"])
    if kind == "regressor":
        return HistogramRegressor(bins=desc["bins"], channels=desc["channels"])
    raise NoCheckpoint(f"unknown network kind {kind!r}")


def save_net(path, net: Module, meta: dict | None = None) -> Path:
    return checkpoint.save(path, net, net.descriptor(), meta)


def load_net(path) -> Module:
    desc, arrays = checkpoint.read(path)
    net = from_descriptor(desc)
    checkpoint.load_into(net, arrays)
    return net


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def gray_input(img: np.ndarray, invert: bool = False) -> np.ndarray:
    """(H, W) uint8 -> (1, H, W) float in [0, 1]; pores are inverted so they look like particles."""
    a = np.asarray(img, dtype=np.float32) / 255.0
    return (1.0 - a if invert else a)[None]


def rgb_input(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0


def _rows(manifest, split: str, classes: Sequence[str] | None = None) -> list[dict]:
    rows = [r for r in read_manifest(manifest) if r["split"] == split]
    if classes is not None:
        rows = [r for r in rows if r["class"] in classes]
    return rows


def binary_arrays(rows: Sequence[dict]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([gray_input(imageio.read_gray(resolve(r)), r["class"] == "pores") for r in rows])
    y = np.stack([imageio.read_mask(resolve(r, "label_mask"))[None] for r in rows]).astype(np.float32)
    return x, y


def rgb_arrays(rows: Sequence[dict]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([gray_input(imageio.read_gray(resolve(r))) for r in rows])
    y = np.stack([rgb_input(imageio.read_rgb(resolve(r, "label_rgb"))) for r in rows])
    return x, y


def class_arrays(rows: Sequence[dict]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([gray_input(imageio.read_gray(resolve(r))) for r in rows])
    y = np.eye(len(CLASSES), dtype=np.float32)[[CLASSES.index(r["class"]) for r in rows]]
    return x, y


def histogram_arrays(rows: Sequence[dict]) -> tuple[np.ndarray, np.ndarray]:
    """RGB label maps and targets [centres, normalized frequencies]."""
    x = np.stack([rgb_input(imageio.read_rgb(resolve(r, "label_rgb"))) for r in rows])
    ys = []
    for r in rows:
        edges, freq = psilm.read_histogram_csv(resolve(r, "label_hist"))
        centers = 0.5 * (edges[:-1] + edges[1:])
        ys.append(np.concatenate([centers, freq / max(freq.sum(), 1.0)]))
    return x, np.stack(ys).astype(np.float32)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    net: Module
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf

    def meta(self, **extra) -> dict:
        return {"history": self.history, "best_epoch": self.best_epoch,
                "best_val_loss": self.best_val, **extra}


def _batched_loss(net: Module, kind: str, x: np.ndarray, y: np.ndarray, batch: int) -> float:
    total = 0.0
    with no_grad():
        for i in range(0, len(x), batch):
            total += loss(kind, net(Tensor(x[i:i + batch])), y[i:i + batch]).item() * len(x[i:i + batch])
    return total / len(x)


def dihedral(a: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 square symmetries applied to the last two axes."""
    a = np.rot90(a, k % 4, axes=(-2, -1))
    return np.ascontiguousarray(a[..., ::-1] if k >= 4 else a)


def fit(net: Module, loss_kind: str, x: np.ndarray, y: np.ndarray, *, epochs: int, lr: float,
        batch: int, seed: int, x_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
        augment: bool = False) -> TrainResult:
    """Adam minibatch training; the parameters with the lowest validation loss are kept.

    Without a validation set the training loss picks the best epoch.
    Shuffling draws from the ``(seed, "train.shuffle", epoch)`` stream.
    ``augment`` applies a random square symmetry to each input batch, for
    targets that do not change under rotation or reflection.
    """
    if len(x) == 0:
        raise EmptyDataset("no training examples")
    opt = Adam(net.parameters(), lr)
    res = TrainResult(net)
    best = None
    for epoch in range(1, epochs + 1):
        rng = stream(seed, "train.shuffle", epoch)
        order = rng.permutation(len(x))
        running = 0.0
        for i in range(0, len(x), batch):
            idx = order[i:i + batch]
            xb = dihedral(x[idx], int(rng.integers(8))) if augment else x[idx]
            opt.zero_grad()
            value = loss(loss_kind, net(Tensor(xb)), y[idx])
            value.backward()
            opt.step()
            running += value.item() * len(idx)
        train_loss = running / len(x)
        val_loss = _batched_loss(net, loss_kind, x_val, y_val, batch) if x_val is not None and len(x_val) else train_loss
        res.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if not math.isfinite(val_loss):
            break
        if val_loss < res.best_val:
            res.best_val, res.best_epoch = val_loss, epoch
            best = [p.data.copy() for p in net.parameters()]
    if best is not None:
        for p, a in zip(net.parameters(), best):
            p.data = a
    return res


def train_cedn(spec: ArchSpec, manifest, *, epochs: int = 20, lr: float = 2e-3, batch: int = 8,
               seed: int = 0, checkpoint_path=None, max_train: int | None = None) -> TrainResult:
    """Build and train a CEDN from a dataset manifest.

    Binary specs learn ``label_mask`` with BCE, RGB specs learn
    ``label_rgb`` with MSE.  Rows are used in manifest order (capped at
    ``max_train``), so a fixed seed reproduces the checkpoint bit for bit.
    """
    net = build_cedn(spec, seed)
    key = "label_mask" if spec.out_channels == 1 else "label_rgb"
    load = binary_arrays if spec.out_channels == 1 else rgb_arrays
    train = [r for r in _rows(manifest, "train") if key in r][:max_train]
    if not train:
        raise EmptyDataset(f"manifest has no training rows with {key}")
    val = [r for r in _rows(manifest, "val") if key in r]
    x, y = load(train)
    xv, yv = load(val) if val else (None, None)
    kind = "bce" if spec.out_channels == 1 else "mse"
    res = fit(net, kind, x, y, epochs=epochs, lr=lr, batch=batch, seed=seed, x_val=xv, y_val=yv)
    if checkpoint_path is not None:
        save_net(checkpoint_path, net, res.meta(seed=seed, epochs=epochs, lr=lr, batch=batch,
                                                n_train=len(train), n_val=len(val)))
    return res


def train_classifier(manifest, *, epochs: int = 10, lr: float = 3e-3, batch: int = 16, seed: int = 0,
                     checkpoint_path=None) -> TrainResult:
    net = Classifier(seed)
    train = _rows(manifest, "train", CLASSES)
    if not train:
        raise EmptyDataset("manifest has no classifier training rows")
    val = _rows(manifest, "val", CLASSES)
    x, y = class_arrays(train)
    xv, yv = class_arrays(val) if val else (None, None)
    res = fit(net, "ce", x, y, epochs=epochs, lr=lr, batch=batch, seed=seed, x_val=xv, y_val=yv)
    if checkpoint_path is not None:
        save_net(checkpoint_path, net, res.meta(seed=seed, epochs=epochs, lr=lr, batch=batch))
    return res


def train_regressor(manifest, *, epochs: int = 80, lr: float = 3e-3, batch: int = 16, seed: int = 0,
                    bins: int = HIST_BINS, checkpoint_path=None) -> TrainResult:
    net = HistogramRegressor(seed, bins)
    train = [r for r in _rows(manifest, "train") if "label_hist" in r]
    if not train:
        raise EmptyDataset("manifest has no histogram training rows")
    val = [r for r in _rows(manifest, "val") if "label_hist" in r]
    x, y = histogram_arrays(train)
    xv, yv = histogram_arrays(val) if val else (None, None)
    res = fit(net, "mse", x, y, epochs=epochs, lr=lr, batch=batch, seed=seed, x_val=xv, y_val=yv, augment=True)
    if checkpoint_path is not None:
        save_net(checkpoint_path, net, res.meta(seed=seed, epochs=epochs, lr=lr, batch=batch))
    return res


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassLabel:
    label: str
    probabilities: tuple[float, float, float]

    @property
    def confidence(self) -> float:
        return max(self.probabilities)


@dataclass(frozen=True)
class HistogramPrediction:
    radii: np.ndarray
    frequencies: np.ndarray

    @property
    def mean(self) -> float:
        return psilm.histogram_mean(self.radii, self.frequencies)


def _need(net, kind):
    if net is None:
        raise NoCheckpoint(f"no trained {kind} loaded")


def segment_binary(net: CEDN, img: np.ndarray, invert: bool = False) -> np.ndarray:
    _need(net, "binary segmenter")
    with no_grad():
        p = net(Tensor(gray_input(img, invert)[None])).data[0, 0]
    return p > BINARY_THRESHOLD


def segment_rgb(net: CEDN, img: np.ndarray) -> np.ndarray:
    _need(net, "RGB segmenter")
    with no_grad():
        out = net(Tensor(gray_input(img)[None])).data[0]
    return np.clip(np.rint(out.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def classify(net: Classifier, img: np.ndarray) -> ClassLabel:
    _need(net, "classifier")
    with no_grad():
        probs = softmax(net(Tensor(gray_input(img)[None])), axis=1).data[0].astype(np.float64)
    return ClassLabel(CLASSES[int(np.argmax(probs))], tuple(float(p) for p in probs))


def predict_histogram(net: HistogramRegressor, rgb_seg: np.ndarray) -> HistogramPrediction:
    _need(net, "histogram regressor")
    with no_grad():
        out = net(Tensor(rgb_input(rgb_seg)[None])).data[0].astype(np.float64)
    b = net.bins
    return HistogramPrediction(out[:b], np.clip(out[b:], 0.0, None))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def pixel_error(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Per-class miss rates in percent: (defect / "black" pixels, background / "white" pixels).

    A class absent from ``truth`` has nothing to miss and scores 0.
    """
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs truth {t.shape}")
    out = []
    for cls in (True, False):
        sel = t == cls
        n = int(sel.sum())
        out.append(100.0 * int((p[sel] != cls).sum()) / n if n else 0.0)
    return out[0], out[1]


ACCURACY_PALETTE = np.vstack([psilm.jet_palette(16), np.zeros((1, 3), dtype=np.uint8)])


def quantize_rgb(rgb: np.ndarray) -> np.ndarray:
    """Index of the nearest palette colour (16 jet colours plus black) per pixel."""
    a = np.asarray(rgb, dtype=np.int32).reshape(-1, 3)
    pal = ACCURACY_PALETTE.astype(np.int32)
    d = ((a[:, None, :] - pal[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1).reshape(np.asarray(rgb).shape[:-1])


def rgb_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    p, t = np.asarray(pred), np.asarray(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs truth {t.shape}")
    return 100.0 * float(np.mean(quantize_rgb(p) == quantize_rgb(t)))


def describe(net: Module) -> dict:
    return {**net.descriptor(), "parameters": count_params(net)}


def dumps(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True)
