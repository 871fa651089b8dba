"""Architecture search over CEDN filter sizes with CMA-ES.

Each searched conv layer is one real coordinate.  CMA-ES proposes real
vectors; ``decode_arch`` clamps and snaps them to odd kernel sizes.  A
candidate's fitness is ``1 - accuracy / 100`` after a short proxy training
run, so lower is better.  Identical decoded specs are trained only once.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import models
from .cma import CmaState, cma_ask, cma_init, cma_tell
from .errors import EmptyDataset
from .models import ArchSpec, n_searched
from .nn.layers import ALLOWED_KERNELS
from .rng import derive_seed, stream

GENOME_LOW, GENOME_HIGH = 0.0, 10.0
_KERNELS = np.array(ALLOWED_KERNELS, dtype=np.float64)


def snap_filter(v: float) -> int:
    """Clamp to [0, 10] and take the nearest allowed kernel; ties go to the smaller one."""
    v = min(max(float(v), GENOME_LOW), GENOME_HIGH)
    return int(_KERNELS[int(np.argmin(np.abs(_KERNELS - v)))])


def decode_filters(genome: Sequence[float]) -> list[int]:
    return [snap_filter(v) for v in genome]


def decode_arch(genome: Sequence[float], base: ArchSpec | None = None) -> ArchSpec:
    base = base or ArchSpec(out_channels=3)
    return base.with_filters(decode_filters(genome))


@dataclass
class DenseConfig:
    generations: int = 8
    popsize: int = 6
    proxy_epochs: int = 1
    proxy_size: int = 32
    seed: int = 0
    sigma0: float = 2.0
    mean0: float = 5.0
    lr: float = 2e-3
    batch: int = 8
    workers: int = 1
    base: ArchSpec = field(default_factory=lambda: ArchSpec(out_channels=3))


@dataclass
class SearchResult:
    best: ArchSpec
    best_fitness: float
    history: list[dict]
    state: CmaState


FitnessFn = Callable[[ArchSpec, int], float]


class ProxyTask:
    """Short RGB-CEDN training on a fixed data subset, scored on the validation rows."""

    def __init__(self, manifest, size: int = 32, epochs: int = 1, lr: float = 2e-3, batch: int = 8):
        train = [r for r in models._rows(manifest, "train") if "label_rgb" in r][:size]
        val = [r for r in models._rows(manifest, "val") if "label_rgb" in r]
        if not train:
            raise EmptyDataset("proxy dataset has no RGB training rows")
        if not val:
            val = train
        self.x, self.y = models.rgb_arrays(train)
        self.xv, self.yv = models.rgb_arrays(val)
        self.truth = [np.clip(np.rint(t.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8) for t in self.yv]
        self.epochs, self.lr, self.batch = epochs, lr, batch

    def __call__(self, spec: ArchSpec, seed: int) -> float:
        try:
            net = models.build_cedn(spec, seed)
            models.fit(net, "mse", self.x, self.y, epochs=self.epochs, lr=self.lr, batch=self.batch, seed=seed)
            accs = []
            for img, truth in zip(self.xv, self.truth):
                pred = models.segment_rgb(net, np.rint(img[0] * 255).astype(np.uint8))
                accs.append(models.rgb_accuracy(pred, truth))
            fit = 1.0 - float(np.mean(accs)) / 100.0
        except (FloatingPointError, ValueError, ArithmeticError):
            return 1.0
        return fit if math.isfinite(fit) else 1.0


def _evaluate(fn: FitnessFn, jobs: list[tuple[ArchSpec, int]], workers: int) -> list[tuple[float, float]]:
    def one(job):
        t0 = time.perf_counter()
        try:
            f = float(fn(*job))
        except Exception:  # a broken candidate must not end the search
            f = 1.0
        return (f if math.isfinite(f) else 1.0), time.perf_counter() - t0

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def dense_search(cfg: DenseConfig, fitness: FitnessFn, history_path: str | os.PathLike | None = None) -> SearchResult:
    """Run ``cfg.generations`` ask/evaluate/tell rounds.

    Candidate ``(g, i)`` trains with seed ``derive_seed(cfg.seed, "dense.candidate", g, i)``;
    the sampling stream for generation ``g`` is keyed the same way, so a
    run is reproducible whatever the worker count.
    """
    n = n_searched(cfg.base.levels)
    state = cma_init(n, np.full(n, cfg.mean0), cfg.sigma0, cfg.popsize)
    cache: dict[tuple[int, ...], float] = {}
    history: list[dict] = []
    best_spec, best_fit = None, math.inf
    fh = open(history_path, "w") if history_path is not None else None
    try:
        for g in range(cfg.generations):
            genomes = cma_ask(state, stream(cfg.seed, "dense.ask", g))
            specs = [decode_arch(x, cfg.base) for x in genomes]
            todo: dict[tuple[int, ...], tuple[ArchSpec, int]] = {}
            for i, spec in enumerate(specs):
                if spec.filters not in cache and spec.filters not in todo:
                    todo[spec.filters] = (spec, derive_seed(cfg.seed, "dense.candidate", g, i))
            timing = {}
            for key, (f, wall) in zip(todo, _evaluate(fitness, list(todo.values()), cfg.workers)):
                cache[key] = f
                timing[key] = wall
            fits = []
            for i, (x, spec) in enumerate(zip(genomes, specs)):
                f = cache[spec.filters]
                fits.append(f)
                row = {"gen": g, "idx": i, "genome": [float(v) for v in x], "filters": list(spec.filters),
                       "fitness": f, "cached": spec.filters not in timing,
                       "wall_time": timing.pop(spec.filters, 0.0)}
                history.append(row)
                if fh is not None:
                    fh.write(json.dumps(row) + "\n")
                if f < best_fit:
                    best_spec, best_fit = spec, f
            cma_tell(state, genomes, fits)
    finally:
        if fh is not None:
            fh.close()
    return SearchResult(best_spec, best_fit, history, state)


def random_specs(k: int, seed: int, base: ArchSpec | None = None) -> list[ArchSpec]:
    """``k`` specs with every filter drawn uniformly from the allowed sizes."""
    base = base or ArchSpec(out_channels=3)
    rng = stream(seed, "dense.random")
    n = n_searched(base.levels)
    return [base.with_filters(rng.choice(ALLOWED_KERNELS, size=n)) for _ in range(k)]


def random_baseline(fitness: FitnessFn, k: int, seed: int, base: ArchSpec | None = None,
                    workers: int = 1) -> list[dict]:
    specs = random_specs(k, seed, base)
    jobs = [(s, derive_seed(seed, "dense.random.candidate", i)) for i, s in enumerate(specs)]
    return [{"idx": i, "filters": list(s.filters), "fitness": f, "wall_time": w}
            for i, (s, (f, w)) in enumerate(zip(specs, _evaluate(fitness, jobs, workers)))]


def save_spec(path: str | os.PathLike, spec: ArchSpec) -> Path:
    path = Path(path)
    path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_spec(path: str | os.PathLike) -> ArchSpec:
    return ArchSpec.from_dict(json.loads(Path(path).read_text()))
