"""CMA-ES with the standard default strategy parameters, ask/tell style.

Sampling is ``x = m + sigma * B D z`` from the eigendecomposition
``C = B D^2 B^T``.  The update is weighted recombination of the best
``mu`` candidates, cumulative step-size adaptation, and the rank-one plus
rank-mu covariance update.  Ranking sorts by fitness and breaks exact ties
by candidate index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDim, LengthMismatch, NotPositiveDefinite

EIG_FLOOR = 1e-14


def default_popsize(n: int) -> int:
    return 4 + int(math.floor(3 * math.log(n)))


@dataclass
class CmaState:
    n: int
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float
    generation: int = 0
    B: np.ndarray | None = None
    D: np.ndarray | None = None
    evaluations: int = 0

    def eigen(self) -> tuple[np.ndarray, np.ndarray]:
        if self.B is None:
            self.B, self.D = _decompose(self.C)
        return self.B, self.D

    def ask(self, rng: np.random.Generator) -> np.ndarray:
        return cma_ask(self, rng)

    def tell(self, genomes, fitnesses) -> "CmaState":
        return cma_tell(self, genomes, fitnesses)


def cma_init(n: int, m0, sigma0: float, lam: int | None = None) -> CmaState:
    if n < 1:
        raise InvalidDim("dimension must be >= 1")
    if not sigma0 > 0:
        raise ValueError("sigma0 must be > 0")
    mean = np.broadcast_to(np.asarray(m0, dtype=np.float64), (n,)).copy()
    lam = default_popsize(n) if lam is None else int(lam)
    if lam < 2:
        raise ValueError("population size must be >= 2")
    mu = lam // 2
    w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    w = w / w.sum()
    mu_eff = 1.0 / float((w ** 2).sum())
    c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return CmaState(n=n, mean=mean, sigma=float(sigma0), C=np.eye(n), p_sigma=np.zeros(n), p_c=np.zeros(n),
                    lam=lam, mu=mu, weights=w, mu_eff=mu_eff, c_sigma=c_sigma, d_sigma=d_sigma,
                    c_c=c_c, c_1=c_1, c_mu=c_mu, chi_n=chi_n)


def _decompose(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenbasis and axis lengths of C, with eigenvalues floored at ``EIG_FLOOR``."""
    if not np.all(np.isfinite(C)):
        raise NotPositiveDefinite("covariance has non-finite entries")
    try:
        vals, vecs = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return vecs, np.sqrt(np.maximum(vals, EIG_FLOOR))


def cma_ask(state: CmaState, rng: np.random.Generator) -> np.ndarray:
    """``lam`` candidate genomes, one per row."""
    B, D = state.eigen()
    z = rng.standard_normal((state.lam, state.n))
    return state.mean + state.sigma * (z * D) @ B.T


def ranking(fitnesses) -> np.ndarray:
    """Candidate indices best first; equal fitness keeps index order."""
    return np.argsort(np.asarray(fitnesses, dtype=np.float64), kind="stable")


def cma_tell(state: CmaState, genomes, fitnesses) -> CmaState:
    x = np.asarray(genomes, dtype=np.float64)
    f = np.asarray(fitnesses, dtype=np.float64)
    if x.shape != (state.lam, state.n) or f.shape != (state.lam,):
        raise LengthMismatch(f"expected {state.lam} genomes of length {state.n} and {state.lam} fitnesses")
    if not np.all(np.isfinite(f)):
        raise ValueError("fitnesses must be finite")
    n, s = state.n, state
    B, D = s.eigen()
    sel = ranking(f)[: s.mu]
    y = (x[sel] - s.mean) / s.sigma
    y_w = s.weights @ y
    s.mean = s.mean + s.sigma * y_w

    inv_sqrt_c = B @ np.diag(1.0 / D) @ B.T
    s.p_sigma = (1 - s.c_sigma) * s.p_sigma + math.sqrt(s.c_sigma * (2 - s.c_sigma) * s.mu_eff) * (inv_sqrt_c @ y_w)
    norm_ps = float(np.linalg.norm(s.p_sigma))
    decay = 1 - (1 - s.c_sigma) ** (2 * (s.generation + 1))
    h_sigma = 1.0 if norm_ps / math.sqrt(decay) < (1.4 + 2 / (n + 1)) * s.chi_n else 0.0
    s.p_c = (1 - s.c_c) * s.p_c + h_sigma * math.sqrt(s.c_c * (2 - s.c_c) * s.mu_eff) * y_w

    delta = (1 - h_sigma) * s.c_c * (2 - s.c_c)
    rank_mu = (y.T * s.weights) @ y
    C = (1 + s.c_1 * delta - s.c_1 - s.c_mu) * s.C + s.c_1 * np.outer(s.p_c, s.p_c) + s.c_mu * rank_mu
    C = 0.5 * (C + C.T)
    vecs, lengths = _decompose(C)
    if np.any(lengths ** 2 <= EIG_FLOOR):
        C = (vecs * lengths ** 2) @ vecs.T
        C = 0.5 * (C + C.T)
    s.C, s.B, s.D = C, vecs, lengths

    s.sigma *= math.exp((s.c_sigma / s.d_sigma) * (norm_ps / s.chi_n - 1))
    if not (math.isfinite(s.sigma) and s.sigma > 0):
        raise NotPositiveDefinite(f"step size degenerated to {s.sigma}")
    s.generation += 1
    s.evaluations += s.lam
    return s


def minimize(fn, m0, sigma0: float, rng: np.random.Generator, max_evals: int, target: float = -math.inf,
             lam: int | None = None, callback=None) -> CmaState:
    """Plain loop for test functions: stops at ``max_evals`` or when f(mean) <= target."""
    m0 = np.atleast_1d(np.asarray(m0, dtype=np.float64))
    state = cma_init(len(m0), m0, sigma0, lam)
    while state.evaluations + state.lam <= max_evals:
        xs = cma_ask(state, rng)
        cma_tell(state, xs, [fn(x) for x in xs])
        if callback is not None:
            callback(state)
        if fn(state.mean) <= target:
            break
    return state
