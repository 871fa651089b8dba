"""Random small inputs for every differentiable op, plus the check itself.

Each case builder returns ``(fn, arrays)`` where ``fn`` maps Tensors to a
Tensor.  Inputs are drawn away from non-differentiable points (ReLU kink,
max-pool ties) so central differences are meaningful.
"""
from __future__ import annotations

import numpy as np

from microchar import nn
from microchar.nn import tensor as T

from oracles import finite_difference, max_rel_error


def _away_from_zero(rng, shape, gap=0.05):
    a = rng.normal(size=shape)
    return np.where(np.abs(a) < gap, np.sign(a + 1e-12) * gap + a, a)


def _distinct(rng, shape):
    # a shuffled grid of well-separated values: no pooling window has a near-tie
    n = int(np.prod(shape))
    return rng.permutation(np.linspace(-2, 2, n)).reshape(shape)


def conv_case(rng):
    k = int(rng.choice([1, 3, 5]))
    s = int(rng.choice([1, 2]))
    p = int(rng.integers(0, k // 2 + 1))
    c, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    base = int(rng.integers(k, k + 4))
    h = base + ((base + 2 * p - k) % s and s - (base + 2 * p - k) % s)
    x = rng.normal(size=(int(rng.integers(1, 3)), c, h, h))
    w = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=o)
    return (lambda x, w, b: T.conv2d(x, w, b, s, p)), [x, w, b]


def convt_case(rng):
    c, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h, w_ = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    x = rng.normal(size=(int(rng.integers(1, 3)), c, h, w_))
    return (lambda x, w, b: T.conv_transpose2d(x, w, b, 2)), [x, rng.normal(size=(c, o, 2, 2)), rng.normal(size=o)]


def pool_case(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)), 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4)))
    return (lambda x: T.max_pool2d(x)), [_distinct(rng, shape)]


def relu_case(rng):
    return (lambda x: T.relu(x)), [_away_from_zero(rng, (2, int(rng.integers(1, 4)), 3, 3))]


def sigmoid_case(rng):
    return (lambda x: T.sigmoid(x)), [rng.normal(scale=2, size=(2, int(rng.integers(1, 4)), 3, 3))]


def softmax_case(rng):
    return (lambda x: T.softmax(x, axis=1)), [rng.normal(size=(int(rng.integers(1, 5)), int(rng.integers(2, 6))))]


def linear_case(rng):
    n, i, o = (int(v) for v in rng.integers(1, 5, size=3))
    return (lambda x, w, b: T.linear(x, w, b)), [rng.normal(size=(n, i)), rng.normal(size=(o, i)), rng.normal(size=o)]


def gap_case(rng):
    return (lambda x: T.global_avg_pool(x)), [rng.normal(size=(2, int(rng.integers(1, 4)), int(rng.integers(1, 5)), 3))]


def concat_case(rng):
    h = int(rng.integers(1, 4))
    a = rng.normal(size=(2, int(rng.integers(1, 3)), h, h))
    b = rng.normal(size=(2, int(rng.integers(1, 3)), h, h))
    return (lambda a, b: T.concat([a, b], axis=1)), [a, b]


def mse_case(rng):
    shape = (2, int(rng.integers(1, 4)), 3, 3)
    t = rng.normal(size=shape)
    return (lambda p: nn.mse_loss(p, t)), [rng.normal(size=shape)]


def bce_case(rng):
    shape = (2, 1, int(rng.integers(2, 5)), 3)
    t = (rng.random(shape) > 0.5).astype(float)
    return (lambda p: nn.bce_loss(p, t)), [rng.uniform(0.05, 0.95, size=shape)]


def ce_case(rng):
    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    t = np.eye(k)[rng.integers(0, k, size=n)]
    return (lambda z: nn.ce_loss(z, t)), [rng.normal(size=(n, k))]


CASES = {
    "conv2d": conv_case, "conv_transpose2d": convt_case, "max_pool2d": pool_case, "relu": relu_case,
    "sigmoid": sigmoid_case, "softmax": softmax_case, "linear": linear_case, "global_avg_pool": gap_case,
    "concat": concat_case, "mse": mse_case, "bce": bce_case, "ce": ce_case,
}


def check(fn, arrays, rng) -> float:
    """Largest elementwise relative error between backward() and central differences (float64)."""
    with nn.precision(np.float64):
        ts = [nn.Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(*ts)
        proj = rng.normal(size=out.shape)
        out.backward(proj)

        def plain(*arrs):
            return fn(*[nn.Tensor(a) for a in arrs]).data

        numeric = finite_difference(plain, [a.copy() for a in arrays], proj)
    return max(max_rel_error(t.grad, g) for t, g in zip(ts, numeric))
