import math

import numpy as np
import pytest

from microchar import nn
from microchar.errors import InvalidSpec, NoCheckpoint, ShapeMismatch
from microchar.nn import checkpoint
from microchar.nn import tensor as T

import gradcases
from oracles import naive_conv


def test_conv_sum_and_identity():
    out = nn.conv2d(nn.Tensor(np.ones((1, 1, 3, 3))), nn.Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1) and out.item() == 9
    x = np.random.default_rng(0).normal(size=(1, 1, 5, 5)).astype(np.float32)
    same = nn.conv2d(nn.Tensor(x), nn.Tensor(np.ones((1, 1, 1, 1))), nn.Tensor(np.zeros(1)))
    np.testing.assert_array_equal(same.data, x)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 2, 5)])
def test_conv_matches_naive(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad)
    h = 9 if stride == 2 else 8
    x, w, b = rng.normal(size=(2, 3, h, h)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
    with nn.precision(np.float64):
        out = nn.conv2d(nn.Tensor(x), nn.Tensor(w), nn.Tensor(b), stride, pad).data
    assert np.abs(out - naive_conv(x, w, b, stride, pad)).max() < 1e-6


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        nn.conv2d(nn.Tensor(np.ones((1, 2, 5, 5))), nn.Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeMismatch):
        nn.conv2d(nn.Tensor(np.ones((1, 1, 6, 6))), nn.Tensor(np.ones((1, 1, 3, 3))), stride=2, padding=1)


def test_softmax_uniform_and_convt_shape():
    np.testing.assert_allclose(nn.softmax(nn.Tensor(np.zeros((1, 3))), axis=1).data, [[1 / 3] * 3], rtol=1e-6)
    out = nn.conv_transpose2d(nn.Tensor(np.ones((1, 1, 8, 8))), nn.Tensor(np.ones((1, 5, 2, 2))))
    assert out.shape == (1, 5, 16, 16)


def test_maxpool_tie_goes_to_first():
    x = nn.Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    nn.max_pool2d(x).backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_losses_analytic():
    x = nn.Tensor(np.array([0.2, 0.7]))
    assert nn.mse_loss(x, np.array([0.2, 0.7])).item() == 0
    assert nn.bce_loss(nn.Tensor(np.array([0.5])), np.array([1.0])).item() == pytest.approx(math.log(2), rel=1e-6)
    assert nn.ce_loss(nn.Tensor(np.zeros((1, 4))), np.eye(4)[:1]).item() == pytest.approx(math.log(4), rel=1e-6)
    with pytest.raises(ShapeMismatch):
        nn.mse_loss(x, np.zeros(3))
    assert nn.loss("mse", x, np.zeros(2)).item() == pytest.approx(0.265, rel=1e-6)


def test_bce_saturated_prediction_is_finite():
    p = nn.Tensor(np.array([0.0, 1.0]), requires_grad=True)
    out = nn.bce_loss(p, np.array([1.0, 0.0]))
    out.backward()
    assert np.isfinite(out.item()) and np.isfinite(p.grad).all()


@pytest.mark.parametrize("op", sorted(gradcases.CASES))
def test_gradients(op):
    rng = np.random.default_rng(hash(op) % 2**32)
    for _ in range(3):
        fn, arrays = gradcases.CASES[op](rng)
        assert gradcases.check(fn, arrays, rng) < 1e-4


def test_backward_accumulates_over_reuse():
    x = nn.Tensor(np.array([2.0]), requires_grad=True)
    y = nn.concat([x, x], axis=0)
    y.backward(np.array([1.0, 3.0]))
    assert x.grad.tolist() == [4.0]


def test_no_grad_builds_no_tape():
    x = nn.Tensor(np.ones((1, 2)), requires_grad=True)
    with nn.no_grad():
        y = nn.relu(x)
    assert not y.requires_grad


def test_adam_examples():
    w = np.array([1.0])
    st = nn.AdamState(lr=0.1)
    nn.adam_step([w], [2 * w], st)
    assert w[0] == pytest.approx(0.9, abs=1e-6)
    nn.adam_step([w], [None], st)
    assert st.step == 2
    w2 = np.array([1.0, -2.0])
    st2 = nn.AdamState(lr=0.1)
    nn.adam_step([w2], [np.zeros(2)], st2)
    assert w2.tolist() == [1.0, -2.0] and st2.step == 1


def test_adam_converges_on_quadratic():
    w = np.array([3.0, -1.5])
    scale = np.array([1.0, 10.0])
    st = nn.AdamState(lr=0.05)
    for _ in range(600):
        nn.adam_step([w], [2 * scale * w], st)
    assert np.linalg.norm(w) < 1e-3


def test_count_params_single_conv():
    assert nn.count_params(nn.Conv2d(1, 8, 3, np.random.default_rng(0))) == 80


def test_even_kernel_rejected():
    with pytest.raises(InvalidSpec):
        nn.Conv2d(1, 1, 4, np.random.default_rng(0))


class _Tiny(nn.Module):
    def __init__(self, seed):
        rng = np.random.default_rng(seed)
        self.convs = [nn.Conv2d(1, 2, 3, rng), nn.Conv2d(2, 1, 1, rng)]
        self.fc = nn.Linear(4, 2, rng)

    def forward(self, x):
        return self.convs[1](nn.relu(self.convs[0](x)))


def test_named_parameters_order():
    names = [n for n, _ in _Tiny(0).named_parameters()]
    assert names == ["convs.0.weight", "convs.0.bias", "convs.1.weight", "convs.1.bias", "fc.weight", "fc.bias"]


def test_checkpoint_roundtrip(tmp_path):
    a, b = _Tiny(0), _Tiny(1)
    p = checkpoint.save(tmp_path / "t.ckpt", a, {"kind": "tiny"}, {"note": 1})
    arch, arrays = checkpoint.read(p)
    assert arch == {"kind": "tiny"} and checkpoint.sidecar(p).is_file()
    checkpoint.load_into(b, arrays)
    for (_, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(x.data, y.data)
    checkpoint.save(tmp_path / "u.ckpt", b, {"kind": "tiny"})
    assert (tmp_path / "t.ckpt").read_bytes() == (tmp_path / "u.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(NoCheckpoint):
        checkpoint.read(tmp_path / "missing.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(NoCheckpoint):
        checkpoint.read(tmp_path / "bad.ckpt")
    p = checkpoint.save(tmp_path / "t.ckpt", _Tiny(0), {})
    (tmp_path / "cut.ckpt").write_bytes(p.read_bytes()[:-4])
    with pytest.raises(NoCheckpoint):
        checkpoint.read(tmp_path / "cut.ckpt")


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 3)).astype(np.float32)
    y = (x @ np.array([[1.0], [-2.0], [0.5]])).astype(np.float32)
    fc = nn.Linear(3, 1, rng)
    opt = nn.Adam(fc.parameters(), lr=0.05)
    first = None
    for _ in range(200):
        opt.zero_grad()
        loss = nn.mse_loss(fc(nn.Tensor(x)), y)
        first = first if first is not None else loss.item()
        loss.backward()
        opt.step()
    assert loss.item() < 1e-3 * first
