from __future__ import annotations

import math

import numpy as np
import pytest

from slotssm import ops
from slotssm.errors import LabelRangeError, ShapeError
from slotssm.gradcheck import COMPONENTS, GRADCHECK_TOL, OP_COMPONENTS, finite_diff_gradcheck, gradcheck_suite
from slotssm.tensor import Tensor, backward


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.normal(size=(3, 5)) * 50.0)
    out = ops.softmax(x, axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
    assert (out.data >= 0).all()


def test_layer_norm_zero_mean_unit_variance(rng, float64):
    x = Tensor(rng.normal(loc=3.0, scale=4.0, size=(4, 16)))
    out = ops.layer_norm(x).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-3)


def test_losses_at_known_points(float64):
    assert ops.bce_with_logits(Tensor(np.zeros(6)), np.full(6, 0.5)).item() == pytest.approx(math.log(2.0))
    logits = Tensor(np.zeros((2, 3, 7)))
    assert ops.cross_entropy(logits, np.zeros((2, 3), dtype=int)).item() == pytest.approx(math.log(7.0))
    assert ops.mse(Tensor(np.ones(4)), np.ones(4)).item() == 0.0


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(LabelRangeError):
        ops.cross_entropy(Tensor(np.zeros((2, 7))), np.array([0, 7]))
    with pytest.raises(ShapeError):
        ops.cross_entropy(Tensor(np.zeros((2, 7))), np.array([0, 1, 2]))


def test_causal_conv_only_sees_the_past(rng, float64):
    w = Tensor(rng.normal(size=(3, 2)))
    x = rng.normal(size=(6, 2))
    base = ops.causal_conv1d(Tensor(x), w).data
    x2 = x.copy()
    x2[4] += 10.0
    moved = ops.causal_conv1d(Tensor(x2), w).data
    np.testing.assert_array_equal(base[:4], moved[:4])
    assert not np.allclose(base[4:], moved[4:])


def test_causal_conv_history_matches_one_long_call(rng, float64):
    w = Tensor(rng.normal(size=(3, 2)))
    x = rng.normal(size=(7, 2))
    full = ops.causal_conv1d(Tensor(x), w).data
    tail = ops.causal_conv1d(Tensor(x[4:]), w, history=Tensor(x[2:4])).data
    np.testing.assert_allclose(tail, full[4:], atol=1e-12)


def test_conv_output_extents(rng):
    x = Tensor(rng.normal(size=(1, 8, 8, 2)))
    down = ops.conv2d(x, Tensor(rng.normal(size=(3, 3, 2, 4))), stride=2, padding=1)
    assert down.shape == (1, 4, 4, 4)
    up = ops.conv_transpose2d(down, Tensor(rng.normal(size=(5, 5, 4, 3))), stride=2, padding=2, output_padding=1)
    assert up.shape == (1, 8, 8, 3)


def test_conv_transpose_rejects_oversized_padding(rng):
    with pytest.raises(ShapeError):
        ops.conv_transpose2d(Tensor(rng.normal(size=(1, 1, 1, 1))), Tensor(rng.normal(size=(1, 1, 1, 1))), padding=1)


@pytest.mark.parametrize("steps,chunk", [(1, 4), (7, 4), (8, 4), (9, 4), (33, 256)])
def test_parallel_recurrence_matches_sequential(rng, float64, steps, chunk):
    a = rng.uniform(0.1, 0.99, size=(2, steps, 3, 2))
    b = rng.normal(size=(2, steps, 3, 2))
    h0 = rng.normal(size=(2, 3, 2))
    seq = ops.linear_recurrence(Tensor(a), Tensor(b), Tensor(h0), method="sequential").data
    par = ops.linear_recurrence(Tensor(a), Tensor(b), Tensor(h0), method="parallel", chunk=chunk).data
    np.testing.assert_allclose(par, seq, atol=1e-12)


def test_recurrence_gradient_is_the_same_for_both_methods(rng, float64):
    a0 = rng.uniform(0.2, 0.9, size=(6, 2, 2))
    b0 = rng.normal(size=(6, 2, 2))
    h00 = rng.normal(size=(2, 2))
    grads = {}
    for method in ("sequential", "parallel"):
        a, b, h0 = (Tensor(v, requires_grad=True) for v in (a0, b0, h00))
        backward(ops.linear_recurrence(a, b, h0, method=method, chunk=4).sum())
        grads[method] = (a.grad, b.grad, h0.grad)
    for got, want in zip(grads["parallel"], grads["sequential"]):
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_recurrence_gradient_matches_finite_differences(float64):
    rng = np.random.default_rng(3)
    a = Tensor(rng.uniform(0.2, 0.9, size=(9, 2, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(9, 2, 2)), requires_grad=True)
    h0 = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    weights = Tensor(rng.normal(size=(9, 2, 2)))
    err = finite_diff_gradcheck(lambda: (ops.linear_recurrence(a, b, h0, chunk=4) * weights).sum(), [a, b, h0])
    assert err < GRADCHECK_TOL


def test_matmul_and_broadcast_gradients(float64):
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    bias = Tensor(rng.normal(size=(5,)), requires_grad=True)
    err = finite_diff_gradcheck(lambda: ops.sum(ops.tanh(ops.linear(x, w, bias)) ** 2.0), [x, w, bias])
    assert err < GRADCHECK_TOL


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("name", OP_COMPONENTS)
def test_every_operator_passes_gradcheck_on_all_coordinates(name, seed):
    assert gradcheck_suite([name], seed=seed, max_coords=None)[name] < GRADCHECK_TOL


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("name", [n for n in COMPONENTS if n.startswith("nn.")])
def test_layers_pass_gradcheck(name, seed):
    assert gradcheck_suite([name], seed=seed, max_coords=6)[name] < GRADCHECK_TOL
