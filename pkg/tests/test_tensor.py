from __future__ import annotations

import numpy as np
import pytest

from slotssm import ops
from slotssm.errors import ConfigError, DomainError, GraphError, NonFiniteError
from slotssm.tensor import Graph, Tensor, backward, get_default_dtype, no_grad, precision, unbroadcast


def test_add_mul_gradients(float64):
    a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    b = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    backward((a * b + a).sum())
    np.testing.assert_allclose(a.grad, [5.0, 6.0, 7.0])
    np.testing.assert_allclose(b.grad, [1.0, 2.0, 3.0])


def test_broadcast_gradient_is_summed(float64):
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    bias = Tensor(np.zeros(4), requires_grad=True)
    backward((x + bias).sum())
    np.testing.assert_allclose(bias.grad, np.full(4, 3.0))
    assert unbroadcast(np.ones((2, 3, 4)), (1, 4)).tolist() == [[6.0] * 4]


def test_reused_tensor_accumulates(float64):
    x = Tensor([3.0], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_allclose(x.grad, [6.0])


def test_graph_consumed_once(float64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph():
        loss = (x * 2.0).sum()
        backward(loss)
        with pytest.raises(GraphError):
            backward(loss)


def test_non_scalar_loss_rejected(float64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError):
        backward(x * 2.0)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert y._node is None and not y.requires_grad


def test_non_finite_forward_names_op(float64):
    with pytest.raises(NonFiniteError) as info:
        ops.exp(Tensor([1000.0]))
    assert info.value.op == "exp"


def test_log_domain(float64):
    with pytest.raises(DomainError):
        ops.log(Tensor([0.0, 1.0]))


def test_precision_scope():
    assert get_default_dtype() == np.float32
    with precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(ConfigError):
        with precision("float16"):
            pass


def test_explicit_graph_scopes_recording(float64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        y = (x * x).sum()
    assert len(graph) == 2
    backward(y)
    assert graph.consumed and len(graph) == 0
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
