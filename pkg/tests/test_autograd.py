import threading

import numpy as np
import pytest

from components.autograd import (
    Tensor,
    broadcast_to,
    concat,
    grad_enabled,
    linear,
    minimum,
    no_grad,
    parameter,
    weight_norm,
    where,
)
from utils.errors import NonFiniteError


def numeric_gradient(f, arrays, index, h=1e-6):
    """Central differences of the scalar f(*arrays) with respect to arrays[index]."""
    base = arrays[index]
    grad = np.zeros_like(base)
    for position in np.ndindex(base.shape):
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[index][position] += h
        minus[index][position] -= h
        grad[position] = (f(*plus) - f(*minus)) / (2.0 * h)
    return grad


def check_gradients(op, *arrays, seed=0, rtol=1e-6, atol=1e-8):
    """Compare backward() against finite differences of sum(w * op(...))."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [parameter(a) for a in arrays]
    out = op(*leaves)
    weights = np.random.default_rng(seed).normal(size=out.shape)
    (out * weights).sum().backward()

    def scalar(*values):
        return float(np.sum(op(*[Tensor(v) for v in values]).data * weights))

    for index, leaf in enumerate(leaves):
        expected = numeric_gradient(scalar, arrays, index)
        np.testing.assert_allclose(leaf.grad, expected, rtol=rtol, atol=atol)


@pytest.fixture
def values():
    return np.random.default_rng(7).normal(size=(3, 4))


def test_arithmetic(values):
    other = values[::-1] + 3.0
    check_gradients(lambda a, b: a * b + a / b - b, values, other)
    check_gradients(lambda a: 2.0 - a * 3.0, values)
    check_gradients(lambda a: 1.0 / (a * a + 1.0), values)
    check_gradients(lambda a: (a * a + 0.5) ** 1.5, values)


def test_reflected_ops_with_arrays(values):
    weights = np.arange(12.0).reshape(3, 4)
    a = parameter(values)
    out = weights - a * weights
    assert isinstance(out, Tensor)
    out.sum().backward()
    np.testing.assert_array_equal(a.grad, -weights)


def test_elementwise_functions(values):
    check_gradients(lambda a: a.exp(), values)
    check_gradients(lambda a: (a * a + 1.0).log(), values)
    check_gradients(lambda a: (a * a + 1.0).sqrt(), values)
    check_gradients(lambda a: a.elu(), values)


def test_clip_blocks_gradient_outside():
    x = parameter(np.array([-2.0, 0.0, 2.0]))
    x.clip(-1.0, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_reductions_and_shapes(values):
    check_gradients(lambda a: a.sum(axis=0), values)
    check_gradients(lambda a: a.mean(axis=1, keepdims=True), values)
    check_gradients(lambda a: a.reshape(4, 3)[1:, :2], values)
    check_gradients(lambda a: a.softmax(axis=-1), values)


def test_broadcasting_accumulates(values):
    bias = np.array([0.5, -1.0, 2.0, 0.0])
    check_gradients(lambda a, b: a + b, values, bias)
    check_gradients(lambda b: broadcast_to(b, (3, 4)) * 2.0, bias)


def test_linear_with_batch_axes():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 5))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    check_gradients(linear, x, w, b)


def test_weight_norm():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(4, 3))
    g = rng.uniform(0.5, 2.0, size=4)
    check_gradients(weight_norm, v, g)
    w = weight_norm(Tensor(v), Tensor(g)).data
    np.testing.assert_allclose(np.linalg.norm(w, axis=1), g, rtol=1e-12)


def test_multi_input_ops(values):
    other = np.random.default_rng(3).normal(size=(3, 2))
    check_gradients(lambda a, b: concat([a, b], axis=-1), values, other)
    shifted = values + np.random.default_rng(4).normal(size=values.shape)
    check_gradients(minimum, values, shifted)
    mask = values > 0
    check_gradients(lambda a, b: where(mask, a, b), values, shifted)


def test_reused_node_gets_summed_gradient():
    x = parameter(np.array([3.0]))
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [12.0])


def test_non_finite_gradient_names_the_node():
    x = parameter(np.array([0.0, 1.0]), name="x")
    with pytest.raises(NonFiniteError) as info:
        x.sqrt().sum().backward()
    assert info.value.node == "x"


def test_no_grad_records_nothing():
    x = parameter(np.ones(3))
    with no_grad():
        y = x * 2.0
        assert not grad_enabled()
    assert grad_enabled()
    assert not y.requires_grad


def test_no_grad_is_per_thread():
    seen = []
    entered = threading.Event()
    release = threading.Event()

    def worker():
        with no_grad():
            entered.set()
            release.wait(5)

    thread = threading.Thread(target=worker)
    thread.start()
    entered.wait(5)
    seen.append(grad_enabled())
    release.set()
    thread.join()
    assert seen == [True]
