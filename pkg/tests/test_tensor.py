import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tradeslab import tensor as T
from tradeslab.errors import ContractError, DimensionError
from tradeslab.rng import Rng
from tradeslab.tensor import Tensor, backward

from conftest import central_diff, max_rel_err


def test_relu_values():
    assert T.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_log_softmax_symmetric():
    out = T.log_softmax(Tensor([0.0, 0.0])).data
    np.testing.assert_allclose(out, [-math.log(2), -math.log(2)], rtol=0, atol=1e-15)


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
    expected = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("op, args", [
    (T.matmul, (np.ones((2, 3)), np.ones((2, 3)))),
    (T.add, (np.ones((2, 3)), np.ones(2))),
    (T.sub, (np.ones(3), np.ones(2))),
    (T.mul, (np.ones(3), np.ones(4))),
])
def test_shape_mismatch_names_primitive(op, args):
    with pytest.raises(DimensionError, match=op.__name__):
        op(*[Tensor(a) for a in args])


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(T.sum(T.mul(x, x)))
    assert x.grad.tolist() == [2.0, 4.0]


def test_no_grad_for_frozen_leaf():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0, 4.0])
    backward(T.sum(T.mul(x, c)))
    assert c.grad is None
    assert x.grad.tolist() == [3.0, 4.0]


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(T.scale(x, 2.0))


def test_repeated_backward_accumulates():
    x = Tensor([0.5, -1.5, 2.0], requires_grad=True)
    w = Tensor(np.ones((3, 2)) * 0.3, requires_grad=True)
    loss = T.add(T.l2_norm(T.relu(T.matmul(Tensor(x.data[None, :]), w))), T.sum(T.mul(x, x)))
    backward(loss)
    first_w, first_x = w.grad.copy(), x.grad.copy()
    backward(loss)
    np.testing.assert_array_equal(w.grad, 2 * first_w)
    np.testing.assert_array_equal(x.grad, 2 * first_x)


def test_shared_subexpression_visited_once():
    x = Tensor([1.5], requires_grad=True)
    y = T.mul(x, x)
    z = T.sum(T.add(y, y))  # d/dx 2x^2 = 4x
    backward(z)
    assert x.grad.tolist() == [6.0]


def _unary_cases():
    return {
        "exp": lambda t: T.sum(T.exp(t)),
        "log": lambda t: T.sum(T.log(T.exp(t))),
        "relu": lambda t: T.sum(T.mul(T.relu(t), t)),
        "log_softmax": lambda t: T.sum(T.mul(T.log_softmax(t), Tensor(np.linspace(-1, 1, t.size).reshape(t.shape)))),
        "mean": lambda t: T.mean(T.mul(t, t)),
        "l1": lambda t: T.l1_norm(t),
        "l2": lambda t: T.l2_norm(t),
        "scale_sub": lambda t: T.sum(T.mul(T.sub(T.scale(t, 3.0), t), t)),
    }


@pytest.mark.parametrize("name", sorted(_unary_cases()))
def test_primitive_gradients_match_finite_differences(name):
    f = _unary_cases()[name]
    x0 = np.array([[0.7, -1.3, 0.4], [1.1, 0.25, -0.6]])
    t = Tensor(x0, requires_grad=True)
    backward(f(t))
    fd = central_diff(lambda a: f(Tensor(a)).item(), x0)
    assert max_rel_err(t.grad, fd) < 1e-4


def test_bias_add_and_matmul_gradients():
    rng = np.random.default_rng(3)
    a0, w0, b0 = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)

    def f(a, w, b):
        return T.sum(T.exp(T.scale(T.add(T.matmul(a, w), b), 0.5)))

    a, w, b = (Tensor(v, requires_grad=True) for v in (a0, w0, b0))
    backward(f(a, w, b))
    assert max_rel_err(a.grad, central_diff(lambda v: f(Tensor(v), Tensor(w0), Tensor(b0)).item(), a0)) < 1e-4
    assert max_rel_err(w.grad, central_diff(lambda v: f(Tensor(a0), Tensor(v), Tensor(b0)).item(), w0)) < 1e-4
    assert max_rel_err(b.grad, central_diff(lambda v: f(Tensor(a0), Tensor(w0), Tensor(v)).item(), b0)) < 1e-4


_BINARY = [T.add, T.sub, T.mul]
_UNARY = [T.exp, T.relu, T.log_softmax, lambda t: T.scale(t, -0.7), lambda t: T.log(T.exp(t))]


def _random_graph(seed, x):
    """Random composite of depth <= 5 over one 2x3 leaf."""
    rng = np.random.default_rng(seed)
    nodes = [x]
    for _ in range(int(rng.integers(1, 6))):
        if rng.random() < 0.5:
            op = _BINARY[int(rng.integers(len(_BINARY)))]
            a, b = (nodes[int(rng.integers(len(nodes)))] for _ in range(2))
            nodes.append(op(a, b))
        else:
            op = _UNARY[int(rng.integers(len(_UNARY)))]
            nodes.append(op(T.scale(nodes[-1], 0.5)))
    return T.sum(T.mul(nodes[-1], Tensor(np.linspace(0.3, 1.2, 6).reshape(2, 3))))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_random_composite_graphs_match_finite_differences(seed):
    x0 = np.random.default_rng(seed + 1).uniform(-1, 1, size=(2, 3))
    x = Tensor(x0, requires_grad=True)
    backward(_random_graph(seed, x))
    fd = central_diff(lambda a: _random_graph(seed, Tensor(a)).item(), x0)
    grad = x.grad if x.grad is not None else np.zeros_like(x0)
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-4


def test_topological_order_parents_first():
    x = Tensor([1.0], requires_grad=True)
    y = T.exp(x)
    z = T.sum(T.mul(y, x))
    order = T.topological_order(z)
    pos = {id(n): i for i, n in enumerate(order)}
    for n in order:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]


class TestSampling:
    def test_gaussian_zero_std_is_mean(self):
        assert np.all(T.sample_gaussian(Rng(1), (5, 4), mean=0.3, std=0.0).data == 0.3)

    def test_gaussian_deterministic(self):
        a = T.sample_gaussian(Rng(7), (100,), 0, 0.1).data
        b = T.sample_gaussian(Rng(7), (100,), 0, 0.1).data
        np.testing.assert_array_equal(a, b)

    def test_gaussian_negative_std_rejected(self):
        with pytest.raises(ContractError):
            T.sample_gaussian(Rng(0), (3,), 0.0, -0.1)

    def test_gaussian_moments(self):
        z = T.sample_gaussian(Rng(2024), (100_000,), 0.0, 0.1).data
        assert abs(z.mean()) < 0.002
        assert abs(z.std() - 0.1) < 0.002

    def test_rademacher_support_and_frequency(self):
        r = T.sample_rademacher(Rng(5), (100_000,)).data
        assert set(np.unique(r).tolist()) == {-1.0, 1.0}
        assert 0.49 <= (r > 0).mean() <= 0.51

    def test_rademacher_deterministic(self):
        np.testing.assert_array_equal(T.sample_rademacher(Rng(9), (64,)).data,
                                      T.sample_rademacher(Rng(9), (64,)).data)
