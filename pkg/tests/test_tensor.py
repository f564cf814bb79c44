import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, mutually_broadcastable_shapes
from scipy.signal import correlate

from msif import tensor as T
from msif.gradcheck import check_gradients, numeric_grad, relative_error
from msif.tensor import NonFiniteError, NonScalarLossError, ShapeError, Tensor


def leaf(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    return Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)


def assert_grads(loss_fn, params, tol=1e-7):
    errs = check_gradients(loss_fn, [(str(i), p) for i, p in enumerate(params)])
    assert max(errs.values()) < tol, errs


# -- autodiff oracle: central differences ---------------------------------

@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_elementwise_broadcast_grads(rng, op):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, positive=True)
    fn = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}[op]
    assert_grads(lambda: T.tsum(fn(a, b) * fn(a, b)), [a, b])


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "relu", "prelu"])
def test_activation_grads(rng, kind):
    x = leaf(rng, 5, 3)
    x.data[np.abs(x.data) < 0.05] = 0.3  # keep away from kinks
    alpha = Tensor(0.25, requires_grad=True)
    params = [x, alpha] if kind == "prelu" else [x]
    assert_grads(lambda: T.tsum(T.activation(kind, x, alpha) ** 2), params)


def test_unary_grads(rng):
    x = leaf(rng, 4, positive=True)
    assert_grads(lambda: T.tsum(T.exp(x) + T.log(x) + T.sqrt(x) + x ** 3 - x), [x])


def test_reduction_and_shape_grads(rng):
    x = leaf(rng, 2, 3, 4)
    w = rng.standard_normal((4, 3, 2))

    def loss():
        y = T.transpose(x, (2, 1, 0)) * w
        z = T.reshape(y, (6, 4))
        return T.tsum(T.mean(z, axis=0) ** 2) + T.tsum(T.getitem(x, (0, slice(1, 3))) ** 2)
    assert_grads(loss, [x])


def test_take_accumulates_repeated_indices(rng):
    x = leaf(rng, 3, 2)
    y = T.take(x, [0, 0, 2, 0], axis=0)
    T.backward(T.tsum(y))
    np.testing.assert_array_equal(x.grad, [[3, 3], [0, 0], [1, 1]])


def test_concat_stack_softmax_grads(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 1)
    w = rng.standard_normal((2, 4))
    assert_grads(lambda: T.tsum(T.softmax(T.concat([a, b], axis=1)) * w), [a, b])
    c = leaf(rng, 2, 3)
    assert_grads(lambda: T.tsum(T.stack([a, c], axis=1) ** 2), [a, c])


def test_matmul_batched_broadcast_grads(rng):
    a, b = leaf(rng, 3, 2, 4), leaf(rng, 4, 5)
    assert_grads(lambda: T.tsum(T.matmul(a, b) ** 2), [a, b])


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_grads(rng, stride, pad):
    x, k, bias = leaf(rng, 2, 2, 6, 7), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    assert_grads(lambda: T.tsum(T.conv2d(x, k, stride, pad, bias) ** 2), [x, k, bias])


def test_conv2d_matches_scipy_correlate(rng):
    x, k = rng.standard_normal((2, 8, 9)), rng.standard_normal((3, 2, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(k)).data
    ref = np.stack([sum(correlate(x[c], k[o, c], mode="valid") for c in range(2)) for o in range(3)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_output_extent(rng):
    out = T.conv2d(Tensor(rng.random((4, 1, 32, 60))), Tensor(rng.random((8, 1, 3, 3))), stride=2, padding=1)
    assert out.shape == (4, 8, 16, 30)


# -- contract errors --------------------------------------------------

def test_broadcast_failure_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5,\)|\(5,\).*\(3, 4\)"):
        Tensor(np.zeros((3, 4))) + Tensor(np.zeros(5))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NonScalarLossError):
        T.backward(x * 2.0)


def test_division_by_zero_gives_inf_and_check_finite_flags_it():
    y = Tensor(1.0) / Tensor(0.0)
    assert np.isinf(y.data)
    with pytest.raises(NonFiniteError):
        T.check_finite(y)


# -- graph semantics --------------------------------------------------

def test_grads_accumulate_across_backward_calls():
    x = Tensor(2.0, requires_grad=True)
    T.backward(x * x)
    T.backward(x * x)
    assert x.grad == pytest.approx(8.0)


def test_shared_subexpression_visited_once():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    tape = T.backward(y + y)
    assert x.grad == pytest.approx(12.0)
    assert len(tape) == 2


def test_deep_chain_does_not_recurse():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    T.backward(y)
    assert x.grad == 1.0


def test_no_grad_records_nothing():
    x = Tensor(1.0, requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert y.is_leaf and not y.requires_grad
    assert T.grad_enabled()


def test_no_grad_is_thread_local():
    seen = []

    def worker():
        x = Tensor(1.0, requires_grad=True)
        seen.append((x * 2).requires_grad)
    with T.no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen == [True]


def test_constructor_copies_input():
    a = np.zeros(3)
    t = Tensor(a)
    t.data += 1
    assert not a.any()


# -- property tests ---------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(mutually_broadcastable_shapes(num_shapes=2, max_dims=3, max_side=4))
def test_broadcast_add_grad_sums_over_broadcast_axes(shapes):
    shape_a, shape_b = shapes.input_shapes
    a = Tensor(np.ones(shape_a), requires_grad=True)
    b = Tensor(np.ones(shape_b), requires_grad=True)
    out = a + b
    T.backward(T.tsum(out))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    assert a.grad.sum() == pytest.approx(out.size)
    assert b.grad.sum() == pytest.approx(out.size)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)))
def test_sigmoid_grad_matches_fd(x):
    t = Tensor(x, requires_grad=True)
    T.backward(T.tsum(T.sigmoid(t)))
    with T.no_grad():
        num = numeric_grad(lambda: T.tsum(T.sigmoid(t)), t)
    assert relative_error(t.grad, num).max() < 1e-6
