import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agdnet.errors import ContractError, DimensionError, TapeStateError
from agdnet.tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat_channels,
    depthwise_conv3x3,
    mean_all,
    no_grad,
    pointwise_conv,
    relu,
    scale,
    sub,
    sum_abs,
    sum_sq,
)


def loop_pointwise(x, w):
    c, h, wd = x.shape
    out = np.zeros((w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for m in range(h):
            for n in range(wd):
                for i in range(c):
                    out[o, m, n] += w[o, i] * x[i, m, n]
    return out


def loop_depthwise(x, w):
    c, h, wd = x.shape
    out = np.zeros_like(x)
    for ch in range(c):
        for m in range(h):
            for n in range(wd):
                for a in range(3):
                    for b in range(3):
                        mm, nn = m + a - 1, n + b - 1
                        if 0 <= mm < h and 0 <= nn < wd:
                            out[ch, m, n] += w[ch, a, b] * x[ch, mm, nn]
    return out


def test_pointwise_identity_and_sum():
    x = Tensor([[[3.0]], [[4.0]]])
    assert np.array_equal(pointwise_conv(x, Tensor(np.eye(2))).data, [[[3.0]], [[4.0]]])
    assert np.array_equal(pointwise_conv(x, Tensor([[1.0, 1.0]])).data, [[[7.0]]])


def test_pointwise_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(4, 5, 5)), rng.normal(size=(3, 4)), rng.normal(size=3)
    np.testing.assert_allclose(pointwise_conv(Tensor(x), Tensor(w)).data, loop_pointwise(x, w), atol=1e-12)
    np.testing.assert_allclose(pointwise_conv(Tensor(x), Tensor(w), Tensor(b)).data,
                               loop_pointwise(x, w) + b[:, None, None], atol=1e-12)


def test_pointwise_shape_errors():
    with pytest.raises(DimensionError):
        pointwise_conv(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((1, 3))))
    with pytest.raises(DimensionError):
        pointwise_conv(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((1, 2))), Tensor(np.zeros(2)))


def test_depthwise_delta_and_box():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4, 5))
    delta = np.zeros((3, 3, 3))
    delta[:, 1, 1] = 1.0
    assert np.array_equal(depthwise_conv3x3(Tensor(x), Tensor(delta)).data, x)
    box = depthwise_conv3x3(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 3, 3)))).data
    assert box[0, 1, 1] == 9.0
    assert box[0, 0, 0] == 4.0 and box[0, 2, 2] == 4.0


def test_depthwise_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(3, 6, 7)), rng.normal(size=(3, 3, 3))
    np.testing.assert_allclose(depthwise_conv3x3(Tensor(x), Tensor(w)).data, loop_depthwise(x, w), atol=1e-12)


def test_depthwise_channel_mismatch():
    with pytest.raises(DimensionError):
        depthwise_conv3x3(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((3, 3, 3))))


def test_depthwise_never_mixes_channels():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(4, 5, 5)), rng.normal(size=(4, 3, 3))
    base = depthwise_conv3x3(Tensor(x), Tensor(w)).data
    x2 = x.copy()
    x2[2] += rng.normal(size=(5, 5))
    changed = np.abs(depthwise_conv3x3(Tensor(x2), Tensor(w)).data - base).reshape(4, -1).max(axis=1)
    assert changed[2] > 0
    assert np.all(changed[[0, 1, 3]] == 0)


def test_elementwise_examples():
    assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert sum_abs(Tensor([[1.0, -2.0], [0.0, 3.0]])).item() == 6.0
    a, b = Tensor(np.ones((2, 4, 4))), Tensor(np.zeros((3, 4, 4)))
    assert concat_channels([a, b]).shape == (5, 4, 4)
    with pytest.raises(DimensionError):
        concat_channels([a, Tensor(np.zeros((1, 3, 4)))])
    with pytest.raises(DimensionError):
        add(a, b)
    with pytest.raises(DimensionError):
        sub(a, b)


def test_relu_subgradient_zero_at_zero():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    backward(mean_all(relu(x)))
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0 / 3.0])


def test_concat_backward_partitions():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
    backward(sum_sq(concat_channels([a, b])))
    np.testing.assert_array_equal(a.grad, 2 * a.data)
    np.testing.assert_array_equal(b.grad, 2 * b.data)


def test_quadratic_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(sum_sq(x))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_shared_weight_accumulates():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(3, 4, 4)))

    def f(w):
        return sum_sq(pointwise_conv(x, w))

    def g(w):
        return sum_abs(pointwise_conv(relu(x), w))

    w_start = rng.normal(size=(2, 3))
    w1, w2, w3 = (Tensor(w_start, requires_grad=True) for _ in range(3))
    backward(f(w1))
    backward(g(w2))
    backward(add(f(w3), g(w3)))
    np.testing.assert_array_equal(w3.grad, w1.grad + w2.grad)


def test_two_stage_sharing_sum_of_single_uses():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(3, 3, 3)))
    wd = rng.normal(size=(3, 3))
    shared = Tensor(wd, requires_grad=True)
    backward(sum_sq(pointwise_conv(pointwise_conv(x, shared), shared)))
    first = Tensor(wd, requires_grad=True)
    backward(sum_sq(pointwise_conv(pointwise_conv(x, first), Tensor(wd))))
    second = Tensor(wd, requires_grad=True)
    backward(sum_sq(pointwise_conv(pointwise_conv(x, Tensor(wd)), second)))
    np.testing.assert_allclose(shared.grad, first.grad + second.grad, rtol=1e-13, atol=1e-13)


def test_backward_errors():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(scale(x, 2.0))
    loss = sum_sq(x)
    backward(loss)
    with pytest.raises(TapeStateError):
        backward(loss)
    with pytest.raises(TapeStateError):
        backward(sum_sq(Tensor(np.ones(2))))


def test_tape_topological_order():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    a = relu(x)
    b = scale(a, 2.0)
    loss = add(sum_sq(a), sum_sq(b))
    tape = Tape.record(loss)
    pos = {id(t): i for i, t in enumerate(tape.outputs)}
    for t in tape.outputs:
        for inp in t._node.inputs:
            if inp._node is not None:
                assert pos[id(inp)] < pos[id(t)]


def test_no_grad_records_nothing():
    w = Tensor(np.ones((1, 1)), requires_grad=True)
    with no_grad():
        out = pointwise_conv(Tensor(np.ones((1, 2, 2))), w)
    assert out.is_leaf and not out.requires_grad


def test_determinism():
    rng = np.random.default_rng(8)
    x, w = rng.normal(size=(5, 6, 6)), rng.normal(size=(5, 3, 3))
    a = depthwise_conv3x3(Tensor(x), Tensor(w)).data
    b = depthwise_conv3x3(Tensor(x), Tensor(w)).data
    assert a.tobytes() == b.tobytes()


@settings(max_examples=40, deadline=None)
@given(c=st.integers(1, 6), h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_depthwise_adjoint_identity(c, h, w, seed):
    # <conv(x), g> == <x, conv^T(g)> and == <W, grad_W>
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(c, h, w)), requires_grad=True)
    wt = Tensor(rng.normal(size=(c, 3, 3)), requires_grad=True)
    g = rng.normal(size=(c, h, w))
    out = depthwise_conv3x3(x, wt)
    inner = float((out.data * g).sum())
    gx, gw = out._node.backward_fn(g)
    assert np.isclose(inner, float((x.data * gx).sum()), rtol=1e-10, atol=1e-10)
    assert np.isclose(inner, float((wt.data * gw).sum()), rtol=1e-10, atol=1e-10)
