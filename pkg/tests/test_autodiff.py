import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gadgetforge.autodiff import (
    AdaMax,
    Adam,
    Tensor,
    add,
    backward,
    bce_clamp_events,
    bce_loss,
    concat,
    conv1d,
    current_tape,
    dropout,
    gather,
    grad_check,
    matmul,
    mul,
    no_grad,
    pad_axis,
    reduce_mean,
    reduce_sum,
    reset_bce_clamp_events,
    reshape,
    sigmoid,
    slice_,
    softmax,
    sub,
    tanh,
    transpose,
)
from gadgetforge.errors import InvalidProbability, NonScalarLoss, ShapeMismatch

# Each case: (input shapes, f(*tensors) -> Tensor of any shape). The test
# reduces the output against a fixed random weight so every output entry
# carries a distinct gradient.
CASES = {
    "add": ([(3, 4), (4,)], lambda a, b: add(a, b)),
    "sub": ([(2, 3, 4), (3, 1)], lambda a, b: sub(a, b)),
    "mul": ([(3, 4), (3, 4)], lambda a, b: mul(a, b)),
    "mul_self": ([(5,)], lambda a: mul(a, a)),
    "matmul": ([(3, 5), (5, 2)], lambda a, b: matmul(a, b)),
    "matmul_batched": ([(2, 3, 5), (5, 4)], lambda a, b: matmul(a, b)),
    "concat": ([(2, 3), (2, 2)], lambda a, b: concat([a, b], axis=-1)),
    "slice": ([(4, 5)], lambda a: slice_(a, (slice(1, 3), slice(None, None, 2)))),
    "gather": ([(6, 3)], lambda t: gather(t, np.array([[0, 2, 2], [5, 1, 0]]))),
    "reshape": ([(2, 6)], lambda a: reshape(a, (3, 4))),
    "transpose": ([(2, 3, 4)], lambda a: transpose(a, (1, 0, 2))),
    "pad": ([(2, 3, 2)], lambda a: pad_axis(a, 1, 2, 1)),
    "reduce_sum": ([(3, 4)], lambda a: reduce_sum(a, axis=0)),
    "reduce_mean": ([(2, 3, 4)], lambda a: reduce_mean(a, axis=1, keepdims=True)),
    "sigmoid": ([(3, 4)], lambda a: sigmoid(a)),
    "tanh": ([(3, 4)], lambda a: tanh(a)),
    "softmax": ([(2, 3, 5)], lambda a: softmax(a)),
    "softmax_masked": ([(2, 5)], lambda a: softmax(a, mask=np.array([[1, 1, 0, 1, 0], [1, 0, 0, 0, 0]]))),
    "conv1d": ([(2, 7, 3), (3, 3, 4)], lambda x, w: conv1d(x, w)),
    "conv1d_k5_unbatched": ([(6, 2), (5, 2, 3)], lambda x, w: conv1d(x, w)),
    "dropout": ([(4, 5)], lambda a: dropout(a, 0.5, np.random.default_rng(9))),
    "bce": ([(6,)], lambda a: bce_loss(sigmoid(a), np.array([0, 1, 1, 0, 1, 0.0]))),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_grad_check_each_op_100_points(name):
    shapes, f = CASES[name]
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        xs = [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
        with no_grad():
            out_shape = f(*xs).shape
        weight = rng.normal(size=out_shape)

        def loss(*ts):
            return reduce_sum(mul(f(*ts), weight))

        worst = max(worst, grad_check(loss, xs))
    assert worst < 1e-4, worst


def test_bce_of_sigmoid_affine():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(scale=0.3, size=(4, 1)), requires_grad=True)
    x = Tensor(rng.normal(scale=0.3, size=(8, 4)), requires_grad=True)
    y = (rng.random((8, 1)) < 0.5).astype(float)
    assert grad_check(lambda w, x: bce_loss(sigmoid(matmul(x, w)), y), [w, x]) < 1e-4


def test_constant_function_zero_gradients():
    x = Tensor(np.ones(3), requires_grad=True)
    g = backward(reduce_sum(add(mul(x, 0.0), 2.0)), wrt=[x])
    assert np.array_equal(g[0], np.zeros(3))
    assert grad_check(lambda x: reduce_sum(mul(x, 0.0)), x) == 0.0


def test_forward_examples():
    assert sigmoid(Tensor(0.0)).item() == 0.5
    np.testing.assert_array_equal(softmax(Tensor(np.full(4, 3.0))).data, np.full(4, 0.25))
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[1.0], [0.0], [-1.0]])
    out = matmul(a, b)
    assert out.shape == (2, 1) and out.data.tolist() == [[-2.0], [-2.0]]


def test_backward_examples():
    x = Tensor(3.0, requires_grad=True)
    backward(mul(x, x))
    assert x.grad == 6.0
    x = Tensor(0.0, requires_grad=True)
    backward(sigmoid(mul(x, 2.0)))
    assert x.grad == 0.5
    x = Tensor(1.0, requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    gx, gu = backward(mul(x, 4.0), wrt=[x, unused])
    assert gx == 4.0 and not gu.any()


def test_fan_out_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = add(mul(x, 3.0), mul(x, x))
    backward(reduce_sum(y))
    np.testing.assert_array_equal(x.grad, 3.0 + 2 * x.data)
    # a second pass sums into .grad
    backward(reduce_sum(mul(x, 1.0)))
    np.testing.assert_array_equal(x.grad, 4.0 + 2 * x.data)


def test_tape_topological_and_cleared():
    x = Tensor(np.ones(2), requires_grad=True)
    y = reduce_sum(tanh(mul(x, 2.0)))
    nodes = current_tape().nodes
    assert [n.op for n in nodes][-3:] == ["mul", "tanh", "reduce_sum"]
    assert [n.id for n in nodes] == list(range(len(nodes)))
    backward(y)
    assert current_tape().nodes == []


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = mul(x, 2.0)
    assert y.node is None and not y.requires_grad


def test_errors():
    with pytest.raises(NonScalarLoss):
        backward(mul(Tensor(np.ones(2), requires_grad=True), 2.0))
    with pytest.raises(ShapeMismatch):
        add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeMismatch):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2, 1))))
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((1, 1, 1, 1)))
    with pytest.raises(InvalidProbability):
        bce_loss(Tensor([1.5]), [1.0])
    with pytest.raises(ValueError):
        dropout(Tensor(np.ones(2)), 1.0)
    current_tape().clear()


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_softmax_rows_and_bce_nonnegative(seed):
    rng = np.random.default_rng(seed)
    s = softmax(Tensor(rng.normal(scale=5, size=(3, 4, 7)))).data
    assert np.all(np.abs(s.sum(-1) - 1.0) <= 1e-12)
    p = Tensor(rng.random(10))
    assert bce_loss(p, (rng.random(10) < 0.5).astype(float)).item() >= 0.0


@pytest.mark.parametrize("k,length", [(1, 1), (3, 3), (3, 10), (5, 9)])
def test_conv_all_ones_interior(k, length):
    y = conv1d(Tensor(np.ones((length, 1))), Tensor(np.ones((k, 1, 1)))).data[:, 0]
    half = k // 2
    assert y.shape == (length,)
    assert np.all(y[half:length - half] == k)
    if length > half:
        assert y[0] == half + 1  # zero padding drops the taps left of the edge


def test_dropout_modes():
    x = Tensor(np.ones((200, 200)))
    assert dropout(x, 0.5, train=False) is x
    y = dropout(x, 0.5, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.02
    a = dropout(x, 0.3, np.random.default_rng(4)).data
    b = dropout(x, 0.3, np.random.default_rng(4)).data
    assert np.array_equal(a, b)


def test_bce_clamp_counted():
    reset_bce_clamp_events()
    p = Tensor(np.array([0.0, 0.5, 1.0]), requires_grad=True)
    loss = bce_loss(p, np.array([0.0, 1.0, 1.0]))
    assert np.isfinite(loss.item()) and bce_clamp_events() == 2
    backward(loss)
    assert p.grad[0] == 0.0 and p.grad[2] == 0.0 and p.grad[1] != 0.0


def test_failing_grad_check_writes_trace(tmp_path):
    from gadgetforge.autodiff import make_op

    def wrong_square(a):
        return make_op("wrong", (a,), a.data ** 2, lambda g: (g * a.data,))  # missing factor 2

    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    path = tmp_path / "trace.json"
    err = grad_check(lambda x: reduce_sum(wrong_square(x)), x, trace_path=path)
    assert err > 0.1
    dump = json.loads(path.read_text())
    assert [op["op"] for op in dump["ops"]] == ["wrong", "reduce_sum"]


def _adamax_reference(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    x, m, u = list(x0), [0.0] * len(x0), [0.0] * len(x0)
    for t, g in enumerate(grads, 1):
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            u[i] = max(b2 * u[i], abs(g[i]))
            x[i] -= lr / (1 - b1 ** t) * m[i] / (u[i] + eps)
    return x


def test_adamax_matches_reference():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(6, 3))
    p = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    opt = AdaMax([p], lr=0.01)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    np.testing.assert_allclose(p.data, _adamax_reference([0.5, -1.0, 2.0], grads.tolist(), 0.01), atol=1e-14)


@pytest.mark.parametrize("opt_cls", [AdaMax, Adam])
def test_optimizers_minimize_quadratic(opt_cls):
    p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = opt_cls([p], lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        backward(reduce_sum(mul(p, p)))
        opt.step()
    assert np.all(np.abs(p.data) < 0.05)
