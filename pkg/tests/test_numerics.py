"""Reverse-mode tape, finite-difference checker and Adam."""
import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodloop import numerics as nx
from floodloop.numerics import AdamState, adam_step, grad_check

EPS = 1e-6
TOL = 1e-4


def _scalar(t):
    return nx.sum_all(nx.mul(t, nx.const(np.linspace(0.3, 1.7, t.value.size).reshape(t.shape))))


# ---------------------------------------------------------------------------
# forward examples


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 5))
    assert np.array_equal(nx.matmul(nx.const(a), nx.const(np.eye(5))).value, a)


def test_softmax_uniform_row():
    out = nx.softmax(nx.const(np.full((2, 4), 0.7))).value
    assert np.allclose(out, 0.25, atol=0, rtol=1e-15)


def test_glu_zero_gate(rng):
    x = rng.normal(size=(3, 4))
    out = nx.glu(nx.const(np.concatenate([x, np.zeros_like(x)], axis=-1))).value
    assert np.allclose(out, 0.5 * x, atol=1e-15)


def test_leaky_slope():
    out = nx.leaky_relu(nx.const(np.array([-2.0, 3.0]))).value
    assert np.array_equal(out, [-0.4, 3.0])


def test_shape_mismatch_reports_dims():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)|3.*4"):
        nx.matmul(nx.const(np.ones((2, 3))), nx.const(np.ones((4, 5))))
    with pytest.raises(ValueError):
        nx.add(nx.const(np.ones((2, 3))), nx.const(np.ones((3, 2))))


def test_masked_mse_only_masked(rng):
    pred = rng.normal(size=(2, 5))
    target = rng.normal(size=(2, 5))
    mask = np.zeros((2, 5), dtype=bool)
    mask[0, 1] = mask[1, 4] = True
    got = float(nx.masked_mse(nx.const(pred), target, mask).value.reshape(()))
    want = np.mean((pred - target)[mask] ** 2)
    assert math.isclose(got, want, rel_tol=1e-14)


# ---------------------------------------------------------------------------
# backward examples


def test_square_gradient():
    x = nx.param(np.array([[3.0]]))
    (g,) = nx.backward(nx.mul(x, x), [x])
    assert g[0, 0] == 6.0


def test_sum_of_product_gradient(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    A, B = nx.param(a), nx.param(b)
    ga, gb = nx.backward(nx.sum_all(nx.matmul(A, B)), [A, B])
    assert np.allclose(ga, np.ones((3, 2)) @ b.T, atol=1e-14)
    assert np.allclose(gb, a.T @ np.ones((3, 2)), atol=1e-14)


def test_unreachable_gradient_is_zero(rng):
    x, y = nx.param(rng.normal(size=(2, 2))), nx.param(rng.normal(size=(3,)))
    gx, gy = nx.backward(nx.sum_all(nx.tanh(x)), [x, y])
    assert gy.shape == (3,) and not gy.any()
    assert gx.any()


def test_backward_rejects_nonscalar():
    with pytest.raises(ValueError, match="scalar"):
        nx.backward(nx.param(np.ones((2, 2))))


def test_backward_deterministic(rng):
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))

    def run():
        A, B = nx.param(a), nx.param(b)
        loss = nx.sum_all(nx.softmax(nx.tanh(nx.matmul(A, B))))
        return [g.copy() for g in nx.backward(loss, [A, B])]

    g1, g2 = run(), run()
    assert all(np.array_equal(x, y) for x, y in zip(g1, g2))


# ---------------------------------------------------------------------------
# grad_check on every primitive


def test_grad_check_quadratic(rng):
    q = rng.normal(size=(4, 4))
    q = q @ q.T
    x0 = rng.normal(size=(4, 1))
    err = grad_check(lambda p: nx.matmul(nx.transpose(p[0], (1, 0)), nx.matmul(nx.const(q), p[0])), [x0])
    assert err < 1e-8


PRIMITIVES = {
    "add": (lambda p: _scalar(nx.add(p[0], p[1])), [(3, 4), (4,)]),
    "sub": (lambda p: _scalar(nx.sub(p[0], p[1])), [(3, 4), (3, 4)]),
    "mul": (lambda p: _scalar(nx.mul(p[0], p[1])), [(3, 4), (1, 4)]),
    "scale": (lambda p: _scalar(nx.scale(p[0], -2.5)), [(2, 3)]),
    "matmul": (lambda p: _scalar(nx.matmul(p[0], p[1])), [(3, 4), (4, 2)]),
    "matmul-batched": (lambda p: _scalar(nx.matmul(p[0], p[1])), [(2, 3, 4), (4, 5)]),
    "concat": (lambda p: _scalar(nx.concat([p[0], p[1]], axis=-1)), [(2, 3), (2, 2)]),
    "softmax": (lambda p: _scalar(nx.softmax(p[0])), [(3, 5)]),
    "softmax-masked": (
        lambda p: _scalar(nx.softmax(p[0], mask=np.array([[1, 0, 1], [1, 1, 0], [0, 1, 1]], bool))),
        [(3, 3)],
    ),
    "leaky_relu": (lambda p: _scalar(nx.leaky_relu(p[0])), [(4, 4)]),
    "elu": (lambda p: _scalar(nx.elu(p[0])), [(4, 4)]),
    "sigmoid": (lambda p: _scalar(nx.sigmoid(p[0])), [(3, 3)]),
    "tanh": (lambda p: _scalar(nx.tanh(p[0])), [(3, 3)]),
    "glu": (lambda p: _scalar(nx.glu(p[0])), [(3, 6)]),
    "reshape": (lambda p: _scalar(nx.reshape(p[0], (6, 2))), [(3, 4)]),
    "transpose": (lambda p: _scalar(nx.transpose(p[0], (2, 0, 1))), [(2, 3, 4)]),
    "getitem": (lambda p: _scalar(nx.getitem(p[0], (slice(None), slice(1, 3)))), [(3, 4)]),
    "broadcast_to": (lambda p: _scalar(nx.broadcast_to(p[0], (3, 2, 4))), [(2, 1)]),
    "mean-axis": (lambda p: _scalar(nx.mean(p[0], axis=1)), [(3, 4)]),
    "mse": (lambda p: nx.mse(p[0], np.full((2, 3), 0.3)), [(2, 3)]),
    "masked_mse": (lambda p: nx.masked_mse(p[0], np.zeros((2, 3)), np.eye(2, 3, dtype=bool)), [(2, 3)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_grad_check_primitive(name):
    fn, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = [rng.normal(size=s) for s in shapes]
    if name in ("leaky_relu", "elu"):
        params = [np.where(np.abs(p) < 1e-3, 0.1, p) for p in params]
    assert grad_check(fn, params, eps=EPS) < TOL


def test_grad_check_rejects_nonfinite():
    with pytest.raises(ValueError):
        grad_check(lambda p: nx.sum_all(nx.scale(p[0], math.inf)), [np.ones((1, 1))])
    with pytest.raises(ValueError):
        grad_check(lambda p: nx.sum_all(p[0]), [np.ones((1, 1))], eps=0.0)


def test_grad_check_detects_wrong_gradient():
    """A deliberately wrong backward rule must be caught."""

    def broken(p):
        out = nx.tanh(p[0])
        out._backward = lambda g: [g]  # claims d tanh/dx = 1
        return nx.sum_all(out)

    assert grad_check(broken, [np.array([[0.8, -1.1]])]) > 0.1


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 5),
    cols=st.integers(1, 6),
    scale=st.floats(0.1, 30.0),
    seed=st.integers(0, 2**31 - 1),
)
def test_softmax_rows_sum_to_one(rows, cols, scale, seed):
    x = np.random.default_rng(seed).normal(scale=scale, size=(rows, cols))
    out = nx.softmax(nx.const(x)).value
    assert np.all(out >= 0)
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) <= 1e-12)


@settings(max_examples=25, deadline=None)
@given(
    shape=st.tuples(st.integers(1, 4), st.integers(1, 4)),
    seed=st.integers(0, 2**31 - 1),
)
def test_composite_grad_check(shape, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=shape), rng.normal(size=(shape[1], 3))

    def fn(p):
        h = nx.tanh(nx.matmul(p[0], p[1]))
        return nx.mse(nx.sigmoid(nx.mul(h, h)), np.full((shape[0], 3), 0.2))

    assert grad_check(fn, [a, b], eps=EPS) < TOL


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_scalar():
    # bias-corrected first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    params = {"p": np.array([0.0])}
    adam_step(params, {"p": np.array([1.0])}, AdamState(lr=0.1))
    assert math.isclose(-params["p"][0], 0.1 / (1.0 + 1e-8), rel_tol=1e-12)


def test_adam_zero_gradient_fixed_point(rng):
    p0 = rng.normal(size=(3, 2))
    params = {"w": p0.copy()}
    state = AdamState(lr=0.05)
    adam_step(params, {"w": np.ones_like(p0)}, state)
    after_one = params["w"].copy()
    m_before = state.m["w"].copy()
    v_before = state.v["w"].copy()
    adam_step(params, {"w": np.zeros_like(p0)}, state)
    assert np.array_equal(params["w"], after_one)
    assert np.allclose(state.m["w"], 0.9 * m_before)
    assert np.allclose(state.v["w"], 0.999 * v_before)
    assert state.step == 2


def test_adam_identical_grads_identical_updates(rng):
    g = rng.normal(size=4)
    params = {"a": np.zeros(4), "b": np.zeros(4)}
    state = AdamState(lr=0.01)
    for _ in range(3):
        adam_step(params, {"a": g.copy(), "b": g.copy()}, state)
    assert np.array_equal(params["a"], params["b"])


def test_adam_rejects_nonfinite_with_name():
    with pytest.raises(ValueError, match="'w'"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, math.nan])}, AdamState())


def test_adam_minimises_quadratic():
    params = {"x": np.array([5.0, -3.0])}
    state = AdamState(lr=0.1)
    for _ in range(500):
        adam_step(params, {"x": 2 * params["x"]}, state)
    assert np.all(np.abs(params["x"]) < 1e-2)


@settings(max_examples=30, deadline=None)
@given(values=st.lists(st.floats(-10, 10), min_size=1, max_size=6), steps=st.integers(0, 3))
def test_adam_zero_gradient_never_moves(values, steps):
    p = np.array(values)
    params = {"p": p.copy()}
    state = AdamState()
    for _ in range(steps):
        adam_step(params, {"p": np.ones_like(p)}, state)
    snapshot = params["p"].copy()
    adam_step(params, {"p": np.zeros_like(p)}, state)
    assert np.array_equal(params["p"], snapshot)
