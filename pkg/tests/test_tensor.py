import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from somoformer import kernels
from somoformer import tensor as tn
from somoformer.gradcheck import grad_check, grad_check_report
from somoformer.optim import AdamState, adam_step
from somoformer.tensor import ShapeError, Tape, Tensor, backward


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def triple_loop_matmul(a, b):
    p, q = a.shape
    r = b.shape[1]
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            s = 0.0
            for k in range(q):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    m = np.array([[1.5, -2.0], [3.0, 4.25]])
    assert np.array_equal(tn.matmul(np.eye(2), m).data, m)


def test_matmul_inner_product():
    assert tn.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(tn.matmul(a, b).data, triple_loop_matmul(a, b), rtol=0, atol=1e-14)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        tn.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_matmul_batch_broadcast():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(5, 6))
    out = tn.matmul(a, b).data
    np.testing.assert_allclose(out[1, 2], a[1, 2] @ b)


# ---------------------------------------------------------------- masked softmax

def test_softmax_symmetric():
    p = tn.masked_softmax([[0.0, 0.0]], [True, True]).data
    assert p.tolist() == [[0.5, 0.5]]


def test_softmax_single_survivor():
    p = tn.masked_softmax([[5.0, -1e9]], [True, False]).data
    assert p.tolist() == [[1.0, 0.0]]


def test_softmax_matches_exp_normalize():
    s = np.array([[1.0, 2.0, 3.0]])
    e = np.exp(s)
    np.testing.assert_allclose(tn.masked_softmax(s, [True] * 3).data, e / e.sum(), rtol=0, atol=1e-12)


def test_softmax_all_masked_row_raises():
    with pytest.raises(ValueError, match="no valid keys"):
        tn.masked_softmax(np.zeros((2, 3)), [False, False, False])


def test_softmax_per_batch_mask():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(2, 3, 4, 4))
    mask = np.array([[True, True, False, True], [False, True, True, False]])
    p = tn.masked_softmax(s, mask).data
    assert np.all(p[0, ..., 2] == 0.0) and np.all(p[1, ..., [0, 3]] == 0.0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_softmax_rows_are_distributions(k, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(scale=20.0, size=(3, k))
    mask = rng.random(k) < 0.6
    mask[rng.integers(k)] = True
    p = tn.masked_softmax(s, mask).data
    assert np.all(p[:, ~mask] == 0.0)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-12)


# ---------------------------------------------------------------- layer norm

def test_layer_norm_constant_vector_collapses():
    y = tn.layer_norm(np.full((1, 5), 3.0), np.ones(5), np.zeros(5), 1e-5).data
    assert np.all(y == 0.0)


def test_layer_norm_already_normalized():
    y = tn.layer_norm([[1.0, -1.0]], np.ones(2), np.zeros(2), 1e-12).data
    np.testing.assert_allclose(y, [[1.0, -1.0]], atol=1e-9)


def test_layer_norm_matches_explicit_formula():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 7))
    g, b = rng.normal(size=7), rng.normal(size=7)
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    expect = (x - mu) / np.sqrt(var + 1e-5) * g + b
    np.testing.assert_allclose(tn.layer_norm(x, g, b, 1e-5).data, expect, rtol=0, atol=1e-9)


def test_layer_norm_moments():
    rng = np.random.default_rng(6)
    x = rng.normal(loc=3.0, scale=2.0, size=(10, 32))
    y = tn.layer_norm(x, np.ones(32), np.zeros(32), 1e-12).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = param(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = tn.sum(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = param([1.0, 2.0])
    with Tape() as tape:
        loss = tn.sum(tn.mul(x, x))
    backward(loss, tape)
    assert x.grad.tolist() == [2.0, 4.0]


def test_backward_accumulates_until_zeroed():
    x = param([1.0, 2.0])
    for _ in range(2):
        with Tape() as tape:
            loss = tn.sum(tn.mul(x, x))
        backward(loss, tape)
    assert x.grad.tolist() == [4.0, 8.0]
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = param([1.0, 2.0])
    with Tape() as tape:
        y = tn.mul(x, x)
    with pytest.raises(ShapeError, match="scalar"):
        backward(y, tape)


def test_no_tape_means_no_recording():
    x = param([1.0])
    y = tn.mul(x, x)
    assert not y.requires_grad


def _fd_check(fn, inputs, h=1e-5):
    """Relative error between tape gradients and central differences for ``fn(*inputs)``."""
    params = {str(i): t for i, t in enumerate(inputs)}
    return grad_check(lambda: fn(*inputs), params, h)


@pytest.mark.parametrize("op", ["matmul", "matmul_batched", "add_bias", "layer_norm", "softmax", "gelu",
                                "take_rows", "concat", "transpose", "scale_sub", "wss"])
def test_op_gradients(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    r = lambda *s: param(rng.normal(size=s))  # noqa: E731
    proj = rng.normal(size=(3, 4, 5))
    w = lambda y: tn.weighted_sum_squares(y, 1.0)  # noqa: E731
    if op == "matmul":
        err = _fd_check(lambda a, b: w(tn.matmul(a, b)), [r(3, 4), r(4, 2)])
    elif op == "matmul_batched":
        err = _fd_check(lambda a, b: w(tn.matmul(a, b)), [r(2, 3, 4), r(2, 4, 2)])
    elif op == "add_bias":
        err = _fd_check(lambda a, b: w(tn.add_bias(a, b)), [r(3, 4), r(4)])
    elif op == "layer_norm":
        err = _fd_check(lambda x, g, b: w(tn.mul(tn.layer_norm(x, g, b), Tensor(proj[:, :, :4]))),
                        [r(3, 4, 4), r(4), r(4)])
    elif op == "softmax":
        mask = np.array([True, False, True, True, True])
        err = _fd_check(lambda s: w(tn.mul(tn.masked_softmax(s, mask), Tensor(proj))), [r(3, 4, 5)])
    elif op == "gelu":
        err = _fd_check(lambda x: w(tn.gelu(x)), [r(4, 6)])
    elif op == "take_rows":
        idx = np.array([[0, 2, 2], [1, 0, 3]])
        err = _fd_check(lambda t: w(tn.take_rows(t, idx)), [r(4, 3)])
    elif op == "concat":
        err = _fd_check(lambda a, b: w(tn.mul(tn.concat_last(a, b), Tensor(proj[:2, :4, :5]))), [r(2, 4, 3), r(2, 4, 2)])
    elif op == "transpose":
        err = _fd_check(lambda a: w(tn.mul(tn.transpose(a, (2, 0, 1)), Tensor(proj))), [r(4, 5, 3)])
    elif op == "scale_sub":
        err = _fd_check(lambda a, b: w(tn.scale(tn.sub(a, b), 0.3)), [r(3, 3), r(3, 3)])
    else:
        err = _fd_check(lambda a: tn.weighted_sum_squares(a, np.arange(4.0)), [r(2, 4)])
    assert err < 1e-4


# ---------------------------------------------------------------- grad_check

def test_grad_check_linear_model_exact():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    w, b = param(rng.normal(size=(3, 2))), param(rng.normal(size=2))
    c = rng.normal(size=(5, 2))
    err = grad_check(lambda: tn.sum(tn.mul(tn.linear(x, w, b), Tensor(c))), {"w": w, "b": b})
    assert err < 1e-9


def test_grad_check_two_layer_mlp():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
    ps = {"w1": param(rng.normal(size=(4, 8)) / 2), "b1": param(rng.normal(size=8) * 0.1),
          "w2": param(rng.normal(size=(8, 2)) / 3), "b2": param(rng.normal(size=2) * 0.1)}

    def loss():
        h = tn.gelu(tn.linear(x, ps["w1"], ps["b1"]))
        return tn.weighted_sum_squares(tn.sub(tn.linear(h, ps["w2"], ps["b2"]), y), 1.0)

    assert grad_check(loss, ps) < 1e-4


def test_grad_check_reports_non_finite_parameter():
    p = param([1.0, -1.0])
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="'p'"):
        grad_check_report(lambda: tn.sum(tn.scale(p, np.inf)), {"p": p})


# ---------------------------------------------------------------- Adam

def scalar_adam_reference(x0, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v, out = x0, 0.0, 0.0, []
    for k in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** k)) / ((v / (1 - b2 ** k)) ** 0.5 + eps)
        out.append(x)
    return out


def test_adam_zero_gradient_leaves_params():
    p = {"a": param([1.0, -2.0])}
    before = p["a"].data.copy()
    state = adam_step(p, {"a": np.zeros(2)}, AdamState())
    assert np.array_equal(p["a"].data, before) and state.step == 1


def test_adam_first_step_is_lr_times_sign():
    p = {"a": param([0.0, 0.0])}
    adam_step(p, {"a": np.array([3.0, -0.01])}, AdamState(lr=1e-3))
    np.testing.assert_allclose(p["a"].data, [-1e-3, 1e-3], rtol=1e-5)


def test_adam_matches_scalar_reference_on_quadratic():
    grad_fn = lambda x: 2.0 * (x - 3.0)  # noqa: E731
    ref = scalar_adam_reference(1.0, grad_fn, 3, lr=0.1)
    p = {"x": param([1.0])}
    state = AdamState(lr=0.1)
    got = []
    for _ in range(3):
        adam_step(p, {"x": grad_fn(p["x"].data)}, state)
        got.append(p["x"].data[0])
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-15)
    assert state.step == 3


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"a": param([1.0, 2.0])}, {"a": np.zeros(3)}, AdamState())


# ---------------------------------------------------------------- backends

@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled kernels not built")
def test_backends_agree():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(40, 16))
    g, b = rng.normal(size=16), rng.normal(size=16)
    s = rng.normal(scale=5.0, size=(2, 30, 16))
    mask = rng.random((2, 16)) < 0.7
    mask[:, 0] = True
    results = {}
    for name in ("python", "cython"):
        with kernels.backend(name):
            y, xh, rs = kernels.layer_norm_forward(x, g, b, 1e-5)
            dx = kernels.layer_norm_backward(x, xh, rs, g)
            p = kernels.masked_softmax_forward(s, mask)
            dp = kernels.masked_softmax_backward(x[:30], np.abs(x[:30]))
            ge = kernels.gelu_forward(x), kernels.gelu_backward(x, x)
            results[name] = [y, *dx, p, dp, *ge]
    for a, c in zip(results["python"], results["cython"]):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 8))
    runs = [tn.layer_norm(tn.gelu(x), np.ones(8), np.zeros(8)).data.tobytes() for _ in range(2)]
    assert runs[0] == runs[1]
