import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvasr import functional as F
from pvasr import tensor as T
from pvasr.errors import InvalidStride, ShapeMismatch
from pvasr.gradcheck import grad_check
from pvasr.tensor import Tensor

SEEDS = range(20)


def leaf(rng, *shape, scale=1.0):
    return Tensor(scale * rng.normal(size=shape), requires_grad=True)


def weighted_sum(fn, rng):
    """Scalar probe ``sum(w * fn(...))`` with a fixed random ``w``."""
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if "w" not in cache:
            cache["w"] = Tensor(rng.normal(size=out.shape))
        return T.tsum(out * cache["w"])

    return f


def naive_conv3d(x, k, stride, pads):
    (pt0, pt1), (ph0, ph1), (pw0, pw1) = pads
    xp = np.pad(x, ((pt0, pt1), (ph0, ph1), (pw0, pw1), (0, 0)))
    kt, kh, kw, _, cout = k.shape
    st_, sh, sw = stride
    to = (xp.shape[0] - kt) // st_ + 1
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((to, ho, wo, cout))
    for t in range(to):
        for i in range(ho):
            for j in range(wo):
                win = xp[t * st_:t * st_ + kt, i * sh:i * sh + kh, j * sw:j * sw + kw]
                out[t, i, j] = np.einsum("abcd,abcde->e", win, k)
    return out


# -- mish ---------------------------------------------------------------------


def test_mish_reference_points():
    assert F.mish(Tensor(0.0)).data == 0.0
    ref = 1.0 * math.tanh(math.log1p(math.e))
    assert F.mish(Tensor(1.0)).data == pytest.approx(ref, abs=1e-15)
    assert F.mish(Tensor(1.0)).data == pytest.approx(0.865098, abs=1e-6)
    m20 = float(F.mish(Tensor(-20.0)).data)
    assert -1e-7 < m20 < 0


def test_mish_matches_direct_formula_and_asymptotes():
    x = np.linspace(-30, 30, 601)
    direct = x * np.tanh(np.log1p(np.exp(np.minimum(x, 30))))
    np.testing.assert_allclose(F.mish(Tensor(x)).data, direct, rtol=1e-12, atol=1e-300)
    big = np.array([25.0, 100.0, 1e4])
    np.testing.assert_array_equal(F.mish(Tensor(big)).data, big)
    tiny = F.mish(Tensor(np.array([-50.0, -500.0]))).data
    assert np.all(np.isfinite(tiny)) and np.all(tiny <= 0) and np.all(tiny > -1e-18)


def test_mish_chain_gradient_over_seeds():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = leaf(rng, 5)
        w = Tensor(rng.normal(size=(5, 5)) / 2)
        err = grad_check(lambda a: T.tsum(F.mish(T.matmul(F.mish(a)[None, :], w))), [x])
        assert err <= 1e-6, (seed, err)


@settings(max_examples=60, deadline=None)
@given(st.floats(-40, 40))
def test_mish_bounded_below_and_shrinks_towards_zero(x):
    y = float(F.mish(Tensor(x)).data)
    # global minimum is about -0.30884 near x = -1.19
    assert y >= -0.3089
    assert abs(y) <= abs(x) and y * x >= 0


# -- softmax family / layer_norm / linear / embedding -----------------------------


def test_log_softmax_uniform():
    for n in (1, 2, 7, 41):
        out = F.log_softmax(Tensor(np.full(n, 3.3))).data
        np.testing.assert_allclose(out, np.log(1.0 / n), rtol=0, atol=1e-15)
    assert F.softmax_log is F.log_softmax


def test_log_softmax_is_shift_stable():
    x = np.array([1000.0, 1001.0, 999.0])
    out = F.log_softmax(Tensor(x)).data
    np.testing.assert_allclose(np.exp(out).sum(), 1.0, atol=1e-15)
    np.testing.assert_allclose(out, F.log_softmax(Tensor(x - 1000)).data, atol=1e-13)


def test_layer_norm_constant_vector_is_zero():
    out = F.layer_norm(Tensor(np.full((2, 6), 4.2))).data
    assert np.all(out == 0.0)


def test_layer_norm_gamma_shape_checked():
    with pytest.raises(ShapeMismatch):
        F.layer_norm(Tensor(np.ones((2, 4))), gamma=Tensor(np.ones(3)))


def test_linear_and_embedding_shape_errors():
    with pytest.raises(ShapeMismatch):
        F.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeMismatch):
        F.embedding(Tensor(np.ones((5, 2))), [0, 5])


def test_embedding_accumulates_repeated_rows():
    w = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    out = F.embedding(w, [2, 0, 2])
    np.testing.assert_array_equal(out.data, [[4, 5], [0, 1], [4, 5]])
    T.tsum(out).backward()
    np.testing.assert_array_equal(w.grad, [[1, 1], [0, 0], [2, 2]])


# Elementwise and linear maps are held to 1e-6. Normalising and attention ops
# mix many inputs per output, so central differences on their smallest
# entries carry more truncation error; they get 1e-5.
ELEMENTWISE_TOL, COMPOSITE_TOL = 1e-6, 1e-5
COMPOSITE = {"log_softmax", "softmax_axis0", "layer_norm"}

SMOOTH_OPS = {
    "softplus": lambda r: (F.softplus, [leaf(r, 3, 4)]),
    "log_softmax": lambda r: ((lambda a: F.log_softmax(a, axis=-1)), [leaf(r, 3, 5)]),
    "softmax_axis0": lambda r: ((lambda a: F.softmax(a, axis=0)), [leaf(r, 3, 5)]),
    "layer_norm": lambda r: ((lambda a, g, b: F.layer_norm(a, g, b)), [leaf(r, 3, 5), leaf(r, 5), leaf(r, 5)]),
    "linear": lambda r: ((lambda a, w, b: F.linear(a, w, b)), [leaf(r, 3, 4), leaf(r, 4, 2), leaf(r, 2)]),
    "linear_vector": lambda r: ((lambda a, w: F.linear(a, w)), [leaf(r, 4), leaf(r, 4, 2)]),
    "embedding": lambda r: ((lambda w: F.embedding(w, [1, 3, 1])), [leaf(r, 4, 3)]),
    "resample_up": lambda r: ((lambda a: F.resample_time(a, 7)), [leaf(r, 4, 3)]),
    "resample_down": lambda r: ((lambda a: F.resample_time(a, 3)), [leaf(r, 6, 2)]),
}


@pytest.mark.parametrize("name", sorted(SMOOTH_OPS))
def test_smooth_op_gradients_over_seeds(name):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        fn, xs = SMOOTH_OPS[name](rng)
        tol = COMPOSITE_TOL if name in COMPOSITE else ELEMENTWISE_TOL
        err = grad_check(weighted_sum(fn, rng), xs)
        assert err <= tol, (name, seed, err)


# -- convolutions ---------------------------------------------------------------


def test_conv3d_unit_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(4, 5, 6, 3))
    k = np.zeros((1, 1, 1, 3, 3))
    k[0, 0, 0] = np.eye(3)
    out = F.conv3d(Tensor(x), Tensor(k), stride=(1, 1, 1))
    np.testing.assert_array_equal(out.data, x)


def test_conv3d_all_ones_on_constant_input():
    c, cin = 0.7, 2
    x = np.full((5, 9, 9, cin), c)
    out = F.conv3d(Tensor(x), Tensor(np.ones((5, 7, 7, cin, 1))), stride=(1, 1, 1),
                   padding=("valid", "valid", "valid")).data
    assert out.shape == (1, 3, 3, 1)
    np.testing.assert_allclose(out, c * 5 * 7 * 7 * cin, rtol=1e-14)


def test_conv3d_same_time_padding_preserves_frame_count():
    x = Tensor(np.ones((6, 15, 15, 1)))
    out = F.conv3d(x, Tensor(np.ones((5, 7, 7, 1, 2))))
    assert out.shape == (6, 5, 5, 2)


def test_conv3d_matches_naive_loops():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 9, 8, 2))
    k = rng.normal(size=(3, 3, 2, 2, 4))
    out = F.conv3d(Tensor(x), Tensor(k), stride=(1, 2, 2)).data
    np.testing.assert_allclose(out, naive_conv3d(x, k, (1, 2, 2), ((1, 1), (0, 0), (0, 0))), rtol=1e-12)


def test_conv3d_errors():
    with pytest.raises(InvalidStride):
        F.conv3d(Tensor(np.ones((3, 5, 5, 1))), Tensor(np.ones((1, 1, 1, 1, 1))), stride=(1, 0, 1))
    with pytest.raises(ShapeMismatch):
        F.conv3d(Tensor(np.ones((3, 5, 5, 2))), Tensor(np.ones((1, 1, 1, 1, 1))))
    with pytest.raises(ShapeMismatch):
        F.conv3d(Tensor(np.ones((3, 5, 5, 1))), Tensor(np.ones((1, 7, 7, 1, 1))))


def test_conv3d_gradient_on_6x8x8x1():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x, k, b = leaf(rng, 6, 8, 8, 1), leaf(rng, 3, 3, 3, 1, 2), leaf(rng, 2)
        fn = lambda a, w, c: F.conv3d(a, w, stride=(1, 2, 2), bias=c)
        assert grad_check(weighted_sum(fn, rng), [x, k, b]) <= 1e-6, seed


def test_conv1d_time_matches_convolve():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(7, 1))
    taps = rng.normal(size=3)
    out = F.conv1d_time(Tensor(x), Tensor(taps[:, None, None])).data[:, 0]
    np.testing.assert_allclose(out, np.correlate(np.pad(x[:, 0], 1), taps, mode="valid"), rtol=1e-13)


def test_conv1d_time_rejects_even_kernels():
    with pytest.raises(ShapeMismatch):
        F.conv1d_time(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2, 2))))
    with pytest.raises(ShapeMismatch):
        F.conv1d_time(Tensor(np.ones((4, 2))), Tensor(np.ones((3, 3, 2))))


CONV_OPS = {
    "conv1d_time": lambda r: ((lambda a, w, b: F.conv1d_time(a, w, b)), [leaf(r, 5, 3, 2), leaf(r, 3, 2, 4), leaf(r, 4)]),
    "depthwise_conv1d": lambda r: ((lambda a, w: F.depthwise_conv1d(a, w)), [leaf(r, 6, 3), leaf(r, 3, 3)]),
    "graph_conv": lambda r: ((lambda a, m=r.normal(size=(4, 4)): F.graph_conv(a, m)), [leaf(r, 3, 4, 2)]),
    "graph_conv_learned_adj": lambda r: ((lambda a, m: F.graph_conv(a, m)), [leaf(r, 3, 4, 2), leaf(r, 4, 4)]),
}


@pytest.mark.parametrize("name", sorted(CONV_OPS))
def test_conv_gradients_over_seeds(name):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        fn, xs = CONV_OPS[name](rng)
        assert grad_check(weighted_sum(fn, rng), xs) <= 1e-6, (name, seed)


def test_graph_conv_is_per_frame_matmul():
    rng = np.random.default_rng(4)
    x, a = rng.normal(size=(3, 5, 2)), rng.normal(size=(5, 5))
    np.testing.assert_allclose(F.graph_conv(Tensor(x), a).data, np.einsum("ij,tjc->tic", a, x), rtol=1e-13)
    with pytest.raises(ShapeMismatch):
        F.graph_conv(Tensor(x), np.eye(4))


# -- attention ------------------------------------------------------------------


def mha_weights(rng, d):
    return [leaf(rng, d, d, scale=0.5) for _ in range(4)]


@pytest.mark.parametrize("mask", ["none", "causal"])
def test_mha_single_step_passes_values_through(mask):
    rng = np.random.default_rng(5)
    wq, wk, wv, wo = (w.data for w in mha_weights(rng, 4))
    q, kv = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    out = F.multi_head_attention(Tensor(q), Tensor(kv), Tensor(kv), wq, wk, wv, wo, heads=2, mask=mask)
    np.testing.assert_allclose(out.data, kv @ wv @ wo, rtol=1e-13)


def test_mha_causal_position_zero_ignores_future():
    rng = np.random.default_rng(6)
    ws = [w.data for w in mha_weights(rng, 4)]
    x = rng.normal(size=(3, 4))
    y = x.copy()
    y[1:] += rng.normal(size=(2, 4))
    a = F.multi_head_attention(Tensor(x), Tensor(x), Tensor(x), *ws, heads=2, mask="causal").data
    b = F.multi_head_attention(Tensor(y), Tensor(y), Tensor(y), *ws, heads=2, mask="causal").data
    np.testing.assert_array_equal(a[0], b[0])
    assert not np.allclose(a[1], b[1])


def test_mha_rejects_indivisible_width():
    ws = [np.eye(4)] * 4
    with pytest.raises(ShapeMismatch):
        F.multi_head_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))),
                               *ws, heads=3)


@pytest.mark.parametrize("mask", ["none", "causal"])
def test_mha_gradient_t3_d4_h2(mask):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x, mem = leaf(rng, 3, 4), leaf(rng, 3, 4)
        ws = mha_weights(rng, 4)
        fn = lambda a, m, *w: F.multi_head_attention(a, m, m, *w, heads=2, mask=mask)
        assert grad_check(weighted_sum(fn, rng), [x, mem, *ws]) <= COMPOSITE_TOL, seed


def test_causal_bias_layout():
    b = F.causal_bias(3, 3)
    assert np.all(b[np.tril_indices(3)] == 0)
    assert np.all(b[np.triu_indices(3, 1)] < -1e8)


def test_interpolation_rows_are_convex():
    for t_out, t_in in [(1, 5), (5, 1), (7, 4), (3, 9)]:
        m = F.time_interpolation_matrix(t_out, t_in)
        np.testing.assert_allclose(m.sum(1), 1.0, atol=1e-15)
        assert np.all(m >= 0)
    m = F.time_interpolation_matrix(4, 7)
    assert m[0, 0] == 1.0 and m[-1, -1] == 1.0
