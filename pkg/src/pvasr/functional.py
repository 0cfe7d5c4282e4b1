"""Layer-level differentiable operations built on :mod:`pvasr.tensor`."""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidStride, ShapeMismatch
from .tensor import DTYPE, Tensor, _record, add, as_tensor, concat, matmul, reshape, transpose

MISH_GUARD = 20.0


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.logaddexp(0.0, xd)
    return _record(out, (x,), "softplus", lambda g: (g / (1.0 + np.exp(-xd)),))


def _mish_parts(xd: np.ndarray):
    # tanh(softplus(x)) = n / d with n = e^x (e^x + 2), d = n + 2: one exp, no overflow below
    # the guard, and for x << 0 the ratio reduces to the x e^x asymptote on its own.
    # The slope x * sigmoid(x) * (1 - t^2) simplifies to 4 x (n - e) / d^2.
    shape = np.shape(xd)
    xd = np.asarray(xd, dtype=DTYPE).reshape(-1)
    e = np.minimum(xd, MISH_GUARD)
    np.exp(e, out=e)
    n = e + 2.0
    n *= e
    d = n + 2.0
    t = n / d
    np.subtract(n, e, out=e)
    e *= xd
    e *= 4.0
    e /= d
    e /= d
    deriv = e
    deriv += t
    out = t
    out *= xd
    hi = xd > MISH_GUARD
    if hi.any():
        out[hi] = xd[hi]
        deriv[hi] = 1.0
    return out.reshape(shape), deriv.reshape(shape)


def mish(x) -> Tensor:
    """x * tanh(softplus(x)), with asymptotic branches beyond |x| > 20."""
    x = as_tensor(x)
    out, deriv = _mish_parts(x.data)
    return _record(out, (x,), "mish", lambda g: (g * deriv,))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    shifted = xd - np.max(xd, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _record(out, (x,), "log_softmax", bw)


softmax_log = log_softmax


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(xd - np.max(xd, axis=axis, keepdims=True))
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record(out, (x,), "softmax", bw)


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    xd = x.data
    n = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    out = _record(xhat, (x,), "layer_norm", bw)
    if gamma is not None:
        gamma = as_tensor(gamma)
        if gamma.shape != (n,):
            raise ShapeMismatch(f"layer_norm gamma shape {gamma.shape} != ({n},)")
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def linear(x, weight, bias=None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if x.ndim == 1:
        out = reshape(matmul(reshape(x, (1, -1)), weight), (weight.shape[1],))
    else:
        out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def embedding(weight, indices) -> Tensor:
    weight = as_tensor(weight)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise ShapeMismatch(f"embedding index out of range for table of {weight.shape[0]} rows")
    shape = weight.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _record(weight.data[idx], (weight,), "embedding", bw)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _pad_amounts(n: int, k: int, s: int, mode: str) -> tuple[int, int]:
    if mode == "valid":
        return 0, 0
    if mode == "same":
        out = -(-n // s)
        total = max((out - 1) * s + k - n, 0)
        return total // 2, total - total // 2
    raise ValueError(f"unknown padding mode {mode!r}")


def conv3d(x, kernel, stride=(1, 2, 2), padding=("same", "valid", "valid"), bias=None) -> Tensor:
    """Cross-correlate ``x[T,H,W,Cin]`` with ``kernel[kt,kh,kw,Cin,Cout]``.

    ``padding`` is one mode for all axes or a per-axis triple of
    ``"same"``/``"valid"``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 5:
        raise ShapeMismatch(f"conv3d expects x[T,H,W,C] and k[kt,kh,kw,Cin,Cout], got {x.shape}, {kernel.shape}")
    stride = tuple(int(s) for s in (stride if np.ndim(stride) else (stride,) * 3))
    if len(stride) != 3 or min(stride) < 1:
        raise InvalidStride(f"strides must be >= 1, got {stride}")
    if isinstance(padding, str):
        padding = (padding,) * 3
    kt, kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ShapeMismatch(f"input channels {x.shape[3]} != kernel channels {cin}")
    pads = [_pad_amounts(n, k, s, m) for n, k, s, m in zip(x.shape[:3], (kt, kh, kw), stride, padding)]
    xp = np.pad(x.data, pads + [(0, 0)])
    dims = xp.shape[:3]
    if any(d < k for d, k in zip(dims, (kt, kh, kw))):
        raise ShapeMismatch(f"kernel {(kt, kh, kw)} does not fit padded input {dims}")
    st, sh, sw = stride
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(0, 1, 2))
    windows = windows[::st, ::sh, ::sw].transpose(0, 1, 2, 4, 5, 6, 3)  # [To,Ho,Wo,kt,kh,kw,Cin]
    to, ho, wo = windows.shape[:3]
    kd = kernel.data
    kmat = kd.reshape(kt * kh * kw * cin, cout)
    cols = windows.reshape(to * ho * wo, kt * kh * kw * cin)
    out = (cols @ kmat).reshape(to, ho, wo, cout)
    xshape = x.shape

    def bw(g):
        g2 = g.reshape(to * ho * wo, cout)
        gk = None
        if kernel.requires_grad:
            gk = (cols.T @ g2).reshape(kt, kh, kw, cin, cout)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ kmat.T).reshape(to, ho, wo, kt, kh, kw, cin)
            gxp = np.zeros(xp.shape, dtype=DTYPE)
            for a in range(kt):
                for b in range(kh):
                    for c in range(kw):
                        gxp[a:a + st * to:st, b:b + sh * ho:sh, c:c + sw * wo:sw, :] += gcols[:, :, :, a, b, c, :]
            sl = tuple(slice(p0, p0 + n) for (p0, _), n in zip(pads, xshape[:3]))
            gx = gxp[sl]
        return gx, gk

    res = _record(out, (x, kernel), "conv3d", bw)
    if bias is not None:
        res = add(res, bias)
    return res


def conv1d_time(x, kernel, bias=None) -> Tensor:
    """Temporal convolution of ``x[T,...,Cin]`` with ``kernel[k,Cin,Cout]``, "same" padding.

    Axes between time and channels are independent positions sharing the kernel.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k, cin, cout = kernel.shape
    if k % 2 != 1:
        raise ShapeMismatch(f"temporal kernel must be odd, got {k}")
    if x.shape[-1] != cin:
        raise ShapeMismatch(f"conv1d_time channels {x.shape[-1]} != {cin}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatch(f"conv1d_time bias shape {bias.shape} != ({cout},)")
    t = x.shape[0]
    mid = x.shape[1:-1]
    m = int(np.prod(mid)) if mid else 1
    half = k // 2
    xp = np.zeros((t + 2 * half, m, cin), dtype=DTYPE)
    xp[half:half + t] = x.data.reshape(t, m, cin)
    # im2col over time: cols[t, m, j, c] = xp[t + j, m, c], one GEMM for all taps
    cols = np.lib.stride_tricks.sliding_window_view(xp, t, axis=0)  # [k, m, cin, t]
    cols = np.ascontiguousarray(cols.transpose(3, 1, 0, 2)).reshape(t * m, k * cin)
    kd = kernel.data.reshape(k * cin, cout)
    out = cols @ kd
    if bias is not None:
        out += bias.data

    def bw(g):
        g2 = g.reshape(t * m, cout)
        gx = gk = gb = None
        if x.requires_grad:
            gcols = (g2 @ kd.T).reshape(t, m, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[j:j + t] += gcols[:, :, j]
            gx = gxp[half:half + t].reshape(x.shape)
        if kernel.requires_grad:
            gk = (cols.T @ g2).reshape(k, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record(out.reshape((t,) + mid + (cout,)), inputs, "conv1d_time",
                   (lambda g: bw(g)[:2]) if bias is None else bw)


def depthwise_conv1d(x, weight) -> Tensor:
    """Per-channel temporal convolution of ``x[T,C]`` with ``weight[k,C]``, "same" padding."""
    x, weight = as_tensor(x), as_tensor(weight)
    k, c = weight.shape
    if k % 2 != 1 or x.ndim != 2 or x.shape[1] != c:
        raise ShapeMismatch(f"depthwise_conv1d: x {x.shape}, weight {weight.shape}")
    t = x.shape[0]
    half = k // 2
    xp = np.pad(x.data, ((half, half), (0, 0)))
    wd = weight.data
    out = np.zeros((t, c), dtype=DTYPE)
    for j in range(k):
        out += xp[j:j + t] * wd[j]

    def bw(g):
        gx = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for j in range(k):
            gx[j:j + t] += g * wd[j]
            gw[j] = np.sum(g * xp[j:j + t], axis=0)
        return gx[half:half + t], gw

    return _record(out, (x, weight), "depthwise_conv1d", bw)


def graph_conv(x, adjacency) -> Tensor:
    """Apply a node-mixing matrix per frame: ``out[t] = A @ x[t]`` for ``x[T,N,C]``."""
    x = as_tensor(x)
    if isinstance(adjacency, Tensor) and adjacency.requires_grad:
        return matmul(adjacency, x)
    a = adjacency.data if isinstance(adjacency, Tensor) else np.asarray(adjacency, dtype=DTYPE)
    t, n, c = x.shape
    if a.shape != (n, n):
        raise ShapeMismatch(f"adjacency {a.shape} does not match {n} nodes")
    out = np.matmul(a, x.data)
    at = np.ascontiguousarray(a.T)

    def bw(g):
        return (np.matmul(at, g),)

    return _record(out, (x,), "graph_conv", bw)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

NEG_BIG = -1e9


def causal_bias(tq: int, tk: int) -> np.ndarray:
    """Additive mask: position i may attend to keys j <= i."""
    return np.where(np.tri(tq, tk, dtype=bool), 0.0, NEG_BIG)


def scaled_dot_product_attention(q, k, v, bias=None) -> Tensor:
    """``q[...,Tq,d]``, ``k[...,Tk,d]``, ``v[...,Tk,dv]``; optional additive ``bias[Tq,Tk]``."""
    d = q.shape[-1]
    scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * (1.0 / math.sqrt(d))
    if bias is not None:
        scores = add(scores, Tensor(bias))
    return matmul(softmax(scores, axis=-1), v)


def multi_head_attention(q, k, v, wq, wk, wv, wo, heads: int, mask: str = "none",
                         bq=None, bk=None, bv=None, bo=None) -> Tensor:
    """Multi-head attention over ``q[Tq,d]`` and ``k, v[Tk,d]`` with projections ``w*[d,d]``."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = wq.shape[1]
    if d % heads != 0:
        raise ShapeMismatch(f"model width {d} not divisible by {heads} heads")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"keys ({k.shape[0]}) and values ({v.shape[0]}) differ in length")
    dh = d // heads
    tq, tk = q.shape[0], k.shape[0]

    def split(x, t):
        return transpose(reshape(x, (t, heads, dh)), (1, 0, 2))

    qh = split(linear(q, wq, bq), tq)
    kh = split(linear(k, wk, bk), tk)
    vh = split(linear(v, wv, bv), tk)
    bias = None
    if mask == "causal":
        bias = causal_bias(tq, tk)
    elif mask != "none":
        raise ValueError(f"unknown mask {mask!r}")
    ctx = scaled_dot_product_attention(qh, kh, vh, bias)
    ctx = reshape(transpose(ctx, (1, 0, 2)), (tq, d))
    return linear(ctx, wo, bo)


def time_interpolation_matrix(t_out: int, t_in: int) -> np.ndarray:
    """Linear-interpolation weights resampling a length ``t_in`` sequence to ``t_out``.

    Endpoints are aligned (frame 0 -> 0, last -> last).
    """
    m = np.zeros((t_out, t_in), dtype=DTYPE)
    if t_in == 1:
        m[:, 0] = 1.0
        return m
    if t_out == 1:
        m[0, 0] = 1.0
        return m
    pos = np.arange(t_out) * (t_in - 1) / (t_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), t_in - 2)
    frac = pos - lo
    m[np.arange(t_out), lo] = 1.0 - frac
    m[np.arange(t_out), lo + 1] += frac
    return m


def resample_time(x, t_out: int) -> Tensor:
    x = as_tensor(x)
    if x.shape[0] == t_out:
        return x
    return matmul(Tensor(time_interpolation_matrix(t_out, x.shape[0])), x)


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


__all__ = [
    "softplus", "mish", "log_softmax", "softmax_log", "softmax", "layer_norm", "linear",
    "embedding", "conv3d", "conv1d_time", "depthwise_conv1d", "graph_conv",
    "causal_bias", "scaled_dot_product_attention", "multi_head_attention",
    "time_interpolation_matrix", "resample_time", "sinusoidal_positions", "concat",
]
