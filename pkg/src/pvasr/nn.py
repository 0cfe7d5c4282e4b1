"""Parameter containers and the transformer-style blocks shared by both encoders."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ShapeMismatch
from .tensor import Tensor, add


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)))


class Module:
    """Collects parameters from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ShapeMismatch(f"parameter names differ: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = glorot(rng, d_in, d_out)
        self.bias = param(np.zeros(d_out)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.weight = param(rng.normal(0.0, 1.0 / math.sqrt(d), size=(n, d)))

    def forward(self, indices):
        return F.embedding(self.weight, indices)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads != 0:
            raise ShapeMismatch(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.wq = glorot(rng, d, d)
        self.wk = glorot(rng, d, d)
        self.wv = glorot(rng, d, d)
        self.wo = glorot(rng, d, d)
        self.bo = param(np.zeros(d))

    def forward(self, q, k, v, mask: str = "none"):
        return F.multi_head_attention(q, k, v, self.wq, self.wk, self.wv, self.wo,
                                      self.heads, mask, bo=self.bo)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, x):
        return self.fc2(F.mish(self.fc1(x)))


class ConvModule(Module):
    """Depthwise temporal convolution sub-block of the lite conformer."""

    def __init__(self, d: int, kernel: int, rng: np.random.Generator):
        self.norm = LayerNorm(d)
        self.depthwise = param(rng.normal(0.0, 1.0 / math.sqrt(kernel), size=(kernel, d)))
        self.pointwise = Linear(d, d, rng)

    def forward(self, x):
        return self.pointwise(F.mish(F.depthwise_conv1d(self.norm(x), self.depthwise)))


class EncoderBlock(Module):
    """Pre-norm self-attention + feed-forward (+ optional depthwise conv) block."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, ff_mult: int = 4,
                 conv_kernel: int | None = 5):
        self.norm_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.conv = ConvModule(d, conv_kernel, rng) if conv_kernel else None
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, ff_mult * d, rng)

    def forward(self, x):
        h = self.norm_attn(x)
        x = add(x, self.attn(h, h, h))
        if self.conv is not None:
            x = add(x, self.conv(x))
        return add(x, self.ff(self.norm_ff(x)))


class DecoderBlock(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, ff_mult: int = 4):
        self.norm_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, ff_mult * d, rng)

    def forward(self, y, memory):
        h = self.norm_self(y)
        y = add(y, self.self_attn(h, h, h, mask="causal"))
        y = add(y, self.cross_attn(self.norm_cross(y), memory, memory))
        return add(y, self.ff(self.norm_ff(y)))


class TemporalEncoder(Module):
    """Stack of encoder blocks with sinusoidal positions added to the input."""

    def __init__(self, d: int, layers: int, heads: int, rng: np.random.Generator,
                 conv_kernel: int | None = 5):
        self.blocks = [EncoderBlock(d, heads, rng, conv_kernel=conv_kernel) for _ in range(layers)]
        self.norm = LayerNorm(d)

    def forward(self, x):
        x = add(x, Tensor(F.sinusoidal_positions(x.shape[0], x.shape[1])))
        for block in self.blocks:
            x = block(x)
        return self.norm(x)
