"""Stage-1 phoneme predictor: visual + landmark encoders, fusion, CTC and decoder heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import functional as F
from .data.vocab import BOS, CTC_CLASSES, DECODER_CLASSES, EOS, VOCAB_SIZE
from .errors import ConfigError, EmptyInput, EmptyPrefix, ShapeMismatch
from .graph import NUM_LANDMARKS, PASREncoder, build_lip_adjacency, load_template
from .losses import HybridLossConfig, cross_entropy, ctc_log_likelihood, hybrid_loss
from .nn import DecoderBlock, Embedding, LayerNorm, Linear, Module, TemporalEncoder, glorot, param
from .tensor import Tensor, add, as_tensor, concat, no_grad, relu


@dataclass
class Stage1Config:
    d_enc: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    conv3d_kernel: tuple = (5, 7, 7)
    conv3d_stride: tuple = (1, 2, 2)
    frontend_channels: int = 8
    residual_blocks: int = 2
    fusion_hidden: int = 128
    vocab_size: int = VOCAB_SIZE
    blank_index: int = 0
    crop: int = 96
    gcn_channels: int = 64
    gcn_blocks: int = 6
    gcn_temporal_kernel: int = 5
    graph_k: int = 4
    conv_module_kernel: int = 5
    use_landmarks: bool = True
    landmark_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.conv3d_kernel = tuple(int(v) for v in self.conv3d_kernel)
        self.conv3d_stride = tuple(int(v) for v in self.conv3d_stride)
        if self.d_enc % self.heads != 0:
            raise ConfigError(f"d_enc={self.d_enc} not divisible by heads={self.heads}")
        if self.vocab_size != VOCAB_SIZE:
            raise ConfigError(f"vocab_size must be {VOCAB_SIZE}")
        if self.blank_index != 0:
            raise ConfigError("the CTC blank occupies index 0")
        if self.landmark_scale < 0:
            raise ConfigError(f"landmark_scale must be >= 0, got {self.landmark_scale}")
        if len(self.conv3d_kernel) != 3 or len(self.conv3d_stride) != 3:
            raise ConfigError("conv3d kernel and stride need three entries")

    @property
    def ctc_width(self) -> int:
        return self.vocab_size + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv3d_kernel"] = list(self.conv3d_kernel)
        d["conv3d_stride"] = list(self.conv3d_stride)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Stage1Config":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FrameClip:
    """Grayscale mouth crops ``[T,H,W]`` plus the normalisation scalars."""

    frames: np.ndarray
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ShapeMismatch(f"frames must be [T,H,W], got {self.frames.shape}")
        if self.frames.shape[1] != self.frames.shape[2]:
            raise ShapeMismatch("mouth crops must be square")
        if not self.std > 0:
            raise ValueError("std must be positive")

    def __len__(self):
        return self.frames.shape[0]

    def normalized(self) -> np.ndarray:
        return (self.frames - self.mean) / self.std


class ResidualBlock2D(Module):
    """Two 3x3 spatial convs applied per frame with an identity shortcut."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.k1 = glorot(rng, 9 * c, 9 * c, shape=(1, 3, 3, c, c))
        self.k2 = glorot(rng, 9 * c, 9 * c, shape=(1, 3, 3, c, c))
        self.b1 = param(np.zeros(c))
        self.b2 = param(np.zeros(c))

    def forward(self, x):
        h = relu(F.conv3d(x, self.k1, (1, 1, 1), "same", self.b1))
        h = F.conv3d(h, self.k2, (1, 1, 1), "same", self.b2)
        return relu(add(h, x))


class VASREncoder(Module):
    def __init__(self, cfg: Stage1Config, rng: np.random.Generator):
        kt, kh, kw = cfg.conv3d_kernel
        c = cfg.frontend_channels
        self._stride = cfg.conv3d_stride
        self.kernel = glorot(rng, kt * kh * kw, c * kt, shape=(kt, kh, kw, 1, c))
        self.bias = param(np.zeros(c))
        self.blocks = [ResidualBlock2D(c, rng) for _ in range(cfg.residual_blocks)]
        self.proj = Linear(c, cfg.d_enc, rng)
        self.encoder = (TemporalEncoder(cfg.d_enc, cfg.encoder_layers, cfg.heads, rng,
                                        cfg.conv_module_kernel or None)
                        if cfg.encoder_layers else None)

    def features(self, frames) -> Tensor:
        x = as_tensor(frames)
        if x.ndim != 3:
            raise ShapeMismatch(f"frames must be [T,H,W], got {x.shape}")
        x = x.reshape(x.shape + (1,))
        x = relu(F.conv3d(x, self.kernel, self._stride, ("same", "valid", "valid"), self.bias))
        for block in self.blocks:
            x = block(x)
        pooled = x.mean(axis=(1, 2))
        return self.proj(pooled)

    def forward(self, frames) -> Tensor:
        h = self.features(frames)
        return self.encoder(h) if self.encoder is not None else h


class FusionMLP(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(2 * d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, visual, landmark):
        return fuse(visual, landmark, self)


def fuse(visual, landmark, mlp: FusionMLP) -> Tensor:
    """Resample ``landmark`` to the visual length, concatenate, two-layer Mish MLP."""
    visual, landmark = as_tensor(visual), as_tensor(landmark)
    if visual.shape[0] < 1 or landmark.shape[0] < 1:
        raise EmptyInput("fusion needs at least one frame per stream")
    if visual.shape[1] != landmark.shape[1]:
        raise ShapeMismatch(f"stream widths differ: {visual.shape[1]} vs {landmark.shape[1]}")
    landmark = F.resample_time(landmark, visual.shape[0])
    joined = concat([visual, landmark], axis=1)
    return mlp.fc2(F.mish(mlp.fc1(joined)))


class CTCHead(Module):
    def __init__(self, d: int, rng: np.random.Generator, width: int = CTC_CLASSES):
        self.proj = Linear(d, width, rng)

    def forward(self, fused):
        return ctc_project(fused, self)


def ctc_project(fused, head: CTCHead) -> Tensor:
    """Per-frame log-probabilities over blank + 41 tokens."""
    return F.log_softmax(head.proj(fused), axis=-1)


class PhonemeDecoder(Module):
    def __init__(self, cfg: Stage1Config, rng: np.random.Generator):
        d = cfg.d_enc
        self._scale = math.sqrt(d)
        self.embed = Embedding(DECODER_CLASSES + 1, d, rng)  # tokens, EOS, BOS
        self.blocks = [DecoderBlock(d, cfg.heads, rng) for _ in range(cfg.decoder_layers)]
        self.norm = LayerNorm(d)
        self.out = Linear(d, DECODER_CLASSES, rng)

    def forward(self, fused, prefix):
        return decode_head(fused, prefix, self)


def decode_head(fused, prefix: Sequence[int], decoder: PhonemeDecoder) -> Tensor:
    """Logits ``[L, 42]`` (41 tokens + EOS) for each position of a BOS-led prefix."""
    prefix = list(prefix)
    if not prefix:
        raise EmptyPrefix("decoder prefix must contain at least BOS")
    if prefix[0] != BOS:
        raise EmptyPrefix("decoder prefix must start with BOS")
    fused = as_tensor(fused)
    d = fused.shape[1]
    y = decoder.embed(np.asarray(prefix)) * decoder._scale
    y = add(y, Tensor(F.sinusoidal_positions(len(prefix), d)))
    for block in decoder.blocks:
        y = block(y, fused)
    return decoder.out(decoder.norm(y))


class Stage1Model(Module):
    def __init__(self, cfg: Stage1Config, adjacency: np.ndarray | None = None):
        self._cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.vasr = VASREncoder(cfg, rng)
        if cfg.use_landmarks:
            template = load_template()
            if adjacency is None:
                adjacency = build_lip_adjacency(template, cfg.graph_k).adjacency
            self.pasr = PASREncoder(cfg.d_enc, rng, adjacency, cfg.gcn_channels, cfg.gcn_blocks,
                                    cfg.gcn_temporal_kernel, cfg.encoder_layers, cfg.heads,
                                    cfg.conv_module_kernel or None,
                                    center=template if cfg.landmark_scale else None,
                                    scale=cfg.landmark_scale or 1.0)
        else:
            self.pasr = None
        self.fusion = FusionMLP(cfg.d_enc, cfg.fusion_hidden, rng)
        self.ctc_head = CTCHead(cfg.d_enc, rng, cfg.ctc_width)
        self.decoder = PhonemeDecoder(cfg, rng)

    @property
    def config(self) -> Stage1Config:
        return self._cfg

    def encode(self, frames, landmarks=None) -> Tensor:
        visual = vasr_encode(frames, self)
        if self.pasr is not None and landmarks is not None:
            lm = self.pasr(as_tensor(landmarks))
        else:
            lm = Tensor(np.zeros((visual.shape[0], self._cfg.d_enc)))
        return fuse(visual, lm, self.fusion)

    def forward(self, frames, landmarks, target_ids: Sequence[int]):
        return forward_stage1(self, frames, landmarks, target_ids)

    def loss(self, frames, landmarks, target_ids: Sequence[int], cfg: HybridLossConfig):
        """Hybrid, CTC and CE losses for one utterance (token ids ``0..40``)."""
        ctc_lp, ce_logits = forward_stage1(self, frames, landmarks, target_ids)
        ctc = ctc_log_likelihood(ctc_lp, [i + 1 for i in target_ids],
                                 normalize=cfg.ctc_reduction == "token", check=False)
        ce = cross_entropy(ce_logits, list(target_ids) + [EOS], cfg.label_smoothing)
        return hybrid_loss(ce, ctc, cfg), ctc, ce

    def greedy_attention(self, frames, landmarks=None, max_len: int | None = None) -> list[int]:
        """Autoregressive argmax decoding with the transformer head; returns token ids."""
        with no_grad():
            fused = self.encode(frames, landmarks)
            limit = max_len or 2 * fused.shape[0] + 2
            prefix = [BOS]
            out: list[int] = []
            for _ in range(limit):
                logits = decode_head(fused, prefix, self.decoder).data[-1]
                k = int(np.argmax(logits))
                if k == EOS:
                    break
                out.append(k)
                prefix.append(k)
        return out


def vasr_encode(clip, model) -> Tensor:
    """Visual stream features ``[T, d_enc]`` from a :class:`FrameClip` or raw frames."""
    encoder = getattr(model, "vasr", model)
    frames = clip.normalized() if isinstance(clip, FrameClip) else clip
    return encoder(as_tensor(frames))


def forward_stage1(model: Stage1Model, frames, landmarks, target_ids: Sequence[int]):
    """Both heads from one fused representation: ``(ctc_logprobs [T,42], ce_logits [L+1,42])``."""
    fused = model.encode(frames, landmarks)
    ctc_lp = ctc_project(fused, model.ctc_head)
    ce_logits = decode_head(fused, [BOS] + list(target_ids), model.decoder)
    return ctc_lp, ce_logits
