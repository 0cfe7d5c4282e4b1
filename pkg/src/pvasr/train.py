"""AdamW, the warmup + cosine schedule, frame-capped batching and the Stage-1 training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .checkpoint import OptimizerState, load_checkpoint, save_checkpoint
from .data.vocab import VOCAB
from .errors import ConfigError, InvalidSchedule, ShapeMismatch, UtteranceTooLong
from .losses import HybridLossConfig
from .metrics import corpus_stats
from .model import Stage1Config, Stage1Model
from .tensor import no_grad

CHECKPOINT_NAME = "last.ckpt"
LOG_NAME = "metrics.jsonl"


@dataclass
class TrainConfig:
    epochs: int = 50
    warmup_epochs: int = 5
    lr_init: float = 1e-3
    lr_min: float | None = None  # lr_init / 1000 when unset
    frame_cap: int = 1800
    alpha: float = 0.9
    label_smoothing: float = 0.0
    ctc_reduction: str = "sequence"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float | None = 5.0
    eval_head: str = "attention"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs={self.warmup_epochs} must be below epochs={self.epochs}")
        if not self.lr_init > 0:
            raise ConfigError("lr_init must be positive")
        if self.frame_cap < 1:
            raise ConfigError("frame_cap must be positive")
        if self.eval_head not in ("attention", "ctc"):
            raise ConfigError(f"eval_head must be 'attention' or 'ctc', got {self.eval_head!r}")
        HybridLossConfig(self.alpha, self.label_smoothing, self.ctc_reduction)

    @property
    def min_lr(self) -> float:
        return self.lr_init / 1000.0 if self.lr_min is None else self.lr_min

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None],
               state: OptimizerState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.01) -> OptimizerState:
    """One in-place AdamW update with bias-corrected moments.

    Decay is decoupled: ``p -= lr * wd * p`` before the Adam step. Parameters
    whose gradient is ``None`` are treated as having zero gradient.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            v = state.v[name] = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def cosine_warmup_lr(step: int, total_steps: int, warmup_steps: int, lr_init: float,
                     lr_min: float | None = None) -> float:
    """Linear ramp to ``lr_init`` over the warmup, then half-cosine down to ``lr_min``."""
    if lr_min is None:
        lr_min = lr_init / 1000.0
    if warmup_steps >= total_steps or warmup_steps < 0:
        raise InvalidSchedule(f"warmup {warmup_steps} must be below total {total_steps}")
    if not 0 <= step <= total_steps:
        raise InvalidSchedule(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr_init * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_min + (lr_init - lr_min) * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(grads: Mapping[str, np.ndarray | None], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            if g is not None:
                g *= scale
    return total


def make_batches(items: Sequence, frame_cap: int, length: Callable = len) -> list[list]:
    """Greedy packing in order of descending length (stable for ties).

    A batch is closed as soon as the next item would push its frame total
    past ``frame_cap``.
    """
    sizes = [int(length(x)) for x in items]
    for x, n in zip(items, sizes):
        if n > frame_cap:
            raise UtteranceTooLong(f"item of {n} frames exceeds the batch cap of {frame_cap}")
    order = sorted(range(len(items)), key=lambda i: -sizes[i])
    batches: list[list] = []
    current: list = []
    used = 0
    for i in order:
        if current and used + sizes[i] > frame_cap:
            batches.append(current)
            current, used = [], 0
        current.append(items[i])
        used += sizes[i]
    if current:
        batches.append(current)
    return batches


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class Example:
    """Model-ready view of an utterance: normalised frames, landmarks, token ids."""

    id: str
    frames: np.ndarray
    landmarks: np.ndarray
    target: list[int]

    def __len__(self):
        return self.frames.shape[0]

    @property
    def phonemes(self) -> list[str]:
        return VOCAB.decode(self.target)


def to_examples(utterances) -> list[Example]:
    return [Example(u.id, u.frames.normalized(), u.landmarks.frames, VOCAB.encode(u.phonemes))
            for u in utterances]


def predict_ids(model: Stage1Model, ex: Example, head: str = "attention") -> list[int]:
    """Greedy token ids from either head."""
    if head == "ctc":
        from .decoding.ctc import ctc_greedy_ids
        from .model import ctc_project

        with no_grad():
            lp = ctc_project(model.encode(ex.frames, ex.landmarks), model.ctc_head)
        return [k - 1 for k in ctc_greedy_ids(lp)]
    return model.greedy_attention(ex.frames, ex.landmarks)


def evaluate_per(model: Stage1Model, examples: Sequence[Example], head: str = "attention") -> float:
    """Corpus PER of greedy decodes against the reference phonemes."""
    pairs = [(ex.target, predict_ids(model, ex, head)) for ex in examples]
    return corpus_stats(pairs).rate


def empty_baseline_per(examples: Sequence[Example]) -> float:
    """PER of emitting nothing (every reference token is a deletion): always 1."""
    return corpus_stats((ex.target, []) for ex in examples).rate


def _header(model: Stage1Model, cfg: TrainConfig, epoch: int, frame_stats) -> dict:
    return {"model": model.config.to_dict(), "train": cfg.to_dict(), "epoch": epoch,
            "frame_stats": list(frame_stats) if frame_stats is not None else None}


def _format_row(row: dict) -> str:
    return json.dumps(row, separators=(", ", ": "))


@dataclass
class TrainResult:
    model: Stage1Model
    log: list[dict]
    optimizer: OptimizerState


def train(model: Stage1Model, cfg: TrainConfig, train_set: Sequence[Example],
          dev_set: Sequence[Example] = (), out_dir=None, resume: bool = False,
          frame_stats: tuple[float, float] | None = None, stop_after: int | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the epoch loop; log and checkpoint every epoch when ``out_dir`` is set.

    Batch order for epoch ``e`` comes from a generator seeded with
    ``(seed, e)``, so resuming from a checkpoint reproduces the uninterrupted
    run exactly. ``stop_after`` ends early after that many epochs (the
    schedule still spans ``cfg.epochs``).
    """
    if not train_set:
        raise ConfigError("training set is empty")
    loss_cfg = HybridLossConfig(cfg.alpha, cfg.label_smoothing, cfg.ctc_reduction)
    batches = make_batches(list(train_set), cfg.frame_cap)
    steps_per_epoch = len(batches)
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    named = dict(model.named_parameters())
    params = {k: p.data for k, p in named.items()}
    opt = OptimizerState()
    log: list[dict] = []
    start = 1
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume:
        if out is None:
            raise ConfigError("resume needs an output directory")
        ckpt = load_checkpoint(out / CHECKPOINT_NAME, {k: v.shape for k, v in params.items()})
        model.load_state_dict(ckpt.params)
        opt = ckpt.optimizer or OptimizerState()
        start = int(ckpt.header["epoch"]) + 1
        log = _read_log(out / LOG_NAME, upto=start - 1)
        _write_log(out / LOG_NAME, log)
    elif out is not None:
        _write_log(out / LOG_NAME, [])
    last = cfg.epochs if stop_after is None else min(cfg.epochs, start - 1 + stop_after)
    for epoch in range(start, last + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        sums = np.zeros(3)
        count = 0
        for b in rng.permutation(steps_per_epoch):
            batch = batches[b]
            model.zero_grad()
            scale = 1.0 / len(batch)
            for ex in batch:
                hybrid, ctc, ce = model.loss(ex.frames, ex.landmarks, ex.target, loss_cfg)
                (hybrid * scale).backward()
                sums += (hybrid.item(), ctc.item(), ce.item())
                count += 1
            grads = {k: p.grad for k, p in named.items()}
            if cfg.grad_clip:
                clip_grad_norm(grads, cfg.grad_clip)
            lr = cosine_warmup_lr(opt.step + 1, total, warmup, cfg.lr_init, cfg.min_lr)
            adamw_step(params, grads, opt, lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
        model.zero_grad()
        mean = sums / count
        row = {"epoch": epoch, "hybrid_loss": float(mean[0]), "ctc_loss": float(mean[1]),
               "ce_loss": float(mean[2]),
               "per": evaluate_per(model, dev_set, cfg.eval_head) if dev_set else None}
        log.append(row)
        if out is not None:
            with open(out / LOG_NAME, "a") as fh:
                fh.write(_format_row(row) + "\n")
            save_checkpoint(out / CHECKPOINT_NAME, model.state_dict(),
                            _header(model, cfg, epoch, frame_stats), opt)
        if progress is not None:
            progress(row)
    return TrainResult(model, log, opt)


def _read_log(path: Path, upto: int | None = None) -> list[dict]:
    if not path.exists():
        return []
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    return [r for r in rows if upto is None or r["epoch"] <= upto]


def _write_log(path: Path, rows: list[dict]):
    path.write_text("".join(_format_row(r) + "\n" for r in rows))


def read_log(path) -> list[dict]:
    return _read_log(Path(path))


def model_from_checkpoint(path) -> tuple[Stage1Model, dict]:
    """Rebuild a model from a checkpoint's config echo and load its weights."""
    ckpt = load_checkpoint(path)
    model = Stage1Model(Stage1Config.from_dict(ckpt.model_config))
    model.load_state_dict(ckpt.params)
    return model, ckpt.header
