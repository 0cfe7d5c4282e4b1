"""CTC, cross-entropy and the weighted hybrid objective."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .data.vocab import CTC_BLANK
from .errors import (AlphaOutOfRange, InfeasibleTarget, InvalidDistribution, LengthMismatch,
                     TooLarge)
from .functional import log_softmax
from .tensor import Tensor, _record, as_tensor, getitem, mean


@dataclass(frozen=True)
class HybridLossConfig:
    """Mixing weight and reductions. ``ctc_reduction`` is "token" (NLL / target length)
    or "sequence" (whole-utterance NLL); CE is always a per-token mean."""

    alpha: float = 0.9
    label_smoothing: float = 0.0
    ctc_reduction: str = "sequence"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.ctc_reduction not in ("token", "sequence"):
            raise ValueError(f"ctc_reduction must be 'token' or 'sequence', got {self.ctc_reduction!r}")


def min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit ``target``: one frame per label plus a blank per repeat."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check_rows(lp: np.ndarray, tol: float = 1e-6):
    dev = np.abs(np.exp(lp).sum(axis=1) - 1.0)
    if dev.size and dev.max() > tol:
        raise InvalidDistribution(f"row probabilities deviate from 1 by {dev.max():.3g}")


_lse = np.logaddexp


def ctc_alpha_beta(lp: np.ndarray, target: Sequence[int], blank: int = CTC_BLANK):
    """Log-domain forward/backward tables over the blank-interleaved target."""
    t_len = lp.shape[0]
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    s = len(ext)
    # skip transition s-2 -> s allowed onto a label that differs from the label two back
    skip = np.zeros(s, dtype=bool)
    if s > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    ninf = -np.inf
    alpha = np.full((t_len, s), ninf)
    alpha[0, 0] = lp[0, ext[0]]
    if s > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = _lse(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], _lse(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + lp[t, ext]
    beta = np.full((t_len, s), ninf)
    beta[-1, -1] = lp[-1, ext[-1]]
    if s > 1:
        beta[-1, -2] = lp[-1, ext[-2]]
    skip_from = np.zeros(s, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = _lse(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip_from[:-2], _lse(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + lp[t, ext]
    return ext, alpha, beta


def ctc_log_likelihood(logprobs, target: Sequence[int], blank: int = CTC_BLANK,
                       normalize: bool = False, check: bool = True) -> Tensor:
    """Negative log-likelihood ``-log p(target | logprobs)`` as a differentiable scalar.

    ``logprobs[T, V+1]`` are per-frame log-distributions (blank included);
    ``target`` holds label ids. With ``normalize`` the loss is divided by
    the target length.
    """
    logprobs = as_tensor(logprobs)
    lp = logprobs.data
    target = [int(k) for k in target]
    t_len = lp.shape[0]
    if t_len < min_frames(target):
        raise InfeasibleTarget(f"{t_len} frames cannot emit {len(target)} labels "
                               f"(needs {min_frames(target)})")
    if check:
        _check_rows(lp)
    ext, alpha, beta = ctc_alpha_beta(lp, target, blank)
    ends = alpha[-1, -1] if len(ext) == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    log_p = float(ends)
    if not np.isfinite(log_p):
        raise InfeasibleTarget("target has zero probability under these log-probs")
    scale = 1.0 / max(len(target), 1) if normalize else 1.0

    def bw(g):
        # occupancy: sum over extended positions with label k of alpha*beta / (p * y_tk)
        post = alpha + beta - lp[:, ext] - log_p
        occ = np.zeros_like(lp)
        np.add.at(occ.T, ext, np.exp(post).T)
        return (-g * scale * occ,)

    return _record(np.array(-log_p * scale), (logprobs,), "ctc", bw)


@lru_cache(maxsize=32)
def _all_paths(t_len: int, v: int) -> np.ndarray:
    return np.array(list(itertools.product(range(v), repeat=t_len)), dtype=np.int64).reshape(-1, t_len)


def ctc_brute_force(logprobs, target: Sequence[int], blank: int = CTC_BLANK) -> float:
    """``-log p(target)`` by summing every frame labelling that collapses to ``target``."""
    lp = logprobs.data if isinstance(logprobs, Tensor) else np.asarray(logprobs, dtype=np.float64)
    t_len, v = lp.shape
    if t_len > 10:
        raise TooLarge(f"brute force limited to T <= 10, got {t_len}")
    if v ** t_len > 5_000_000:
        raise TooLarge(f"{v}^{t_len} paths is too many to enumerate")
    paths = _all_paths(t_len, v)
    target = np.asarray([int(k) for k in target], dtype=np.int64)
    prev = np.concatenate([np.full((len(paths), 1), -1), paths[:, :-1]], axis=1)
    keep = (paths != blank) & (paths != prev)
    n_keep = keep.sum(axis=1)
    ok = n_keep == len(target)
    if len(target):
        pos = np.clip(np.cumsum(keep, axis=1) - 1, 0, len(target) - 1)
        ok &= np.all(~keep | (paths == target[pos]), axis=1)
    if not ok.any():
        return float("inf")
    scores = lp[np.arange(t_len)[None, :], paths[ok]].sum(axis=1)
    m = scores.max()
    return float(-(m + np.log(np.exp(scores - m).sum())))


def cross_entropy(logits, targets: Sequence[int], smoothing: float = 0.0) -> Tensor:
    """Mean token NLL with optional uniform label smoothing.

    Per position the loss is ``(1 - s) * NLL + s * mean_k(-log p_k)``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != len(targets):
        raise LengthMismatch(f"{logits.shape[0] if logits.ndim else 0} logit rows vs {len(targets)} targets")
    logp = log_softmax(logits, axis=-1)
    nll = -getitem(logp, (np.arange(len(targets)), targets))
    if smoothing:
        uniform = -mean(logp, axis=-1)
        nll = nll * (1.0 - smoothing) + uniform * smoothing
    return mean(nll)


def hybrid_loss(ce, ctc, cfg: HybridLossConfig) -> Tensor:
    """``alpha * CE + (1 - alpha) * CTC``."""
    if not 0.0 <= cfg.alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {cfg.alpha}")
    ce, ctc = as_tensor(ce), as_tensor(ctc)
    if cfg.alpha == 1.0:
        return ce * 1.0
    if cfg.alpha == 0.0:
        return ctc * 1.0
    return ce * cfg.alpha + ctc * (1.0 - cfg.alpha)
