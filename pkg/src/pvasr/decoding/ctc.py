"""CTC decoding: greedy best-path and prefix beam search."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from ..data.vocab import CTC_BLANK, VOCAB
from ..tensor import Tensor


def _as_array(logprobs) -> np.ndarray:
    return logprobs.data if isinstance(logprobs, Tensor) else np.asarray(logprobs, dtype=np.float64)


def collapse(path, blank: int = CTC_BLANK) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def ctc_greedy_ids(logprobs, blank: int = CTC_BLANK) -> list[int]:
    return collapse(np.argmax(_as_array(logprobs), axis=1), blank)


def ctc_greedy(logprobs) -> list[str]:
    """Per-frame argmax, collapse repeats, remove blanks; returns phoneme tokens."""
    return VOCAB.from_ctc(ctc_greedy_ids(logprobs))


def _logadd(a: float, b: float) -> float:
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = max(a, b)
    return m + np.log1p(np.exp(-abs(a - b)))


def ctc_prefix_beam_ids(logprobs, beam_width: int = 8, blank: int = CTC_BLANK):
    """Prefix beam search over label ids.

    Each prefix tracks the log mass of paths ending in blank and in its
    last label. Returns up to ``beam_width`` ``(ids, logprob)`` pairs sorted
    by total log-probability (ties broken by the id sequence).
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    lp = _as_array(logprobs)
    t_len, v = lp.shape
    ninf = -np.inf
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, ninf)}
    for t in range(t_len):
        row = lp[t]
        nxt: dict[tuple, list[float]] = defaultdict(lambda: [ninf, ninf])
        for prefix, (pb, pnb) in beams.items():
            total = _logadd(pb, pnb)
            entry = nxt[prefix]
            entry[0] = _logadd(entry[0], total + row[blank])
            last = prefix[-1] if prefix else None
            for k in range(v):
                if k == blank:
                    continue
                p = row[k]
                if k == last:
                    # repeat without blank stays on the same prefix
                    entry[1] = _logadd(entry[1], pnb + p)
                    ext = nxt[prefix + (k,)]
                    ext[1] = _logadd(ext[1], pb + p)
                else:
                    ext = nxt[prefix + (k,)]
                    ext[1] = _logadd(ext[1], total + p)
        ranked = sorted(nxt.items(), key=lambda kv: (-_logadd(kv[1][0], kv[1][1]), kv[0]))
        beams = {pfx: (pb, pnb) for pfx, (pb, pnb) in ranked[:beam_width]}
    out = [(list(pfx), _logadd(pb, pnb)) for pfx, (pb, pnb) in beams.items()]
    out.sort(key=lambda x: (-x[1], x[0]))
    return out


def ctc_prefix_beam(logprobs, beam_width: int = 8) -> list[tuple[list[str], float]]:
    """n-best ``(phonemes, logprob)`` list, best first."""
    return [(VOCAB.from_ctc(ids), score) for ids, score in ctc_prefix_beam_ids(logprobs, beam_width)]
