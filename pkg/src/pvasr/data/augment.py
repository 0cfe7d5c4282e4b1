"""Random phoneme corruption (substitution / deletion / insertion)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import RateOutOfRange
from .vocab import BOUNDARY, PHONEMES, UNK

SUBSTITUTE, DELETE, INSERT = "sub", "del", "ins"


def augment_phonemes(seq: Sequence[str], error_rate: float, rng_seed=None,
                     return_ops: bool = False):
    """Corrupt each token independently with probability ``error_rate``.

    A corrupted phoneme is substituted (by a different phoneme), deleted,
    or followed by an inserted phoneme, each with probability 1/3. Word
    boundaries and ``<unk>`` are never substituted; they draw between
    deletion and insertion so the expected length is unchanged.
    """
    if not 0.0 <= error_rate <= 0.5:
        raise RateOutOfRange(f"error rate must lie in [0, 0.5], got {error_rate}")
    rng = np.random.default_rng(rng_seed)
    out: list[str] = []
    ops: list[tuple[int, str]] = []
    n_ph = len(PHONEMES)
    for i, tok in enumerate(seq):
        if rng.random() >= error_rate:
            out.append(tok)
            continue
        protected = tok in (BOUNDARY, UNK)
        op = (DELETE, INSERT)[rng.integers(2)] if protected else (SUBSTITUTE, DELETE, INSERT)[rng.integers(3)]
        ops.append((i, op))
        if op == SUBSTITUTE:
            j = rng.integers(n_ph - 1)
            cur = PHONEMES.index(tok) if tok in PHONEMES else -1
            if cur >= 0 and j >= cur:
                j += 1
            out.append(PHONEMES[j])
        elif op == INSERT:
            out.append(tok)
            out.append(PHONEMES[rng.integers(n_ph)])
    return (out, ops) if return_ops else out
