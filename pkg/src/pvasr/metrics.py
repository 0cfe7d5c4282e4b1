"""Word and phoneme error rates from a unit-cost Levenshtein alignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyReference


@dataclass(frozen=True)
class EditStats:
    S: int = 0
    D: int = 0
    I: int = 0
    N: int = 0

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def rate(self) -> float:
        if self.N == 0:
            raise EmptyReference("error rate undefined for an empty reference")
        return self.errors / self.N

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(self.S + other.S, self.D + other.D, self.I + other.I, self.N + other.N)


def edit_distance_table(ref: Sequence, hyp: Sequence) -> list[list[int]]:
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row, prev, r = d[i], d[i - 1], ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    return d


def align(ref: Sequence, hyp: Sequence) -> EditStats:
    """Backtrace one minimal alignment, taking the diagonal whenever it is optimal.

    Preferring match/substitution over an insertion+deletion pair only
    changes how errors are split, never their total.
    """
    d = edit_distance_table(ref, hyp)
    i, j = len(ref), len(hyp)
    s = dl = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(s, dl, ins, len(ref))


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> tuple[EditStats, float]:
    """``(S + D + I) / N`` over word tokens; may exceed 1."""
    reference, hypothesis = list(reference), list(hypothesis)
    if not reference:
        raise EmptyReference("reference has no words")
    stats = align(reference, hypothesis)
    return stats, stats.rate


def per(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Phoneme error rate; the boundary token ``_`` counts like any other token."""
    return wer(reference, hypothesis)[1]


def corpus_stats(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> EditStats:
    """Sum edit statistics over ``(reference, hypothesis)`` pairs."""
    total = EditStats()
    for ref, hyp in pairs:
        total = total + align(list(ref), list(hyp))
    return total


def corpus_rate(pairs) -> float:
    """Corpus-level rate: pooled errors over pooled reference length."""
    return corpus_stats(pairs).rate
