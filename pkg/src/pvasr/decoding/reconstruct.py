"""Phoneme-to-sentence reconstruction by lexicon-constrained beam search.

Each word of a hypothesis consumes a contiguous span of the input phonemes
(word boundaries stripped). The span is scored against the word's
pronunciation by a weighted edit alignment whose penalties are all <= 0,
so noisy phonemes can still land on the intended word. Hypotheses are
ranked by

    edit penalties + lm_weight * LM log-prob + word_bonus * words
    + boundary_bonus * (word ends that coincide with a "_" hint)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..data.text import Lexicon
from ..data.vocab import BOUNDARY, VOCAB
from ..errors import EmptyInput, EmptyLexicon
from .lm import BOS, EOS, NGramLM

NEG_INF = -math.inf

# Lip-shape confusions worth discounting: bilabials, alveolar stops,
# labiodentals, and the vowel pair noted in observed decoder errors.
VISEME_CONFUSIONS = (
    ("P", "B"), ("P", "M"), ("B", "M"), ("T", "D"), ("S", "Z"), ("F", "V"),
    ("TH", "DH"), ("SH", "ZH"), ("CH", "JH"), ("K", "G"), ("AO", "OY"),
)


@dataclass
class ReconstructParams:
    beam_width: int = 8
    sub_cost: float = -1.0
    ins_cost: float = -1.5
    del_cost: float = -1.5
    lm_weight: float = 1.0
    word_bonus: float = 0.5
    boundary_bonus: float = 1.0
    max_slack: int = 2
    # candidate spans scoring below -(prune_base + prune_per_phone * len(pron)) are dropped;
    # None keeps every span
    prune_base: float | None = 0.5
    prune_per_phone: float = 0.5
    confusion: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        for name in ("sub_cost", "ins_cost", "del_cost"):
            if getattr(self, name) > 0:
                raise ValueError(f"{name} must be <= 0 (log-penalty units)")

    def substitution_matrix(self) -> np.ndarray:
        n = len(VOCAB)
        m = np.full((n + 1, n + 1), self.sub_cost)
        np.fill_diagonal(m, 0.0)
        for (a, b), cost in self.confusion.items():
            ia, ib = VOCAB.index[a], VOCAB.index[b]
            m[ia, ib] = m[ib, ia] = cost
        m[:, n] = NEG_INF  # padding column
        return m


def confusion_table(cost: float = -0.25, pairs=VISEME_CONFUSIONS) -> dict[tuple[str, str], float]:
    return {pair: cost for pair in pairs}


@dataclass
class BeamHypothesis:
    words: tuple[str, ...]
    position: int
    edit_penalty: float
    lm_logprob: float
    boundary_hits: int
    spans: tuple[tuple[int, int, tuple[str, ...]], ...]
    lm_state: tuple
    score: float
    complete: bool = False
    parent: "BeamHypothesis | None" = None

    def sort_key(self):
        return (-self.score, self.words)


def align_score(pron: Sequence[str], span: Sequence[str], params: ReconstructParams,
                sub: np.ndarray | None = None) -> float:
    """Best weighted edit alignment score of ``span`` against ``pron`` (scalar DP)."""
    sub = params.substitution_matrix() if sub is None else sub
    p = VOCAB.encode(pron)
    x = VOCAB.encode(span)
    m, n = len(p), len(x)
    d = np.empty((m + 1, n + 1))
    d[0, :] = np.arange(n + 1) * params.ins_cost
    d[:, 0] = np.arange(m + 1) * params.del_cost
    for a in range(1, m + 1):
        for b in range(1, n + 1):
            d[a, b] = max(d[a - 1, b - 1] + sub[p[a - 1], x[b - 1]],
                          d[a - 1, b] + params.del_cost,
                          d[a, b - 1] + params.ins_cost)
    return float(d[m, n])


def span_scores(pron: Sequence[str], codes: np.ndarray, params: ReconstructParams,
                sub: np.ndarray) -> np.ndarray:
    """Alignment scores for every start and span length.

    Returns ``out[i, L]`` for span ``codes[i:i+L]``, ``L`` in ``0..len(pron)+max_slack``;
    spans running past the input are ``-inf``.
    """
    n = len(codes)
    p = VOCAB.encode(pron)
    m = len(p)
    lmax = m + params.max_slack
    pad = len(VOCAB)
    padded = np.concatenate([codes, np.full(lmax, pad, dtype=np.int64)])
    win = np.lib.stride_tricks.sliding_window_view(padded, lmax)[:n]  # [n, lmax]
    prev = np.tile(np.arange(lmax + 1) * params.ins_cost, (n, 1))
    for a in range(1, m + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = a * params.del_cost
        subrow = sub[p[a - 1]][win]  # [n, lmax]
        diag = prev[:, :-1] + subrow
        up = prev[:, 1:] + params.del_cost
        best = np.maximum(diag, up)
        for b in range(1, lmax + 1):
            cur[:, b] = np.maximum(best[:, b - 1], cur[:, b - 1] + params.ins_cost)
        prev = cur
    valid = (np.arange(n)[:, None] + np.arange(lmax + 1)[None, :]) <= n
    return np.where(valid, prev, NEG_INF)


def _strip_boundaries(phonemes: Sequence[str]) -> tuple[list[str], set[int]]:
    stripped: list[str] = []
    hints: set[int] = set()
    for tok in phonemes:
        if tok == BOUNDARY:
            if stripped:
                hints.add(len(stripped))
        else:
            stripped.append(tok)
    return stripped, hints


def candidate_spans(stripped: Sequence[str], lexicon: Lexicon, params: ReconstructParams):
    """Per start position, the (word, pron, end, edit score) extensions worth exploring."""
    sub = params.substitution_matrix()
    codes = np.asarray(VOCAB.encode(stripped), dtype=np.int64)
    n = len(codes)
    per_start: list[list[tuple[str, tuple[str, ...], int, float]]] = [[] for _ in range(n)]
    for word, pron in lexicon.pronunciations():
        m = len(pron)
        scores = span_scores(pron, codes, params, sub)
        lo = max(1, m - params.max_slack)
        floor = NEG_INF if params.prune_base is None else -(params.prune_base + params.prune_per_phone * m)
        for length in range(lo, m + params.max_slack + 1):
            col = scores[:, length]
            for i in np.nonzero((col > NEG_INF) & (col >= floor - 1e-12))[0]:
                per_start[i].append((word, pron, int(i) + length, float(col[i])))
    for lst in per_start:
        lst.sort(key=lambda c: (c[0], c[2], c[1]))
    return per_start


def _total(edit, lm, words, hits, params: ReconstructParams) -> float:
    return edit + params.lm_weight * lm + params.word_bonus * words + params.boundary_bonus * hits


def reconstruct(phonemes: Sequence[str], lexicon: Lexicon, lm: NGramLM,
                params: ReconstructParams | None = None):
    """Decode a phoneme sequence into words.

    Returns ``(sentence, nbest)`` where ``nbest`` lists complete
    hypotheses, best first, at most ``beam_width`` long.
    """
    params = params or ReconstructParams()
    if len(lexicon) == 0:
        raise EmptyLexicon("lexicon has no entries")
    stripped, hints = _strip_boundaries(phonemes)
    if not stripped:
        raise EmptyInput("no phonemes to reconstruct")
    n = len(stripped)
    per_start = candidate_spans(stripped, lexicon, params)
    k = params.beam_width

    root = BeamHypothesis((), 0, 0.0, 0.0, 0, (), lm.state([BOS]), 0.0)
    pending: list[dict[tuple, BeamHypothesis]] = [dict() for _ in range(n + 1)]
    pending[0][()] = root
    for i in range(n):
        beam = sorted(pending[i].values(), key=BeamHypothesis.sort_key)[:k]
        pending[i] = {}
        for hyp in beam:
            for word, pron, end, edit in per_start[i]:
                lp = lm.logprob(word, hyp.lm_state)
                words = hyp.words + (word,)
                hit = 1 if end in hints else 0
                e = hyp.edit_penalty + edit
                l_ = hyp.lm_logprob + lp
                h = hyp.boundary_hits + hit
                score = _total(e, l_, len(words), h, params)
                slot = pending[end]
                old = slot.get(words)
                if old is None or score > old.score:
                    slot[words] = BeamHypothesis(
                        words, end, e, l_, h, hyp.spans + ((i, end, pron),),
                        lm.state((BOS,) + words), score, parent=hyp)

    finals = []
    for hyp in pending[n].values():
        lp = hyp.lm_logprob + lm.logprob(EOS, hyp.lm_state)
        score = _total(hyp.edit_penalty, lp, len(hyp.words), hyp.boundary_hits, params)
        finals.append(BeamHypothesis(hyp.words, n, hyp.edit_penalty, lp, hyp.boundary_hits,
                                     hyp.spans, hyp.lm_state, score, True, hyp))
    finals.sort(key=BeamHypothesis.sort_key)
    nbest = finals[:k]
    sentence = list(nbest[0].words) if nbest else []
    return sentence, nbest


def score_hypothesis(h: BeamHypothesis, lm: NGramLM, params: ReconstructParams,
                     phonemes: Sequence[str] | None = None) -> float:
    """Recompute a hypothesis score from its spans and words.

    When the original input is supplied the edit penalties are re-aligned
    from scratch; otherwise the stored edit total is trusted.
    """
    if phonemes is not None:
        stripped, hints = _strip_boundaries(phonemes)
        sub = params.substitution_matrix()
        edit = sum(align_score(pron, stripped[a:b], params, sub) for a, b, pron in h.spans)
        hits = sum(1 for _, b, _ in h.spans if b in hints)
    else:
        edit, hits = h.edit_penalty, h.boundary_hits
    lm_lp = lm.score_sentence(h.words, eos=h.complete)
    return _total(edit, lm_lp, len(h.words), hits, params)
