"""Corpus builders and evaluation loops shared by the CLI and the acceptance checks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data.augment import augment_phonemes
from .data.synth import (VisemePrototypeTable, apply_frame_stats, frame_stats, sample_sentences,
                         synth_corpus)
from .data.text import Lexicon, default_lexicon, g2p
from .decoding.lm import NGramLM, estimate_ngram
from .decoding.reconstruct import ReconstructParams, reconstruct
from .metrics import EditStats, align


def distinct_words(lexicon: Lexicon, n: int, seed: int = 0) -> list[str]:
    """``n`` seeded words with a single pronunciation shared by no other chosen word."""
    counts = Counter(p for _, p in lexicon.pronunciations())
    pool = sorted(w for w in lexicon.words()
                  if len(lexicon[w]) == 1 and counts[lexicon[w][0]] == 1)
    if n > len(pool):
        raise ValueError(f"only {len(pool)} unambiguous words available, asked for {n}")
    rng = np.random.default_rng(seed)
    return sorted(pool[i] for i in rng.choice(len(pool), size=n, replace=False))


@dataclass
class ToyCorpus:
    lexicon: Lexicon
    train_sentences: list[list[str]]
    dev_sentences: list[list[str]]
    train: list
    dev: list
    frame_stats: tuple[float, float]


def build_toy_corpus(n_train: int, n_dev: int, n_words: int = 50, seed: int = 0,
                     noise_sigma: float = 0.01, render: int = 24, min_words: int = 2,
                     max_words: int = 6, speaker_jitter: float = 0.0,
                     prototypes: VisemePrototypeTable | None = None,
                     lexicon: Lexicon | None = None) -> ToyCorpus:
    """Sentences over a small unambiguous vocabulary, rendered and normalised with train stats."""
    base = lexicon or default_lexicon()
    words = distinct_words(base, n_words, seed)
    lex = base.subset(words)
    sents = sample_sentences(words, n_train + n_dev, seed + 1, min_words, max_words)
    utts = synth_corpus(sents, lex, prototypes or VisemePrototypeTable.default(), noise_sigma,
                        seed + 2, render, speaker_jitter)
    train, dev = utts[:n_train], utts[n_train:]
    stats = frame_stats(train)
    apply_frame_stats(utts, *stats)
    return ToyCorpus(lex, sents[:n_train], sents[n_train:], train, dev, stats)


def stage2_wer(sentences: Sequence[Sequence[str]], lexicon: Lexicon, lm: NGramLM,
               error_rate: float, params: ReconstructParams, seed: int = 0) -> tuple[EditStats, float]:
    """Corpus WER of reconstructing g2p phonemes corrupted at ``error_rate``.

    Utterance ``i`` is corrupted with seed ``(seed, i)``, so every decoder
    configuration sees the same noisy inputs.
    """
    total = EditStats()
    for i, words in enumerate(sentences):
        clean = g2p(list(words), lexicon)
        noisy = augment_phonemes(clean, error_rate, [seed, i]) if error_rate else clean
        if not [t for t in noisy if t != "_"]:
            hyp: list[str] = []
        else:
            hyp, _ = reconstruct(noisy, lexicon, lm, params)
        total = total + align(list(words), hyp)
    return total, total.rate


def ablation_rows(sentences, lexicon: Lexicon, lm: NGramLM, rates: Sequence[float],
                  params: ReconstructParams, seed: int = 0) -> list[tuple[float, float, float]]:
    """``(rate, greedy WER, beam WER)`` per introduced error rate."""
    greedy = ReconstructParams(**{**params.__dict__, "beam_width": 1})
    rows = []
    for r in rates:
        _, g = stage2_wer(sentences, lexicon, lm, r, greedy, seed)
        _, b = stage2_wer(sentences, lexicon, lm, r, params, seed)
        rows.append((float(r), g, b))
    return rows


def viseme_pair_trial(context: Sequence[str], target: str, lexicon: Lexicon,
                      lm: NGramLM, params: ReconstructParams, seed: int, groups) -> str:
    """Decode ``context + [target]`` after re-drawing every collapsed-viseme phoneme.

    A visual front-end cannot tell members of a viseme group apart, so each
    phoneme in such a group is replaced by a uniform draw from its group.
    Returns the word decoded in the target's position.
    """
    rng = np.random.default_rng(seed)
    group_of = {p: g for g in groups for p in g}
    words = list(context) + [target]
    observed = []
    for tok in g2p(words, lexicon):
        g = group_of.get(tok)
        observed.append(g[int(rng.integers(len(g)))] if g else tok)
    hyp, _ = reconstruct(observed, lexicon, lm, params)
    return hyp[len(context)] if len(hyp) > len(context) else ""
