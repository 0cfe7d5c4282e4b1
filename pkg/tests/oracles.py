"""Slow reference implementations shared by the unit and acceptance tests."""

import math
import itertools

from pvasr.decoding.reconstruct import align_score


def exhaustive_best(phonemes, lexicon, lm, params, max_words=3):
    """Best sentence by enumerating every word sequence and every segmentation."""
    stripped = [t for t in phonemes if t != "_"]
    hints = set()
    n = 0
    for t in phonemes:
        if t == "_":
            if n:
                hints.add(n)
        else:
            n += 1
    sub = params.substitution_matrix()
    best, best_words = -math.inf, None
    entries = list(lexicon.pronunciations())
    for k in range(1, max_words + 1):
        for combo in itertools.product(entries, repeat=k):
            for cuts in itertools.combinations(range(1, len(stripped)), k - 1):
                bounds = (0,) + cuts + (len(stripped),)
                edit, hits = 0.0, 0
                for (w, pron), a, b in zip(combo, bounds, bounds[1:]):
                    if not (len(pron) - params.max_slack <= b - a <= len(pron) + params.max_slack):
                        break
                    edit += align_score(pron, stripped[a:b], params, sub)
                    hits += b in hints
                else:
                    words = [w for w, _ in combo]
                    s = (edit + params.lm_weight * lm.score_sentence(words) + params.word_bonus * k
                         + params.boundary_bonus * hits)
                    if s > best or (s == best and tuple(words) < tuple(best_words)):
                        best, best_words = s, words
    return best_words, best
