"""Backoff n-gram language model: absolute-discount estimation and ARPA I/O.

Probabilities are kept as natural logs internally; ARPA files carry log10.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import EmptyCorpus, MissingFile, ParseError

BOS = "<s>"
EOS = "</s>"
UNK_WORD = "<unk>"
LN10 = math.log(10.0)
ARPA_FLOOR = -99.0


class NGramLM:
    """Katz-style backoff model.

    ``probs[k][context][word]`` holds explicit log-probabilities of order
    ``k`` (``len(context) == k - 1``); ``backoff[context]`` the log backoff
    weight applied when ``word`` has no explicit entry after ``context``.
    The unigram table covers the whole vocabulary, ``<unk>`` included.
    """

    def __init__(self, order: int, probs: dict, backoff: dict):
        self.order = order
        self.probs = probs
        self.backoff = backoff
        self.vocab = [w for w in probs[1][()] if w != BOS]
        self._vocab_set = set(self.vocab)
        self._cache: dict = {}

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        """Natural-log conditional probability of ``word`` after ``context``."""
        if word not in self._vocab_set:
            word = UNK_WORD
        ctx = tuple(context)[max(0, len(context) - (self.order - 1)):] if self.order > 1 else ()
        key = (word, ctx)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        acc = 0.0
        c = ctx
        while True:
            table = self.probs[len(c) + 1].get(c)
            if table is not None and word in table:
                lp = acc + table[word]
                break
            if not c:
                lp = acc + self.probs[1][()].get(word, ARPA_FLOOR * LN10)
                break
            acc += self.backoff.get(c, 0.0)
            c = c[1:]
        self._cache[key] = lp
        return lp

    def state(self, history: Sequence[str]) -> tuple:
        """The part of ``history`` that can influence future predictions."""
        if self.order == 1:
            return ()
        return tuple(history)[-(self.order - 1):]

    def score_sentence(self, words: Sequence[str], eos: bool = True) -> float:
        hist: list[str] = [BOS]
        total = 0.0
        for w in list(words) + ([EOS] if eos else []):
            total += self.logprob(w, self.state(hist))
            hist.append(w)
        return total

    def contexts(self) -> list[tuple]:
        out = [()]
        for k in range(2, self.order + 1):
            out.extend(self.probs[k])
        return out

    def normalization_error(self, contexts: Iterable[tuple] | None = None) -> float:
        """Max over contexts of |sum_w p(w | context) - 1| (OOV mass included)."""
        worst = 0.0
        for ctx in (self.contexts() if contexts is None else contexts):
            s = sum(math.exp(self.logprob(w, ctx)) for w in self.vocab)
            worst = max(worst, abs(s - 1.0))
        return worst

    # -- ARPA -----------------------------------------------------------------
    def to_arpa(self) -> str:
        lines = ["", "\\data\\"]
        sections = []
        for k in range(1, self.order + 1):
            entries = []
            for ctx, table in self.probs[k].items():
                for w, lp in table.items():
                    gram = ctx + (w,)
                    lp10 = ARPA_FLOOR if lp <= ARPA_FLOOR * LN10 else lp / LN10
                    row = f"{lp10:.10g}\t{' '.join(gram)}"
                    if k < self.order and gram in self.backoff:
                        row += f"\t{self.backoff[gram] / LN10:.10g}"
                    entries.append(row)
            lines.append(f"ngram {k}={len(entries)}")
            sections.append((k, entries))
        for k, entries in sections:
            lines += ["", f"\\{k}-grams:"] + entries
        lines += ["", "\\end\\", ""]
        return "\n".join(lines)

    def save_arpa(self, path):
        Path(path).write_text(self.to_arpa())

    @classmethod
    def from_arpa(cls, text: str, source: str = "<arpa>") -> "NGramLM":
        counts: dict[int, int] = {}
        probs: dict[int, dict] = {}
        backoff: dict[tuple, float] = {}
        section = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
                continue
            if line == "\\end\\":
                section = "end"
                break
            if line.startswith("\\") and line.endswith("-grams:"):
                try:
                    section = int(line[1:line.index("-")])
                except ValueError:
                    raise ParseError(f"bad section header {line!r}", lineno, source) from None
                probs.setdefault(section, {})
                continue
            if section == "data":
                if not line.startswith("ngram "):
                    raise ParseError(f"unexpected line in \\data\\: {line!r}", lineno, source)
                k, n = line[6:].split("=")
                counts[int(k)] = int(n)
                continue
            if isinstance(section, int):
                parts = line.split()
                k = section
                if len(parts) not in (k + 1, k + 2):
                    raise ParseError(f"expected {k}-gram entry, got {line!r}", lineno, source)
                try:
                    lp = float(parts[0]) * LN10
                    bo = float(parts[k + 1]) * LN10 if len(parts) == k + 2 else None
                except ValueError:
                    raise ParseError(f"non-numeric field in {line!r}", lineno, source) from None
                gram = tuple(parts[1:k + 1])
                probs[k].setdefault(gram[:-1], {})[gram[-1]] = lp
                if bo is not None:
                    backoff[gram] = bo
                continue
            raise ParseError(f"unexpected content {line!r}", lineno, source)
        if section != "end":
            raise ParseError("missing \\end\\ marker", None, source)
        if not counts or 1 not in probs:
            raise ParseError("no unigram section", None, source)
        for k, n in counts.items():
            got = sum(len(t) for t in probs.get(k, {}).values())
            if got != n:
                raise ParseError(f"header declares {n} {k}-grams, found {got}", None, source)
        order = max(counts)
        for k in range(1, order + 1):
            probs.setdefault(k, {})
        return cls(order, probs, backoff)

    @classmethod
    def load_arpa(cls, path) -> "NGramLM":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"ARPA file not found: {path}")
        return cls.from_arpa(path.read_text(), str(path))


def estimate_ngram(sentences: Iterable[Sequence[str]], order: int = 2, discount: float = 0.5) -> NGramLM:
    """Absolute-discounting backoff estimate over word sentences.

    Each observed n-gram keeps ``(c - discount) / c(context)``; the freed mass
    is spread over unseen words in proportion to the next-lower-order model.
    The unigram level interpolates with a uniform distribution over the
    vocabulary plus ``</s>`` and ``<unk>``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    sents = [list(s) for s in sentences]
    sents = [s for s in sents if s]
    if not sents:
        raise EmptyCorpus("cannot estimate a language model from an empty corpus")

    grams: dict[int, Counter] = {k: Counter() for k in range(1, order + 1)}
    for s in sents:
        toks = [BOS] + s + [EOS]
        for i in range(1, len(toks)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                grams[k][tuple(toks[i - k + 1:i + 1])] += 1

    uni = grams[1]
    total = sum(uni.values())
    vocab = sorted({g[0] for g in uni} | {EOS, UNK_WORD})
    spread = discount * len(uni) / total / len(vocab)
    unigram = {w: math.log(max(uni.get((w,), 0) - discount, 0.0) / total + spread) for w in vocab}
    unigram[BOS] = ARPA_FLOOR * LN10
    probs: dict[int, dict] = {1: {(): unigram}}
    backoff: dict[tuple, float] = {}

    partial = NGramLM(1, {1: {(): unigram}}, {})
    for k in range(2, order + 1):
        by_ctx: dict[tuple, dict[str, int]] = defaultdict(dict)
        for gram, c in grams[k].items():
            by_ctx[gram[:-1]][gram[-1]] = c
        level: dict[tuple, dict[str, float]] = {}
        for ctx in sorted(by_ctx):
            nxt = by_ctx[ctx]
            c_ctx = sum(nxt.values())
            level[ctx] = {w: math.log((c - discount) / c_ctx) for w, c in sorted(nxt.items())}
            lower_seen = sum(math.exp(partial.logprob(w, ctx[1:])) for w in nxt)
            freed = discount * len(nxt) / c_ctx
            backoff[ctx] = math.log(freed / (1.0 - lower_seen))
        probs[k] = level
        partial = NGramLM(k, {**probs}, dict(backoff))
    return NGramLM(order, probs, backoff)
