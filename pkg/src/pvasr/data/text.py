"""Lexicon handling, light text normalisation and lookup-based G2P."""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import ContainsDigits, MissingFile, ParseError
from .vocab import BOUNDARY, UNK, VOCAB

_STRIP = re.compile(r"[^A-Z' ]+")


class Lexicon:
    """Word -> ordered list of pronunciations (first entry is canonical)."""

    def __init__(self, entries: dict[str, list[tuple[str, ...]]] | None = None):
        self.entries: dict[str, list[tuple[str, ...]]] = {}
        for word, prons in (entries or {}).items():
            for pron in prons:
                self.add(word, pron)

    def add(self, word: str, pron: Sequence[str]):
        pron = tuple(pron)
        bad = [p for p in pron if p not in VOCAB or p in (UNK, BOUNDARY)]
        if bad or not pron:
            raise ValueError(f"invalid pronunciation for {word}: {' '.join(pron)}")
        prons = self.entries.setdefault(word.upper(), [])
        if pron not in prons:
            prons.append(pron)

    def __contains__(self, word):
        return word in self.entries

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, word) -> list[tuple[str, ...]]:
        return self.entries[word]

    def words(self) -> list[str]:
        return list(self.entries)

    def pronunciations(self):
        """Yield ``(word, pron)`` for every alternate pronunciation."""
        for word, prons in self.entries.items():
            for pron in prons:
                yield word, pron

    def subset(self, words: Iterable[str]) -> "Lexicon":
        return Lexicon({w: self.entries[w] for w in words})

    @classmethod
    def load(cls, path) -> "Lexicon":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"lexicon not found: {path}")
        return cls.parse(path.read_text(), str(path))

    @classmethod
    def parse(cls, text: str, source: str = "<lexicon>") -> "Lexicon":
        lex = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, *pron = line.split()
            try:
                lex.add(word, pron)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, source) from None
        return lex

    def dumps(self) -> str:
        return "".join(f"{w} {' '.join(p)}\n" for w, p in self.pronunciations())

    def save(self, path):
        Path(path).write_text(self.dumps())


def default_lexicon() -> Lexicon:
    """The starter lexicon shipped with the package."""
    text = resources.files("pvasr.data.resources").joinpath("lexicon.txt").read_text()
    return Lexicon.parse(text, "lexicon.txt")


def normalize_text(raw: str) -> list[str]:
    """Uppercase, keep apostrophes, drop other punctuation, collapse whitespace.

    Digits are rejected rather than verbalised.
    """
    if any(ch.isdigit() for ch in raw):
        raise ContainsDigits(f"numbers are not supported: {raw!r}")
    text = _STRIP.sub(" ", raw.upper().replace("’", "'"))
    words = []
    for w in text.split():
        w = w.strip("'")
        if w:
            words.append(w)
    return words


def g2p(words: Sequence[str], lexicon: Lexicon) -> list[str]:
    """Concatenate canonical pronunciations with ``_`` between words; OOV -> ``<unk>``."""
    out: list[str] = []
    for i, word in enumerate(words):
        if i:
            out.append(BOUNDARY)
        prons = lexicon.entries.get(word)
        if prons:
            out.extend(prons[0])
        else:
            out.append(UNK)
    return out
