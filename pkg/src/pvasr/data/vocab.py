"""ARPAbet phoneme vocabulary and the index conventions used by the model heads.

Token ids ``0..40`` follow the vocabulary order below. The CTC head uses a
42-way softmax with the blank at column 0 and token ``i`` at column
``i + 1``. The attention decoder predicts 42 classes: the 41 tokens plus
EOS at column 41, and reads BOS (id 42) as an input-only symbol. Shifted
into the CTC numbering these sentinels sit at 42 (EOS) and 43 (BOS).
"""

from __future__ import annotations

from typing import Iterable, Sequence

UNK = "<unk>"
BOUNDARY = "_"

PHONEMES = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
VOWELS = frozenset({"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH",
                    "IY", "OW", "OY", "UH", "UW"})
CONSONANTS = frozenset(PHONEMES) - VOWELS

TOKENS = (UNK, BOUNDARY) + PHONEMES
VOCAB_SIZE = len(TOKENS)  # 41

CTC_BLANK = 0
CTC_CLASSES = VOCAB_SIZE + 1  # 42
DECODER_CLASSES = VOCAB_SIZE + 1  # tokens + EOS
EOS = VOCAB_SIZE  # 41, decoder output column
BOS = VOCAB_SIZE + 1  # 42, decoder input only


class PhonemeVocab:
    """Ordered token list with a token -> index map."""

    def __init__(self, tokens: Sequence[str] = TOKENS):
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @property
    def phonemes(self) -> tuple[str, ...]:
        return tuple(t for t in self.tokens if t not in (UNK, BOUNDARY))

    def encode(self, seq: Iterable[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in seq]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def to_ctc(self, seq: Iterable[str]) -> list[int]:
        return [i + 1 for i in self.encode(seq)]

    def from_ctc(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i - 1] for i in ids if i != CTC_BLANK]


VOCAB = PhonemeVocab()


def parse_phonemes(text: str) -> list[str]:
    """Split a space-separated phoneme line; unknown symbols become ``<unk>``."""
    return [t if t in VOCAB else UNK for t in text.split()]


def format_phonemes(seq: Iterable[str]) -> str:
    return " ".join(seq)


def split_words(seq: Sequence[str]) -> list[list[str]]:
    """Group a phoneme sequence into words at ``_`` boundaries."""
    words: list[list[str]] = [[]]
    for tok in seq:
        if tok == BOUNDARY:
            words.append([])
        else:
            words[-1].append(tok)
    return [w for w in words if w]
