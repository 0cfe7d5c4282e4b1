"""Synthetic articulatory data: viseme prototypes, landmark trajectories and rendered crops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import OOVWord, ShapeMismatch
from ..graph import CONTOURS, NUM_LANDMARKS, LandmarkClip, load_template
from ..model import FrameClip
from .text import Lexicon, g2p
from .vocab import BOUNDARY, PHONEMES, UNK, VOCAB

DEFAULT_DWELL = 3
DEFAULT_COLLAPSE = (("B", "P", "M"), ("T", "D"))
CENTER = (0.5, 0.45)

# (open, spread, round, jaw, tuck): coarse mouth posture per phoneme
ARTICULATION = {
    "AA": (0.9, 0.1, 0.0, 0.8, 0.0), "AE": (0.7, 0.5, 0.0, 0.6, 0.0),
    "AH": (0.5, 0.2, 0.0, 0.4, 0.0), "AO": (0.7, -0.2, 0.5, 0.6, 0.0),
    "AW": (0.7, 0.0, 0.4, 0.6, 0.0), "AY": (0.8, 0.3, 0.0, 0.7, 0.0),
    "EH": (0.5, 0.4, 0.0, 0.4, 0.0), "ER": (0.3, 0.0, 0.4, 0.3, 0.0),
    "EY": (0.4, 0.5, 0.0, 0.3, 0.0), "IH": (0.3, 0.5, 0.0, 0.2, 0.0),
    "IY": (0.2, 0.8, 0.0, 0.1, 0.0), "OW": (0.5, -0.3, 0.7, 0.4, 0.0),
    "OY": (0.5, -0.2, 0.6, 0.5, 0.0), "UH": (0.3, -0.2, 0.5, 0.2, 0.0),
    "UW": (0.2, -0.4, 0.9, 0.1, 0.0),
    "B": (0.0, 0.0, 0.0, 0.05, 0.0), "P": (0.0, 0.0, 0.0, 0.05, 0.0), "M": (0.0, 0.0, 0.0, 0.05, 0.0),
    "F": (0.1, 0.1, 0.0, 0.1, 1.0), "V": (0.1, 0.1, 0.0, 0.1, 1.0),
    "TH": (0.25, 0.2, 0.0, 0.2, 0.0), "DH": (0.25, 0.2, 0.0, 0.2, 0.0),
    "T": (0.2, 0.2, 0.0, 0.15, 0.0), "D": (0.2, 0.2, 0.0, 0.15, 0.0),
    "N": (0.2, 0.2, 0.0, 0.15, 0.0), "L": (0.3, 0.2, 0.0, 0.25, 0.0),
    "S": (0.1, 0.5, 0.0, 0.05, 0.0), "Z": (0.1, 0.5, 0.0, 0.05, 0.0),
    "SH": (0.25, -0.2, 0.6, 0.15, 0.0), "ZH": (0.25, -0.2, 0.6, 0.15, 0.0),
    "CH": (0.25, -0.2, 0.6, 0.15, 0.0), "JH": (0.25, -0.2, 0.6, 0.15, 0.0),
    "K": (0.3, 0.1, 0.0, 0.3, 0.0), "G": (0.3, 0.1, 0.0, 0.3, 0.0), "NG": (0.3, 0.1, 0.0, 0.3, 0.0),
    "R": (0.25, -0.1, 0.5, 0.2, 0.0), "W": (0.15, -0.4, 1.0, 0.1, 0.0),
    "Y": (0.2, 0.6, 0.0, 0.1, 0.0), "HH": (0.4, 0.1, 0.0, 0.3, 0.0),
}
NEUTRAL = (0.15, 0.0, 0.0, 0.1, 0.0)


def deform(template: np.ndarray, open_=0.0, spread=0.0, round_=0.0, jaw=0.0, tuck=0.0,
           corner_lift=0.0, inner_shift=(0.0, 0.0), contours=CONTOURS) -> np.ndarray:
    """Move the neutral template into a mouth posture.

    Each contour is rescaled about its own centroid: lips open vertically with
    ``open_``, widen with ``spread`` and narrow with ``round_``; ``jaw`` drops
    the lower half and the jaw line, ``tuck`` lifts the lower lip.
    """
    pts = np.array(template, dtype=np.float64)
    if pts.shape != (NUM_LANDMARKS, 2):
        raise ShapeMismatch(f"template must be [{NUM_LANDMARKS},2], got {pts.shape}")
    out = pts.copy()
    width = 1.0 + 0.25 * spread - 0.3 * round_
    for name, first, count, _ in contours:
        sl = slice(first, first + count)
        c = pts[sl].mean(axis=0)
        rel = pts[sl] - c
        half = np.abs(rel).max(axis=0)
        u, v = rel[:, 0] / half[0], rel[:, 1] / half[1]
        lower = np.clip(v, 0.0, None)
        if name == "outer_lip":
            ry, rx = 0.07 + 0.06 * open_, half[0] * width
        elif name == "inner_lip":
            ry, rx = 0.004 + 0.06 * open_, half[0] * width
        elif name == "perioral":
            ry, rx = half[1] + 0.03 * open_, half[0] * (1.0 + 0.1 * spread - 0.1 * round_)
        else:
            ry, rx = half[1], half[0]
        x = c[0] + u * rx
        y = c[1] + v * ry + lower * 0.03 * jaw
        if name in ("outer_lip", "inner_lip"):
            y -= lower * 0.03 * tuck + corner_lift * u * u
            if name == "inner_lip":
                x, y = x + inner_shift[0], y + inner_shift[1]
        if name == "jaw":
            y = y + 0.05 * jaw * (0.5 + 0.5 * lower)
        out[sl, 0], out[sl, 1] = x, y
    return np.clip(out, 0.0, 1.0)


@dataclass
class VisemePrototypeTable:
    """Phoneme -> (117-point target shape, dwell frames); groups share one shape."""

    shapes: dict[str, np.ndarray]
    dwell: dict[str, int]
    groups: tuple = ()

    def __post_init__(self):
        missing = [p for p in PHONEMES + (BOUNDARY,) if p not in self.shapes]
        if missing:
            raise ValueError(f"prototype table lacks entries for {missing}")
        for tok, shape in self.shapes.items():
            if np.shape(shape) != (NUM_LANDMARKS, 2):
                raise ShapeMismatch(f"prototype for {tok} must be [{NUM_LANDMARKS},2]")

    def __getitem__(self, token: str) -> np.ndarray:
        return self.shapes[token]

    def dwell_of(self, token: str) -> int:
        return self.dwell.get(token, DEFAULT_DWELL)

    def viseme_classes(self) -> list[tuple[str, ...]]:
        """Phonemes grouped by identical prototype."""
        classes: list[list[str]] = []
        for p in PHONEMES:
            for cls in classes:
                if np.array_equal(self.shapes[cls[0]], self.shapes[p]):
                    cls.append(p)
                    break
            else:
                classes.append([p])
        return [tuple(c) for c in classes]

    @classmethod
    def default(cls, template: np.ndarray | None = None, collapse=DEFAULT_COLLAPSE,
                dwell: int = DEFAULT_DWELL, seed: int = 7) -> "VisemePrototypeTable":
        """Articulatory table in which only the ``collapse`` groups share shapes.

        Classes with the same coarse posture are told apart by evenly spaced
        corner lifts; every class also gets a small fixed inner-lip offset.
        """
        template = load_template() if template is None else np.asarray(template, dtype=np.float64)
        rng = np.random.default_rng(seed)
        leader = {}
        for group in collapse:
            for p in group:
                leader[p] = group[0]
        leaders = list(dict.fromkeys(leader.get(p, p) for p in PHONEMES))
        family: dict[tuple, list[str]] = {}
        for lead in leaders:
            family.setdefault(ARTICULATION[lead], []).append(lead)
        shapes: dict[str, np.ndarray] = {}
        for posture, members in family.items():
            for rank, lead in enumerate(members):
                lift = 0.03 * (rank - (len(members) - 1) / 2)
                shift = rng.uniform(-0.006, 0.006, size=2)
                shapes[lead] = deform(template, *posture, corner_lift=lift, inner_shift=shift)
        for p in PHONEMES:
            shapes[p] = shapes[leader.get(p, p)]
        shapes[BOUNDARY] = deform(template, *NEUTRAL)
        return cls(shapes, {p: dwell for p in shapes}, tuple(tuple(g) for g in collapse))


@dataclass
class Utterance:
    id: str
    text: list[str]
    phonemes: list[str]
    landmarks: LandmarkClip
    frames: FrameClip
    meta: dict = field(default_factory=dict)

    @property
    def sentence(self) -> str:
        return " ".join(self.text)

    def __len__(self):
        return len(self.frames)

    def validate(self):
        bad = [t for t in self.phonemes if t not in VOCAB]
        if bad:
            raise ValueError(f"{self.id}: tokens outside the vocabulary: {bad}")
        if UNK not in self.phonemes and self.phonemes:
            if len(self.text) != 1 + self.phonemes.count(BOUNDARY):
                raise ValueError(f"{self.id}: word count does not match boundary count")
        if len(self.landmarks) != len(self.frames):
            raise ShapeMismatch(f"{self.id}: landmark and frame clips differ in length")
        return self


def trajectory(tokens: Sequence[str], prototypes: VisemePrototypeTable) -> np.ndarray:
    """Piecewise-linear path through each token's prototype, ``[T,117,2]``.

    Token ``k`` spans its dwell frames and is hit exactly at the centre one;
    frames before the first and after the last centre hold that prototype.
    """
    if not tokens:
        raise ValueError("cannot build a trajectory for an empty phoneme sequence")
    dwells = [prototypes.dwell_of(t) for t in tokens]
    starts = np.concatenate([[0], np.cumsum(dwells)[:-1]])
    centres = starts + np.array(dwells) // 2
    total = int(sum(dwells))
    shapes = np.stack([prototypes[t] for t in tokens])  # [K,117,2]
    frame = np.arange(total)
    right = np.clip(np.searchsorted(centres, frame, side="left"), 0, len(tokens) - 1)
    left = np.clip(right - 1, 0, None)
    span = (centres[right] - centres[left]).astype(np.float64)
    w = np.where(span > 0, (frame - centres[left]) / np.where(span > 0, span, 1.0), 1.0)
    w = np.clip(w, 0.0, 1.0)[:, None, None]
    return (1.0 - w) * shapes[left] + w * shapes[right]


def speaker_affine(rng: np.random.Generator, jitter: float):
    """Random similarity transform about the mouth centre (scale, rotation, shift)."""
    scale = 1.0 + rng.normal(0.0, jitter)
    theta = rng.normal(0.0, jitter)
    shift = rng.normal(0.0, jitter / 2, size=2)
    rot = scale * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return rot, shift


def render_frames(landmarks: np.ndarray, size: int, sigma: float | None = None) -> np.ndarray:
    """Splat every landmark as an isotropic Gaussian onto ``size x size`` crops.

    Unit-square coordinates map to pixel centres ``0..size-1``. Returns
    ``[T,size,size]`` raw intensities (un-normalised).
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.ndim == 2:
        lm = lm[None]
    sigma = max(0.6, size / 40.0) if sigma is None else sigma
    grid = np.arange(size, dtype=np.float64)
    px = lm[..., 0] * (size - 1)
    py = lm[..., 1] * (size - 1)
    gx = np.exp(-0.5 * ((grid - px[..., None]) / sigma) ** 2)  # [T,N,W]
    gy = np.exp(-0.5 * ((grid - py[..., None]) / sigma) ** 2)  # [T,N,H]
    return np.matmul(gy.transpose(0, 2, 1), gx)


def synth_utterance(words: Sequence[str], lexicon: Lexicon, prototypes: VisemePrototypeTable,
                    noise_sigma: float = 0.01, rng_seed=0, render: int = 96,
                    speaker_jitter: float = 0.0, utt_id: str = "utt") -> Utterance:
    """One synthetic clip: g2p targets, jittered landmark path and rendered crops."""
    words = [w.upper() for w in words]
    oov = [w for w in words if w not in lexicon]
    if oov:
        raise OOVWord(f"words missing from the lexicon: {oov}")
    if not words:
        raise ValueError("an utterance needs at least one word")
    rng = np.random.default_rng(rng_seed)
    phonemes = g2p(words, lexicon)
    path = trajectory(phonemes, prototypes)
    if speaker_jitter > 0:
        rot, shift = speaker_affine(rng, speaker_jitter)
        path = (path - CENTER) @ rot.T + CENTER + shift
    if noise_sigma > 0:
        path = path + rng.normal(0.0, noise_sigma, size=path.shape)
    path = np.clip(path, 0.0, 1.0)
    clip = LandmarkClip(path, np.ones(len(path), dtype=bool))
    frames = FrameClip(render_frames(path, render))
    return Utterance(utt_id, words, phonemes, clip, frames).validate()


def sample_sentences(words: Sequence[str], n: int, rng_seed=0, min_words: int = 2,
                     max_words: int = 6, branching: int = 3, stickiness: float = 0.8) -> list[list[str]]:
    """Random word strings with bigram structure.

    Every word gets ``branching`` preferred successors; each next word follows
    that list with probability ``stickiness``, otherwise it is uniform.
    """
    words = list(words)
    if not words:
        raise ValueError("need at least one word")
    rng = np.random.default_rng(rng_seed)
    succ = {w: [words[i] for i in rng.choice(len(words), size=min(branching, len(words)), replace=False)]
            for w in words}
    out = []
    for _ in range(n):
        length = int(rng.integers(min_words, max_words + 1))
        sent = [words[int(rng.integers(len(words)))]]
        while len(sent) < length:
            if rng.random() < stickiness:
                sent.append(succ[sent[-1]][int(rng.integers(len(succ[sent[-1]])))])
            else:
                sent.append(words[int(rng.integers(len(words)))])
        out.append(sent)
    return out


def synth_corpus(sentences: Iterable[Sequence[str]], lexicon: Lexicon, prototypes: VisemePrototypeTable,
                 noise_sigma: float = 0.01, seed: int = 0, render: int = 96,
                 speaker_jitter: float = 0.0, prefix: str = "utt") -> list[Utterance]:
    """Render every sentence with its own child generator of ``seed``."""
    sentences = list(sentences)
    children = np.random.SeedSequence(seed).spawn(len(sentences))
    return [synth_utterance(s, lexicon, prototypes, noise_sigma, child, render, speaker_jitter,
                            f"{prefix}{i:05d}")
            for i, (s, child) in enumerate(zip(sentences, children))]


def frame_stats(utterances: Iterable[Utterance]) -> tuple[float, float]:
    """Pixel mean and standard deviation pooled over a (training) set."""
    total = sq = count = 0.0
    for u in utterances:
        f = u.frames.frames
        total += f.sum()
        sq += (f * f).sum()
        count += f.size
    if count == 0:
        raise ValueError("no frames to summarise")
    mean = total / count
    return float(mean), float(np.sqrt(max(sq / count - mean * mean, 1e-12)))


def apply_frame_stats(utterances: Iterable[Utterance], mean: float, std: float):
    for u in utterances:
        u.frames.mean, u.frames.std = mean, std
