"""Lip-landmark graph and the ST-GCN landmark encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import functional as F
from .errors import DegeneratePositions, EmptyClip, MissingFile, ParseError, ShapeMismatch
from .nn import Linear, Module, TemporalEncoder, glorot, param
from .tensor import Tensor, add, as_tensor

NUM_LANDMARKS = 117
TEMPLATE_VERSION = 1

# (name, first index, count, closed loop)
CONTOURS = (
    ("outer_lip", 0, 40, True),
    ("inner_lip", 40, 30, True),
    ("perioral", 70, 27, True),
    ("jaw", 97, 20, False),
)


def _ellipse(cx, cy, rx, ry, n, start=0.0, stop=2 * math.pi, endpoint=False):
    t = np.linspace(start, stop, n, endpoint=endpoint)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def canonical_template() -> np.ndarray:
    """Neutral 117-point lip/jaw layout in unit-square coordinates (y grows downward)."""
    pts = np.concatenate([
        _ellipse(0.5, 0.45, 0.24, 0.11, 40),
        _ellipse(0.5, 0.45, 0.17, 0.04, 30),
        _ellipse(0.5, 0.43, 0.34, 0.21, 27),
        _ellipse(0.5, 0.40, 0.44, 0.48, 20, start=0.15 * math.pi, stop=0.85 * math.pi, endpoint=True),
    ])
    return np.clip(pts, 0.0, 1.0)


def contour_edges(contours=CONTOURS) -> list[tuple[int, int]]:
    edges = []
    for _, first, count, closed in contours:
        idx = list(range(first, first + count))
        edges += list(zip(idx, idx[1:]))
        if closed and count > 2:
            edges.append((idx[-1], idx[0]))
    return edges


def write_template(path, points: np.ndarray | None = None):
    points = canonical_template() if points is None else points
    lines = [f"# lip template v{TEMPLATE_VERSION}: index x y"]
    lines += [f"{i} {x:.6f} {y:.6f}" for i, (x, y) in enumerate(points)]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_template(text: str, source: str = "<template>") -> np.ndarray:
    rows: dict[int, tuple[float, float]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'index x y', got {line!r}", lineno, source)
        try:
            i, x, y = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno, source) from None
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ParseError(f"coordinates outside [0,1] in {line!r}", lineno, source)
        if i in rows:
            raise ParseError(f"duplicate index {i}", lineno, source)
        rows[i] = (x, y)
    if sorted(rows) != list(range(len(rows))):
        raise ParseError("indices must run 0..N-1 without gaps", None, source)
    return np.array([rows[i] for i in range(len(rows))], dtype=np.float64)


def load_template(path=None) -> np.ndarray:
    if path is None:
        text = resources.files("pvasr.data.resources").joinpath("lip_template.txt").read_text()
        return parse_template(text, "lip_template.txt")
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"template not found: {path}")
    return parse_template(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------


@dataclass
class LipGraph:
    node_count: int
    edges: list[tuple[int, int]]
    adjacency: np.ndarray = field(repr=False)

    def is_connected(self) -> bool:
        return len(_components(self.node_count, self.edges)) == 1


def _components(n: int, edges) -> list[list[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def build_lip_adjacency(mean_positions, k: int = 4, contours=CONTOURS) -> LipGraph:
    """Contour chains plus symmetrised k-nearest-neighbour edges, made connected.

    Distance ties resolve to the lower node index. Contour chains are only
    added when ``mean_positions`` has the canonical 117 nodes.
    """
    pos = np.asarray(mean_positions.data if isinstance(mean_positions, Tensor) else mean_positions,
                     dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if pos.ndim != 2 or pos.shape[1] != 2 or not np.all(np.isfinite(pos)):
        raise ShapeMismatch(f"positions must be finite [N,2], got {pos.shape}")
    n = pos.shape[0]
    if n > 1 and np.allclose(pos, pos[0]):
        raise DegeneratePositions("all landmark positions coincide")
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    edges: set[tuple[int, int]] = set()
    if contours and n == NUM_LANDMARKS:
        edges.update((min(a, b), max(a, b)) for a, b in contour_edges(contours))
    kk = min(k, n - 1)
    for i in range(n):
        order = np.lexsort((np.arange(n), dist[i]))[:kk]
        edges.update((min(i, int(j)), max(i, int(j))) for j in order)
    comps = _components(n, edges)
    while len(comps) > 1:
        first = np.array(comps[0])
        rest = np.array([i for c in comps[1:] for i in c])
        sub = dist[np.ix_(first, rest)]
        a, b = np.unravel_index(np.argmin(sub), sub.shape)
        i, j = int(first[a]), int(rest[b])
        edges.add((min(i, j), max(i, j)))
        comps = _components(n, edges)
    edge_list = sorted(edges)
    return LipGraph(n, edge_list, normalize_adjacency(edge_list, n))


def normalize_adjacency(edges: Sequence[tuple[int, int]], n: int = NUM_LANDMARKS) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` for the binary, symmetric adjacency ``A``."""
    a = np.eye(n)
    for i, j in edges:
        if i != j:
            a[i, j] = a[j, i] = 1.0
    d = a.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    return a * inv[:, None] * inv[None, :]


def default_graph(k: int = 4) -> LipGraph:
    return build_lip_adjacency(load_template(), k)


# ---------------------------------------------------------------------------
# clips and the encoder
# ---------------------------------------------------------------------------


@dataclass
class LandmarkClip:
    frames: np.ndarray  # [T, N, 2]
    valid: np.ndarray  # [T] bool

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.frames.ndim != 3 or self.frames.shape[2] != 2:
            raise ShapeMismatch(f"landmark frames must be [T,N,2], got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise EmptyClip("landmark clip has no frames")
        if self.valid.shape != (self.frames.shape[0],):
            raise ShapeMismatch("validity flags must have one entry per frame")
        if np.any(self.frames[~self.valid] != 0.0):
            raise ValueError("invalid frames must be zero-padded")

    @classmethod
    def from_frames(cls, frames) -> "LandmarkClip":
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 3 and frames.shape[0] == 0:
            raise EmptyClip("landmark clip has no frames")
        return cls(frames, np.any(frames.reshape(frames.shape[0], -1) != 0.0, axis=1))

    def __len__(self):
        return self.frames.shape[0]

    def drop_frames(self, mask) -> "LandmarkClip":
        """Zero-pad the frames selected by ``mask`` (simulated detection failures)."""
        mask = np.asarray(mask, dtype=bool)
        frames = self.frames.copy()
        frames[mask] = 0.0
        return LandmarkClip(frames, self.valid & ~mask)


class STGCNBlock(Module):
    """Graph conv per frame, temporal conv per node, Mish, residual when widths match."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, temporal_kernel: int = 5):
        if temporal_kernel % 2 != 1:
            raise ShapeMismatch("temporal kernel must be odd")
        self.weight = glorot(rng, c_in, c_out)
        self.temporal = glorot(rng, temporal_kernel * c_out, c_out, shape=(temporal_kernel, c_out, c_out))
        self.bias = param(np.zeros(c_out))
        self.residual = c_in == c_out

    def forward(self, x, adjacency):
        return stgcn_block(x, adjacency, self.weight, self.temporal, self.bias, self.residual)


def stgcn_block(x, adjacency, weight, temporal, bias=None, residual=None) -> Tensor:
    """One ST-GCN block on ``x[T,N,Cin]``; returns ``[T,N,Cout]``."""
    x = as_tensor(x)
    n = x.shape[1]
    adj_shape = adjacency.shape
    if adj_shape != (n, n):
        raise ShapeMismatch(f"adjacency {adj_shape} does not match {n} nodes")
    if temporal.shape[0] % 2 != 1:
        raise ShapeMismatch("temporal kernel must be odd")
    c_in, c_out = weight.shape
    if x.shape[2] != c_in:
        raise ShapeMismatch(f"block expects {c_in} channels, got {x.shape[2]}")
    if c_in <= c_out:
        y = F.linear(F.graph_conv(x, adjacency), weight)
    else:
        y = F.graph_conv(F.linear(x, weight), adjacency)
    y = F.mish(F.conv1d_time(y, temporal, bias))
    if residual is None:
        residual = c_in == c_out
    return add(y, x) if residual else y


class PASREncoder(Module):
    """Six ST-GCN blocks, node mean-pool, linear + Mish, temporal encoder.

    With a ``center`` of shape ``[N,2]``, valid frames enter the graph as
    ``(x - center) / scale`` so the blocks see displacements from a rest shape
    rather than raw crop coordinates near 0.5. Zero-padded frames stay zero.
    """

    def __init__(self, d_enc: int, rng: np.random.Generator, adjacency: np.ndarray | None = None,
                 channels: int = 64, blocks: int = 6, temporal_kernel: int = 5,
                 layers: int = 2, heads: int = 4, conv_kernel: int | None = 5,
                 center: np.ndarray | None = None, scale: float = 1.0):
        self._adjacency = default_graph().adjacency if adjacency is None else np.asarray(adjacency)
        if center is not None:
            center = np.asarray(center, dtype=np.float64)
            if center.shape != (self._adjacency.shape[0], 2):
                raise ShapeMismatch(f"center must be [{self._adjacency.shape[0]},2], got {center.shape}")
        if not scale > 0:
            raise ValueError(f"landmark scale must be positive, got {scale}")
        self._center = center
        self._scale = float(scale)
        widths = [2] + [channels] * blocks
        self.blocks = [STGCNBlock(a, b, rng, temporal_kernel) for a, b in zip(widths, widths[1:])]
        self.proj = Linear(channels, d_enc, rng)
        self.encoder = TemporalEncoder(d_enc, layers, heads, rng, conv_kernel) if layers else None

    @property
    def adjacency(self) -> np.ndarray:
        return self._adjacency

    def features(self, landmarks) -> Tensor:
        """Graph front-end only: ``[T,N,2] -> [T,d_enc]``."""
        x = as_tensor(landmarks)
        if x.shape[0] < 1:
            raise EmptyClip("landmark clip has no frames")
        if self._center is not None:
            valid = np.any(x.data.reshape(x.shape[0], -1) != 0.0, axis=1)
            x = (x - self._center) * Tensor(valid[:, None, None] / self._scale)
        for block in self.blocks:
            x = block(x, self._adjacency)
        return F.mish(self.proj(x.mean(axis=1)))

    def forward(self, landmarks) -> Tensor:
        h = self.features(landmarks)
        return self.encoder(h) if self.encoder is not None else h


def pasr_encode(clip: LandmarkClip, model) -> Tensor:
    """Encode a landmark clip with a :class:`PASREncoder` (or a model exposing ``.pasr``)."""
    encoder = getattr(model, "pasr", model)
    if len(clip) < 1:
        raise EmptyClip("landmark clip has no frames")
    return encoder(Tensor(clip.frames))
