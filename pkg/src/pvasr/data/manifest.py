"""Line-delimited JSON manifests pointing at per-utterance phoneme, landmark and frame files.

Each manifest line is an object ``{id, text, phoneme_file, landmark_file,
frame_file}`` with paths relative to the manifest's directory. Phoneme files
hold space-separated tokens; landmark files hold one row of 234 reals per
frame (x0 y0 x1 y1 ...); frame files are a 3 x int32 header ``T H W``
followed by row-major float64 pixels.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import MissingFile, ParseError
from ..graph import NUM_LANDMARKS, LandmarkClip
from ..model import FrameClip
from .synth import Utterance
from .vocab import format_phonemes, parse_phonemes

FIELDS = ("id", "text", "phoneme_file", "landmark_file", "frame_file")


def write_frames(path, frames: np.ndarray):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(f"frames must be [T,H,W], got {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3i", *frames.shape))
        fh.write(np.ascontiguousarray(frames, dtype="<f8").tobytes())


def read_frames(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"frame file not found: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise ParseError("frame file shorter than its header", None, str(path))
    t, h, w = struct.unpack("<3i", data[:12])
    if min(t, h, w) < 0 or len(data) != 12 + 8 * t * h * w:
        raise ParseError(f"frame payload does not match header {t}x{h}x{w}", None, str(path))
    return np.frombuffer(data[12:], dtype="<f8").astype(np.float64).reshape(t, h, w)


def write_landmarks(path, frames: np.ndarray):
    flat = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    np.savetxt(path, flat, fmt="%.17g")


def read_landmarks(path) -> LandmarkClip:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"landmark file not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError("non-numeric landmark value", lineno, str(path)) from None
        if len(vals) != 2 * NUM_LANDMARKS:
            raise ParseError(f"expected {2 * NUM_LANDMARKS} values, got {len(vals)}", lineno, str(path))
        rows.append(vals)
    return LandmarkClip.from_frames(np.array(rows, dtype=np.float64).reshape(-1, NUM_LANDMARKS, 2))


def write_manifest(path, utterances: Iterable[Utterance], data_dir: str = "data") -> Path:
    """Write every utterance's files under ``data_dir`` (relative to the manifest) plus the index."""
    path = Path(path)
    root = path.parent
    (root / data_dir).mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utterances:
        rel = {"phoneme_file": f"{data_dir}/{u.id}.phn", "landmark_file": f"{data_dir}/{u.id}.lmk",
               "frame_file": f"{data_dir}/{u.id}.frm"}
        (root / rel["phoneme_file"]).write_text(format_phonemes(u.phonemes) + "\n")
        write_landmarks(root / rel["landmark_file"], u.landmarks.frames)
        write_frames(root / rel["frame_file"], u.frames.frames)
        lines.append(json.dumps({"id": u.id, "text": u.sentence, **rel}))
    path.write_text("".join(line + "\n" for line in lines))
    return path


def load_manifest(path) -> Iterator[Utterance]:
    """Yield validated utterances; malformed lines raise ParseError with their line number."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    root = path.parent
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno, str(path)) from None
            if not isinstance(rec, dict):
                raise ParseError("record must be an object", lineno, str(path))
            missing = [k for k in FIELDS if k not in rec]
            if missing:
                raise ParseError(f"record lacks {missing}", lineno, str(path))
            phn = root / rec["phoneme_file"]
            if not phn.exists():
                raise MissingFile(f"line {lineno}: phoneme file not found: {phn}")
            phonemes = parse_phonemes(phn.read_text())
            landmarks = read_landmarks(root / rec["landmark_file"])
            frames = FrameClip(read_frames(root / rec["frame_file"]))
            try:
                yield Utterance(str(rec["id"]), str(rec["text"]).split(), phonemes,
                                landmarks, frames).validate()
            except ValueError as exc:
                raise ParseError(str(exc), lineno, str(path)) from None
