"""RTTM / CTM parsing and writing, plus the conversation manifest.

Times serialize on the millisecond grid (3 decimals) so round-trips are
byte-exact. Malformed records raise with their line number rather than
being coerced.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import Conversation, TimedWord, PlacedUtterance


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class RttmSegment:
    file_id: str
    channel: str
    start: float
    duration: float
    speaker_name: str

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        if self.start < 0:
            raise ValueError(f"segment start must be >= 0, got {self.start}")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class CtmWord:
    file_id: str
    channel: str
    start: float
    duration: float
    word: str
    confidence: float | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"word duration must be positive, got {self.duration}")

    @property
    def end(self) -> float:
        return self.start + self.duration


def parse_rttm(text: str) -> list[RttmSegment]:
    """SPEAKER records only; other record types are skipped."""
    segments: list[RttmSegment] = []
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise ParseError(no, f"SPEAKER record has {len(fields)} fields, need >= 8")
        try:
            start = float(fields[3])
            dur = float(fields[4])
        except ValueError:
            raise ParseError(no, f"bad times in {line!r}") from None
        try:
            segments.append(RttmSegment(fields[1], fields[2], start, dur, fields[7]))
        except ValueError as e:
            raise ParseError(no, str(e)) from None
    return segments


def write_rttm(segments: list[RttmSegment]) -> str:
    lines = []
    for s in segments:
        lines.append(f"SPEAKER {s.file_id} {s.channel} {s.start:.3f} "
                     f"{s.duration:.3f} <NA> <NA> {s.speaker_name} <NA> <NA>")
    return "".join(line + "\n" for line in lines)


def parse_ctm(text: str) -> list[CtmWord]:
    """`<file> <chan> <tbeg> <tdur> <word> [conf]`; re-sorted by (file, start)."""
    words: list[CtmWord] = []
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) not in (5, 6):
            raise ParseError(no, f"CTM record has {len(fields)} fields, need 5 or 6")
        try:
            start = float(fields[2])
            dur = float(fields[3])
            conf = float(fields[5]) if len(fields) == 6 else None
        except ValueError:
            raise ParseError(no, f"bad numeric field in {line!r}") from None
        try:
            words.append(CtmWord(fields[0], fields[1], start, dur, fields[4], conf))
        except ValueError as e:
            raise ParseError(no, str(e)) from None
    words.sort(key=lambda w: (w.file_id, w.start, w.end))
    return words


def write_ctm(words: list[CtmWord]) -> str:
    lines = []
    for w in sorted(words, key=lambda w: (w.file_id, w.start, w.end)):
        tail = f" {w.confidence:.3f}" if w.confidence is not None else ""
        lines.append(f"{w.file_id} {w.channel} {w.start:.3f} {w.duration:.3f} "
                     f"{w.word}{tail}")
    return "".join(line + "\n" for line in lines)


def rttm_words_to_targets(segments: list[RttmSegment],
                          words: list[TimedWord]) -> list[TimedWord]:
    """Fill each word's raw_speaker from the max-duration-overlap segment."""
    from .baseline import assign_speakers_by_overlap
    if not words:
        return []
    names, _ = assign_speakers_by_overlap(words, segments)
    return [TimedWord(w.text, w.start, w.end, raw_speaker=name)
            for w, name in zip(words, names)]


# ---------------------------------------------------------------------------
# Feature matrices: 16-byte header (rows, cols as little-endian uint64),
# then row-major little-endian float64 data.

def write_features(path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        rows, cols = struct.unpack("<QQ", f.read(16))
        data = np.frombuffer(f.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"feature file truncated: {path}")
    return data.reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# Manifest: one conversation per JSON line.

def write_manifest(conversations: list[Conversation], out_dir,
                   name: str = "manifest.jsonl") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / name
    with open(manifest_path, "w") as f:
        for conv in conversations:
            feat_rel = f"{conv.id}.f64"
            write_features(out_dir / feat_rel, conv.features)
            rec = {
                "id": conv.id,
                "features": feat_rel,
                "frame_step": conv.frame_step,
                "words": [{
                    "text": w.text,
                    "start": round(w.start, 3),
                    "end": round(w.end, 3),
                    "speaker_raw": w.raw_speaker,
                    "speaker_id": w.speaker_id,
                } for w in conv.words],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


def read_manifest(manifest_path, load_features: bool = True
                  ) -> list[Conversation]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    convs: list[Conversation] = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            words = [TimedWord(w["text"], w["start"], w["end"],
                               raw_speaker=w["speaker_raw"],
                               speaker_id=w.get("speaker_id", 0))
                     for w in rec["words"]]
            feats = (read_features(base / rec["features"]) if load_features
                     else np.zeros((1, 1)))
            convs.append(Conversation(rec["id"], feats, words,
                                      frame_step=rec.get("frame_step", 0.1)))
    return convs
