"""Turn-based baseline orchestration.

Diarization segments (RTTM, from any external clustering system) are
merged with recognized words (CTM) by assigning each word the speaker
whose segment has the maximum duration overlap with it. The output uses
the same record schema as model decoding, so scoring is uniform.
"""

from __future__ import annotations

from collections import defaultdict

from .datagen import TimedWord, canonicalize_speakers
from .decode import decode_record
from .formats import CtmWord, RttmSegment


class EmptySegmentsError(ValueError):
    pass


def assign_speakers_by_overlap(words, segments: list[RttmSegment]
                               ) -> tuple[list[str], int]:
    """Max-duration-overlap speaker per word.

    Ties go to the earlier segment start, then the lexicographically
    smaller speaker name. A word overlapping nothing falls back to the
    segment with the nearest midpoint; the fallback count is returned.
    """
    if not segments:
        raise EmptySegmentsError("no diarization segments to assign from")
    segs = sorted(segments, key=lambda s: (s.start, s.speaker_name))
    names: list[str] = []
    fallbacks = 0
    for w in words:
        best_name = None
        best_ov = 0.0
        # segments come pre-sorted by (start, name): on an overlap tie the
        # earlier start, then the smaller name, wins by arriving first
        for seg in segs:
            ov = min(w.end, seg.end) - max(w.start, seg.start)
            if ov > 0 and (best_name is None or ov > best_ov):
                best_ov = ov
                best_name = seg.speaker_name
        if best_name is None:
            mid = 0.5 * (w.start + w.end)
            seg = min(segs, key=lambda s: (abs(0.5 * (s.start + s.end) - mid),
                                           s.start, s.speaker_name))
            best_name = seg.speaker_name
            fallbacks += 1
        names.append(best_name)
    return names, fallbacks


def orchestrate(ctm_words: list[CtmWord], rttm_segments: list[RttmSegment],
                max_speakers: int = 8) -> tuple[list[dict], int]:
    """Join CTM words with RTTM segments file-by-file into decode records."""
    ctm_files = {w.file_id for w in ctm_words}
    rttm_files = {s.file_id for s in rttm_segments}
    missing = sorted(ctm_files - rttm_files)
    if missing:
        raise ValueError(f"no RTTM segments for file ids: {missing}")

    words_by_file: dict[str, list[CtmWord]] = defaultdict(list)
    for w in ctm_words:
        words_by_file[w.file_id].append(w)
    segs_by_file: dict[str, list[RttmSegment]] = defaultdict(list)
    for s in rttm_segments:
        segs_by_file[s.file_id].append(s)

    records: list[dict] = []
    total_fallbacks = 0
    for file_id in sorted(words_by_file):
        ws = sorted(words_by_file[file_id], key=lambda w: (w.start, w.end))
        timed = [TimedWord(w.word, w.start, w.end) for w in ws]
        names, fallbacks = assign_speakers_by_overlap(timed, segs_by_file[file_id])
        total_fallbacks += fallbacks
        for tw, name in zip(timed, names):
            tw.raw_speaker = name
        _, ids = canonicalize_speakers(timed, max_speakers=max_speakers)
        frames = [int(round(w.start * 100)) for w in ws]
        triples = [(w.word, sid, fr) for w, sid, fr in zip(ws, ids, frames)]
        records.append(decode_record(file_id, triples))
    return records, total_fallbacks
