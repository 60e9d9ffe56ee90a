"""Word error rate and word diarization error rate.

WDER counts the fraction of aligned words (matches plus substitutions)
that carry the wrong speaker. The modified variant first drops reference
words whose time interval overlaps any other reference word.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from .datagen import TimedWord

MATCH, SUB, DEL, INS = "match", "substitute", "delete", "insert"

_PUNCT = re.compile(r"[^\w']+", re.UNICODE)


def normalize_word(w: str) -> str:
    """Case-folded, punctuation-stripped comparison form."""
    return _PUNCT.sub("", w.casefold())


@dataclass(frozen=True)
class AlignOp:
    kind: str
    ref_index: int | None
    hyp_index: int | None


@dataclass
class Alignment:
    ops: list[AlignOp]
    distance: int


def align(ref_words: list[str], hyp_words: list[str]) -> Alignment:
    """Minimal edit distance; backtrace prefers match > sub > delete > insert."""
    ref = [normalize_word(w) for w in ref_words]
    hyp = [normalize_word(w) for w in hyp_words]
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            dp[i][j] = min(dp[i - 1][j - 1] + cost, dp[i - 1][j] + 1,
                           dp[i][j - 1] + 1)
    ops: list[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] \
                and dp[i][j] == dp[i - 1][j - 1]:
            ops.append(AlignOp(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1:
            ops.append(AlignOp(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            ops.append(AlignOp(DEL, i - 1, None))
            i -= 1
        else:
            ops.append(AlignOp(INS, None, j - 1))
            j -= 1
    ops.reverse()
    return Alignment(ops, dp[n][m])


def brute_force_distance(ref: list[str], hyp: list[str]) -> int:
    """Exponential recursion; test oracle only."""
    ref = [normalize_word(w) for w in ref]
    hyp = [normalize_word(w) for w in hyp]

    def rec(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        cost = 0 if ref[i] == hyp[j] else 1
        return min(rec(i + 1, j + 1) + cost, rec(i + 1, j) + 1, rec(i, j + 1) + 1)

    return rec(0, 0)


def wer(alignment: Alignment, ref_len: int
        ) -> tuple[float, float, float, float]:
    """(wer, sub rate, del rate, ins rate), all over the reference length."""
    if ref_len <= 0:
        raise ValueError("WER needs a nonempty reference")
    s = sum(1 for op in alignment.ops if op.kind == SUB)
    d = sum(1 for op in alignment.ops if op.kind == DEL)
    i = sum(1 for op in alignment.ops if op.kind == INS)
    return (s + d + i) / ref_len, s / ref_len, d / ref_len, i / ref_len


@dataclass
class WderReport:
    C: int = 0
    S: int = 0
    D: int = 0
    I: int = 0
    C_IS: int = 0  # matches with an incorrect speaker
    S_IS: int = 0  # substitutions with an incorrect speaker
    dropped_words: int = 0
    ref_words: int = 0
    mapping: dict = field(default_factory=dict)

    @property
    def wder(self) -> float:
        denom = self.C + self.S
        return (self.C_IS + self.S_IS) / denom if denom else 0.0

    @property
    def dropped_word_fraction(self) -> float:
        return self.dropped_words / self.ref_words if self.ref_words else 0.0


def _count_speaker_errors(alignment: Alignment, ref_speakers: list[int],
                          hyp_speakers: list[int], mapping: dict[int, int],
                          excluded_ref: set[int]) -> WderReport:
    rep = WderReport(ref_words=len(ref_speakers),
                     dropped_words=len(excluded_ref), mapping=dict(mapping))
    for op in alignment.ops:
        if op.ref_index is not None and op.ref_index in excluded_ref:
            continue
        if op.kind == MATCH:
            rep.C += 1
        elif op.kind == SUB:
            rep.S += 1
        elif op.kind == DEL:
            rep.D += 1
            continue
        else:
            rep.I += 1
            continue
        hyp_spk = mapping.get(hyp_speakers[op.hyp_index],
                              hyp_speakers[op.hyp_index])
        if hyp_spk != ref_speakers[op.ref_index]:
            if op.kind == MATCH:
                rep.C_IS += 1
            else:
                rep.S_IS += 1
    return rep


def wder(alignment: Alignment, ref_speakers: list[int],
         hyp_speakers: list[int], mapping: str = "identity",
         excluded_ref: set[int] | None = None) -> WderReport:
    """Speaker error rate over aligned words.

    identity compares canonical ids directly; best_permutation exhausts
    injective hyp-id -> ref-id maps and keeps the minimum.
    """
    excluded = excluded_ref or set()
    if mapping == "identity":
        return _count_speaker_errors(alignment, ref_speakers, hyp_speakers,
                                     {}, excluded)
    if mapping != "best_permutation":
        raise ValueError(f"unknown mapping mode {mapping!r}")
    hyp_ids = sorted(set(hyp_speakers))
    ref_ids = sorted(set(ref_speakers))
    # pad targets with dummies so injective maps exist for extra hyp ids
    targets = ref_ids + [-(k + 1) for k in range(max(0, len(hyp_ids) - len(ref_ids)))]
    best: WderReport | None = None
    for perm in itertools.permutations(targets, len(hyp_ids)):
        m = dict(zip(hyp_ids, perm))
        rep = _count_speaker_errors(alignment, ref_speakers, hyp_speakers,
                                    m, excluded)
        if best is None or rep.wder < best.wder:
            best = rep
    assert best is not None
    return best


def overlapping_ref_indices(ref_words: list[TimedWord]) -> set[int]:
    """Indices of reference words with positive-length overlap with any other."""
    out: set[int] = set()
    for i, a in enumerate(ref_words):
        for j, b in enumerate(ref_words):
            if i != j and min(a.end, b.end) - max(a.start, b.start) > 0:
                out.add(i)
                break
    return out


def modified_wder(alignment: Alignment, ref_words: list[TimedWord],
                  ref_speakers: list[int], hyp_speakers: list[int],
                  mapping: str = "identity") -> WderReport:
    """WDER after dropping ground-truth words that overlap any other."""
    if len(ref_words) != len(ref_speakers):
        raise ValueError("reference words and speakers differ in length")
    excluded = overlapping_ref_indices(ref_words)
    return wder(alignment, ref_speakers, hyp_speakers, mapping,
                excluded_ref=excluded)
