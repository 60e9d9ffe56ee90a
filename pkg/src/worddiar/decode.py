"""Synchronized inference: every emitted wordpiece carries a speaker label.

Greedy decoding advances time whenever the blank posterior exceeds 0.5,
otherwise emits the argmax wordpiece and, at the same lattice point, the
argmax speaker. Beam search explores the HAT-factorized wordpiece
distribution; speaker labels are attached at emission time and never
enter the score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .model import ModelParams, hat_posterior, aux_posterior


@dataclass
class DiarizedHypothesis:
    wordpieces: list[int]
    speakers: list[int]
    frame_of_emission: list[int]
    score: float

    def __post_init__(self):
        if not (len(self.wordpieces) == len(self.speakers)
                == len(self.frame_of_emission)):
            raise ValueError("wordpieces, speakers and frames must align")


class _Scorer:
    """No-grad forward over precomputed encoder outputs."""

    def __init__(self, params: ModelParams, features: np.ndarray):
        self.params = params
        with nm.no_grad():
            f_seq, tap_seq = params.asr_encode(features)
            self.f = f_seq.data
            self.f_aux = params.aux_encode(tap_seq).data
        self.T = self.f.shape[0]
        self._g_cache: dict[tuple[int, ...], np.ndarray] = {}

    def g(self, history: tuple[int, ...]) -> np.ndarray:
        key = history[-self.params.config.predictor_context:]
        if key not in self._g_cache:
            with nm.no_grad():
                self._g_cache[key] = self.params.predict(list(key)).data
        return self._g_cache[key]

    def step(self, t: int, history: tuple[int, ...]):
        """Returns (blank prob, non-blank probs, speaker probs) at (t, u)."""
        p = self.params
        g = self.g(history)
        with nm.no_grad():
            h = p.joint_hidden(nm.constant(self.f[t:t + 1]),
                               nm.constant(g), "asr")
            s = p.asr_logits(h).data
            h_aux = p.joint_hidden(nm.constant(self.f_aux[t:t + 1]),
                                   nm.constant(g), "aux")
            s_aux = p.aux_logits(h_aux, nm.constant(s[:, :1])).data
        b, p_nb = hat_posterior(s)
        return b, p_nb, aux_posterior(s_aux)


def greedy_decode(params: ModelParams, features: np.ndarray,
                  max_emissions_per_frame: int = 10) -> DiarizedHypothesis:
    if max_emissions_per_frame < 1:
        raise ValueError("max_emissions_per_frame must be >= 1")
    sc = _Scorer(params, features)
    tokens: list[int] = []
    speakers: list[int] = []
    frames: list[int] = []
    score = 0.0
    history: tuple[int, ...] = ()
    for t in range(sc.T):
        emitted = 0
        while True:
            b, p_nb, p_spk = sc.step(t, history)
            if b > 0.5 or emitted >= max_emissions_per_frame:
                score += np.log(b)
                break
            tok = int(np.argmax(p_nb)) + 1
            spk = int(np.argmax(p_spk)) + 1
            score += np.log(p_nb[tok - 1])
            tokens.append(tok)
            speakers.append(spk)
            frames.append(t)
            history = history + (tok,)
            emitted += 1
    return DiarizedHypothesis(tokens, speakers, frames, float(score))


@dataclass
class _Beam:
    tokens: tuple[int, ...]
    speakers: tuple[int, ...]
    frames: tuple[int, ...]
    score: float


def beam_decode(params: ModelParams, features: np.ndarray, beam_size: int = 4,
                max_emissions_per_frame: int = 10) -> list[DiarizedHypothesis]:
    """n-best time-synchronous beam search; beam 1 is exactly greedy."""
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if beam_size == 1:
        # the degenerate beam follows the greedy blank rule bit-for-bit
        return [greedy_decode(params, features, max_emissions_per_frame)]
    sc = _Scorer(params, features)
    beam = [_Beam((), (), (), 0.0)]
    for t in range(sc.T):
        advanced: dict[tuple[int, ...], _Beam] = {}

        def push_advanced(hyp: _Beam, blank_lp: float):
            cand = _Beam(hyp.tokens, hyp.speakers, hyp.frames, hyp.score + blank_lp)
            _merge(advanced, cand)

        current = beam
        for round_idx in range(max_emissions_per_frame):
            expansions: dict[tuple[int, ...], _Beam] = {}
            for hyp in current:
                b, p_nb, p_spk = sc.step(t, hyp.tokens)
                push_advanced(hyp, float(np.log(b)))
                top = np.argsort(p_nb)[::-1][:beam_size]
                for idx in top:
                    tok = int(idx) + 1
                    spk = int(np.argmax(p_spk)) + 1
                    cand = _Beam(hyp.tokens + (tok,), hyp.speakers + (spk,),
                                 hyp.frames + (t,),
                                 hyp.score + float(np.log(p_nb[idx])))
                    _merge(expansions, cand)
            current = sorted(expansions.values(), key=lambda h: -h.score)[:beam_size]
            if not current:
                break
        for hyp in current:  # emission cap reached: force time advance
            b, _, _ = sc.step(t, hyp.tokens)
            push_advanced(hyp, float(np.log(b)))
        beam = sorted(advanced.values(), key=lambda h: -h.score)[:beam_size]
    beam.sort(key=lambda h: -h.score)
    return [DiarizedHypothesis(list(h.tokens), list(h.speakers),
                               list(h.frames), h.score) for h in beam]


def _merge(pool: dict, cand: _Beam) -> None:
    """Merge identical token prefixes by logaddexp, keeping the best path's
    speaker/frame attachments."""
    prev = pool.get(cand.tokens)
    if prev is None:
        pool[cand.tokens] = cand
        return
    merged_score = float(np.logaddexp(prev.score, cand.score))
    best = cand if cand.score > prev.score else prev
    pool[cand.tokens] = _Beam(best.tokens, best.speakers, best.frames, merged_score)


# ---------------------------------------------------------------------------
# Detokenization and the decode-output file format (JSON lines)

WORD_START = "▁"  # marks the first piece of a word


def detokenize(hyp: DiarizedHypothesis, vocab: list[str]
               ) -> tuple[list[tuple[str, int, int]], int]:
    """Merge wordpieces into (word, speaker, frame) records.

    A word's speaker is the speaker of its first piece; pieces disagreeing
    with it increment the returned conflict counter.
    """
    words: list[tuple[str, int, int]] = []
    conflicts = 0
    cur_text = ""
    cur_spk = -1
    cur_frame = -1
    for tok, spk, frame in zip(hyp.wordpieces, hyp.speakers,
                               hyp.frame_of_emission):
        if not (0 <= tok < len(vocab)):
            raise IndexError(f"token id {tok} outside vocab of {len(vocab)}")
        piece = vocab[tok]
        if piece.startswith(WORD_START) or not cur_text:
            if cur_text:
                words.append((cur_text, cur_spk, cur_frame))
            cur_text = piece.removeprefix(WORD_START)
            cur_spk = spk
            cur_frame = frame
        else:
            cur_text += piece
            if spk != cur_spk:
                conflicts += 1
    if cur_text:
        words.append((cur_text, cur_spk, cur_frame))
    return words, conflicts


def write_decode_output(records: list[dict], path) -> None:
    """One JSON object per utterance: id plus (word, speaker, frame) triples."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_decode_output(path) -> list[dict]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def decode_record(utterance_id: str, words: list[tuple[str, int, int]],
                  conflicts: int = 0) -> dict:
    return {
        "utterance_id": utterance_id,
        "words": [{"word": w, "speaker": s, "frame": fr} for w, s, fr in words],
        "speaker_conflicts": conflicts,
    }
