"""Synthetic conversations and training-target construction.

Speaker labels are order-canonical: within an utterance the first distinct
speaker to start speaking is 1, the next is 2, and so on. The simulator
concatenates per-speaker utterances with random pauses and crossfades;
"sentences" are source utterances, which is where segmentation may cut.

Audio is replaced by a feature synthesizer: each word contributes a fixed
number of frames whose leading dims carry a per-word content code and
trailing dims carry the speaker's signature vector, both plus noise.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

FRAME_STEP = 0.1          # seconds per feature frame
FRAMES_PER_WORD = 3
BLANK_PIECE = "<blank>"
WORD_START = "▁"


class TooManySpeakersError(ValueError):
    """An utterance has more distinct speakers than the model supports."""


class VocabError(KeyError):
    pass


@dataclass
class TimedWord:
    text: str
    start: float
    end: float
    raw_speaker: str = ""
    speaker_id: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError("empty word text")
        if self.end <= self.start:
            raise ValueError(f"word {self.text!r}: end {self.end} <= start {self.start}")


@dataclass
class PlacedUtterance:
    speaker: str
    utterance_id: str
    offset: float
    duration: float
    word_count: int


@dataclass
class Conversation:
    id: str
    features: np.ndarray
    words: list[TimedWord]
    sources: list[PlacedUtterance] = field(default_factory=list)
    pauses: list[float] = field(default_factory=list)
    crossfades: list[float] = field(default_factory=list)
    frame_step: float = FRAME_STEP

    @property
    def duration(self) -> float:
        return self.features.shape[0] * self.frame_step


@dataclass
class SpeakerMap:
    """Raw speaker names -> 1-based ids in order of first speaking."""
    order: dict[str, int]

    def __getitem__(self, raw: str) -> int:
        return self.order[raw]

    def __len__(self) -> int:
        return len(self.order)


def canonicalize_speakers(words: list[TimedWord], max_speakers: int = 8
                          ) -> tuple[SpeakerMap, list[int]]:
    """First-come-first-serve speaker ids; ties by (start, end, raw label)."""
    order: dict[str, int] = {}
    for w in sorted(words, key=lambda w: (w.start, w.end, w.raw_speaker)):
        if w.raw_speaker not in order:
            order[w.raw_speaker] = len(order) + 1
            if len(order) > max_speakers:
                raise TooManySpeakersError(
                    f"{len(order)} distinct speakers exceed the cap of {max_speakers}")
    smap = SpeakerMap(order)
    ids = [smap[w.raw_speaker] for w in words]
    for w, sid in zip(words, ids):
        w.speaker_id = sid
    return smap, ids


# ---------------------------------------------------------------------------
# Tokenizers over a closed corpus vocabulary. Piece id 0 is the blank.

class WordTokenizer:
    """One word = one piece."""

    def __init__(self, words: list[str]):
        uniq = sorted(set(w.lower() for w in words))
        self.pieces = [BLANK_PIECE] + [WORD_START + w for w in uniq]
        self._word_to_id = {w: i + 1 for i, w in enumerate(uniq)}

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    def encode_word(self, word: str) -> list[int]:
        try:
            return [self._word_to_id[word.lower()]]
        except KeyError:
            raise VocabError(f"word {word!r} not in the closed vocabulary") from None

    def encode_words(self, words: list[str]) -> list[int]:
        out: list[int] = []
        for w in words:
            out.extend(self.encode_word(w))
        return out


class SubwordTokenizer:
    """Greedy longest-match splitter over fixed-length chunks of the corpus."""

    def __init__(self, words: list[str], piece_len: int = 3):
        inventory: set[str] = set()
        for w in sorted(set(w.lower() for w in words)):
            inventory.add(WORD_START + w[:piece_len])
            rest = w[piece_len:]
            for i in range(0, len(rest), piece_len):
                inventory.add(rest[i:i + piece_len])
        self.pieces = [BLANK_PIECE] + sorted(inventory)
        self._piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        self._max_len = max(len(p) for p in self.pieces)

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    def encode_word(self, word: str) -> list[int]:
        s = WORD_START + word.lower()
        out: list[int] = []
        pos = 0
        while pos < len(s):
            for ln in range(min(self._max_len, len(s) - pos), 0, -1):
                pid = self._piece_to_id.get(s[pos:pos + ln])
                if pid is not None:
                    out.append(pid)
                    pos += ln
                    break
            else:
                raise VocabError(f"word {word!r} cannot be tokenized")
        return out

    def encode_words(self, words: list[str]) -> list[int]:
        out: list[int] = []
        for w in words:
            out.extend(self.encode_word(w))
        return out


def build_targets(words: list[TimedWord], speaker_ids: list[int],
                  tokenizer) -> tuple[list[int], list[int]]:
    """Tokenize words and give every piece its word's speaker id."""
    if len(words) != len(speaker_ids):
        raise ValueError("words and speaker ids differ in length")
    wp: list[int] = []
    spk: list[int] = []
    for w, sid in zip(words, speaker_ids):
        ids = tokenizer.encode_word(w.text)
        if not ids:
            raise VocabError(f"word {w.text!r} tokenized to nothing")
        wp.extend(ids)
        spk.extend([sid] * len(ids))
    return wp, spk


# ---------------------------------------------------------------------------
# Speaker profiles and the feature synthesizer

@dataclass
class SpeakerProfile:
    name: str
    signature: np.ndarray


def generate_profiles(count: int, dim: int, rng: np.random.Generator,
                      min_angle_deg: float = 25.0,
                      name_prefix: str = "spk") -> list[SpeakerProfile]:
    """Unit signatures on the hypersphere, min pairwise angle by rejection."""
    max_dot = np.cos(np.deg2rad(min_angle_deg))
    sigs: list[np.ndarray] = []
    attempts = 0
    while len(sigs) < count:
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(abs(float(v @ s)) <= max_dot for s in sigs):
            sigs.append(v)
        attempts += 1
        if attempts > 1000 * count:
            raise RuntimeError("profile rejection sampling failed; relax min_angle")
    return [SpeakerProfile(f"{name_prefix}{i:03d}", s) for i, s in enumerate(sigs)]


def word_content_code(word: str, dim: int, seed: int = 12345) -> np.ndarray:
    """Deterministic per-word unit vector for the content dims."""
    h = zlib.crc32(word.lower().encode()) ^ seed
    rng = np.random.default_rng(h)
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


@dataclass
class Utterance:
    id: str
    speaker: str
    features: np.ndarray
    words: list[TimedWord]

    @property
    def duration(self) -> float:
        return self.features.shape[0] * FRAME_STEP


def synth_utterance(profile: SpeakerProfile, text: list[str],
                    rng: np.random.Generator, d_features: int = 16,
                    sigma: float = 0.05, utt_id: str = "utt") -> Utterance:
    """Fixed frames per word: content code up front, signature behind."""
    if not text:
        raise ValueError("utterance text is empty")
    content_dim = d_features - profile.signature.size
    if content_dim < 1:
        raise ValueError("signature wider than the feature vector")
    frames = len(text) * FRAMES_PER_WORD
    feats = np.zeros((frames, d_features))
    words: list[TimedWord] = []
    wdur = FRAMES_PER_WORD * FRAME_STEP
    for i, word in enumerate(text):
        code = word_content_code(word, content_dim)
        lo = i * FRAMES_PER_WORD
        feats[lo:lo + FRAMES_PER_WORD, :content_dim] = code
        feats[lo:lo + FRAMES_PER_WORD, content_dim:] = profile.signature
        words.append(TimedWord(word, i * wdur, (i + 1) * wdur,
                               raw_speaker=profile.name))
    if sigma > 0:
        feats += rng.normal(scale=sigma, size=feats.shape)
    return Utterance(utt_id, profile.name, feats, words)


def build_pool(profiles: list[SpeakerProfile], utts_per_speaker: int,
               vocab_words: list[str], rng: np.random.Generator,
               words_per_utt: tuple[int, int] = (3, 7),
               d_features: int = 16, sigma: float = 0.05
               ) -> dict[str, list[Utterance]]:
    """Pre-synthesized utterances per speaker, keyed by speaker name."""
    pool: dict[str, list[Utterance]] = {}
    for prof in profiles:
        utts = []
        for k in range(utts_per_speaker):
            n_words = int(rng.integers(words_per_utt[0], words_per_utt[1] + 1))
            text = [vocab_words[int(i)] for i in
                    rng.integers(0, len(vocab_words), size=n_words)]
            utts.append(synth_utterance(prof, text, rng, d_features, sigma,
                                        utt_id=f"{prof.name}-u{k:03d}"))
        pool[prof.name] = utts
    return pool


# ---------------------------------------------------------------------------
# Conversation simulation

PAUSE_RANGE = (0.2, 1.5)
CROSSFADE_RANGE = (0.0, 0.2)


def simulate_conversation(pool: dict[str, list[Utterance]], M: int, N_utt: int,
                          rng: np.random.Generator, conv_id: str = "conv"
                          ) -> Conversation:
    """Sample M speakers x N_utt utterances, drop K in {0,1,2}, concatenate
    in random order with pauses and crossfades."""
    names = sorted(pool)
    if len(names) < M:
        raise ValueError(f"pool has {len(names)} speakers, need {M}")
    chosen = [names[i] for i in rng.choice(len(names), size=M, replace=False)]
    utts: list[Utterance] = []
    for name in chosen:
        have = pool[name]
        if len(have) < N_utt:
            raise ValueError(f"speaker {name} has {len(have)} utterances, need {N_utt}")
        idx = rng.choice(len(have), size=N_utt, replace=False)
        utts.extend(have[int(i)] for i in idx)

    # clamp K so that a drop set leaving every speaker >= 1 utterance exists
    k = min(int(rng.integers(0, 3)), len(utts) - len(chosen))
    while True:  # every sampled speaker must keep at least one utterance
        drop = set(int(i) for i in rng.choice(len(utts), size=k, replace=False))
        kept = [u for i, u in enumerate(utts) if i not in drop]
        if {u.speaker for u in kept} == set(chosen):
            break
    order = rng.permutation(len(kept))
    kept = [kept[int(i)] for i in order]

    pauses: list[float] = []
    crossfades: list[float] = []
    placed: list[PlacedUtterance] = []
    offset = 0.0
    for i, u in enumerate(kept):
        if i > 0:
            pause = float(rng.uniform(*PAUSE_RANGE))
            cf = float(rng.uniform(*CROSSFADE_RANGE))
            pauses.append(pause)
            crossfades.append(cf)
            offset = placed[-1].offset + placed[-1].duration + pause - cf
        placed.append(PlacedUtterance(u.speaker, u.id, offset, u.duration,
                                      len(u.words)))

    total_dur = placed[-1].offset + placed[-1].duration
    total_frames = int(np.ceil(round(total_dur / FRAME_STEP, 9)))
    feats = np.zeros((total_frames, kept[0].features.shape[1]))
    words: list[TimedWord] = []
    for i, (u, pl) in enumerate(zip(kept, placed)):
        block = u.features.copy()
        fade_in = int(round(crossfades[i - 1] / FRAME_STEP)) if i > 0 else 0
        fade_out = int(round(crossfades[i] / FRAME_STEP)) if i < len(kept) - 1 else 0
        if fade_in:
            ramp = (np.arange(fade_in) + 1.0) / (fade_in + 1.0)
            block[:fade_in] *= ramp[:, None]
        if fade_out:
            ramp = (np.arange(fade_out) + 1.0) / (fade_out + 1.0)
            block[-fade_out:] *= ramp[::-1, None]
        lo = int(round(pl.offset / FRAME_STEP))
        feats[lo:lo + block.shape[0]] += block
        for w in u.words:
            words.append(TimedWord(w.text, round(w.start + pl.offset, 3),
                                   round(w.end + pl.offset, 3),
                                   raw_speaker=u.speaker))
    words.sort(key=lambda w: (w.start, w.end, w.raw_speaker))
    return Conversation(conv_id, feats, words, placed, pauses, crossfades)


def segment_conversation(conv: Conversation, target_length: float
                         ) -> list[Conversation]:
    """Cut at source-utterance boundaries into segments <= target_length.

    Greedy: each segment takes the largest prefix of remaining utterances
    fitting the target; a single over-long utterance becomes its own segment.
    """
    if not conv.words:
        raise ValueError("cannot segment a conversation with no words")
    if conv.duration <= target_length:
        return [conv]
    segments: list[Conversation] = []
    placed = conv.sources
    word_starts = np.cumsum([0] + [p.word_count for p in placed])
    i = 0
    seg_idx = 0
    while i < len(placed):
        seg_start = placed[i].offset
        j = i
        while (j + 1 < len(placed)
               and placed[j + 1].offset + placed[j + 1].duration - seg_start
               <= target_length):
            j += 1
        seg_end = placed[j].offset + placed[j].duration
        lo = int(round(seg_start / conv.frame_step))
        hi = int(round(seg_end / conv.frame_step))
        feats = conv.features[lo:hi].copy()
        words = [TimedWord(w.text, round(w.start - seg_start, 3),
                           round(w.end - seg_start, 3), w.raw_speaker)
                 for w in conv.words[word_starts[i]:word_starts[j + 1]]]
        sources = [PlacedUtterance(p.speaker, p.utterance_id,
                                   round(p.offset - seg_start, 3),
                                   p.duration, p.word_count)
                   for p in placed[i:j + 1]]
        segments.append(Conversation(f"{conv.id}-seg{seg_idx:02d}", feats,
                                     words, sources, frame_step=conv.frame_step))
        seg_idx += 1
        i = j + 1
    return segments
