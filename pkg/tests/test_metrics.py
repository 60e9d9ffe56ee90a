import itertools

import numpy as np
import pytest

from worddiar.datagen import TimedWord
from worddiar.metrics import (align, brute_force_distance, modified_wder,
                              normalize_word, overlapping_ref_indices, wder,
                              wer)

VOCAB = ["a", "b", "c"]


def random_words(rng, n):
    return [VOCAB[int(i)] for i in rng.integers(0, len(VOCAB), size=n)]


class TestNormalize:
    def test_casefold_and_punctuation(self):
        assert normalize_word("Hello,") == "hello"
        assert normalize_word("WORLD!") == "world"
        assert normalize_word("don't") == "don't"


class TestAlign:
    def test_identical(self):
        al = align(["a", "b"], ["a", "b"])
        assert al.distance == 0
        assert [op.kind for op in al.ops] == ["match", "match"]

    def test_case_and_punct_insensitive(self):
        assert align(["Hello!"], ["hello"]).distance == 0

    def test_classic_counts(self):
        al = align(["a", "b", "c", "d"], ["a", "c", "d", "x"])
        w, s, d, i = wer(al, 4)
        assert (s, d, i) == (0.0, 0.25, 0.25)
        assert w == pytest.approx(0.5)

    def test_substitution_counts(self):
        al = align(["a", "b"], ["a", "c"])
        w, s, d, i = wer(al, 2)
        assert (w, s, d, i) == (0.5, 0.5, 0.0, 0.0)

    def test_empty_sides(self):
        assert align([], ["a", "b"]).distance == 2
        assert align(["a", "b"], []).distance == 2
        assert align([], []).distance == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            ref = random_words(rng, int(rng.integers(0, 7)))
            hyp = random_words(rng, int(rng.integers(0, 7)))
            assert align(ref, hyp).distance == brute_force_distance(ref, hyp)

    def test_op_indices_cover_both_sides(self):
        ref, hyp = ["a", "b", "c"], ["b", "c", "d"]
        al = align(ref, hyp)
        ref_idx = [op.ref_index for op in al.ops if op.ref_index is not None]
        hyp_idx = [op.hyp_index for op in al.ops if op.hyp_index is not None]
        assert ref_idx == list(range(len(ref)))
        assert hyp_idx == list(range(len(hyp)))

    def test_wer_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            wer(align([], ["a"]), 0)


class TestWder:
    def test_four_match_one_wrong_speaker(self):
        words = ["a", "b", "c", "d"]
        al = align(words, words)
        rep = wder(al, [1, 1, 2, 2], [1, 1, 2, 1])
        assert rep.wder == pytest.approx(0.25)
        assert (rep.C, rep.C_IS) == (4, 1)

    def test_perfect(self):
        al = align(["a", "b"], ["a", "b"])
        assert wder(al, [1, 2], [1, 2]).wder == 0.0

    def test_substitution_with_wrong_speaker_counts(self):
        al = align(["a", "b"], ["a", "x"])
        rep = wder(al, [1, 2], [1, 1])
        assert (rep.S, rep.S_IS) == (1, 1)
        assert rep.wder == pytest.approx(0.5)

    def test_deletions_do_not_enter_denominator(self):
        al = align(["a", "b", "c"], ["a"])
        rep = wder(al, [1, 2, 2], [1])
        assert (rep.C, rep.D) == (1, 2)
        assert rep.wder == 0.0

    def test_permutation_recovery(self):
        # hypothesis ids are a relabeling: best_permutation must score 0
        words = ["a", "b", "c", "d", "a"]
        al = align(words, words)
        ref = [1, 2, 1, 3, 2]
        hyp = [3, 1, 3, 2, 1]
        assert wder(al, ref, hyp, mapping="identity").wder > 0
        rep = wder(al, ref, hyp, mapping="best_permutation")
        assert rep.wder == 0.0
        assert rep.mapping == {1: 2, 2: 3, 3: 1}

    def test_best_permutation_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(3, 9))
            words = random_words(rng, n)
            al = align(words, words)
            ref = [int(i) for i in rng.integers(1, 5, size=n)]
            hyp = [int(i) for i in rng.integers(1, 5, size=n)]
            got = wder(al, ref, hyp, mapping="best_permutation").wder

            ref_ids = sorted(set(ref))
            hyp_ids = sorted(set(hyp))
            targets = ref_ids + [-(k + 1) for k in
                                 range(max(0, len(hyp_ids) - len(ref_ids)))]
            best = min(
                wder(al, ref, [dict(zip(hyp_ids, p))[h] for h in hyp]).wder
                for p in itertools.permutations(targets, len(hyp_ids)))
            assert got == pytest.approx(best)

    def test_extra_hyp_speakers_allowed(self):
        al = align(["a", "b", "c"], ["a", "b", "c"])
        rep = wder(al, [1, 1, 1], [1, 2, 3], mapping="best_permutation")
        assert rep.wder == pytest.approx(2 / 3)

    def test_unknown_mapping(self):
        with pytest.raises(ValueError):
            wder(align(["a"], ["a"]), [1], [1], mapping="hungarian")


class TestModifiedWder:
    def tw(self, start, end):
        return TimedWord("w", start, end)

    def test_overlap_detection(self):
        words = [self.tw(0.0, 1.0), self.tw(0.5, 1.5), self.tw(2.0, 3.0)]
        assert overlapping_ref_indices(words) == {0, 1}

    def test_touching_words_do_not_overlap(self):
        words = [self.tw(0.0, 1.0), self.tw(1.0, 2.0)]
        assert overlapping_ref_indices(words) == set()

    def test_equals_wder_without_overlap(self):
        names = ["a", "b", "c", "d"]
        al = align(names, names)
        ref_words = [self.tw(i * 1.0, i * 1.0 + 0.5) for i in range(4)]
        ref, hyp = [1, 2, 1, 2], [1, 2, 2, 2]
        plain = wder(al, ref, hyp)
        modified = modified_wder(al, ref_words, ref, hyp)
        assert modified.wder == plain.wder
        assert modified.dropped_words == 0

    def test_drops_overlapped_words(self):
        names = ["a", "b", "c"]
        al = align(names, names)
        ref_words = [self.tw(0.0, 1.0), self.tw(0.5, 1.5), self.tw(2.0, 3.0)]
        # the two overlapped words carry the only speaker errors
        rep = modified_wder(al, ref_words, [1, 2, 1], [2, 1, 1])
        assert rep.dropped_words == 2
        assert rep.wder == 0.0
        assert rep.dropped_word_fraction == pytest.approx(2 / 3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            modified_wder(align(["a"], ["a"]), [self.tw(0, 1)], [1, 2], [1])
