import numpy as np
import pytest

from worddiar.decode import (DiarizedHypothesis, beam_decode, decode_record,
                             detokenize, greedy_decode, read_decode_output,
                             write_decode_output)
from worddiar.model import ModelConfig, ModelParams


@pytest.fixture
def cfg():
    return ModelConfig(d_features=4, d_a=6, d_l=5, d_h=6, d_aux=6, d_h_aux=6,
                       vocab_size=7, max_speakers=3, asr_layers=2, tap_layer=1,
                       aux_layers=1, predictor_context=2, embed_dim=3)


def random_model(cfg, seed):
    return ModelParams(cfg, seed=seed)


class TestHypothesis:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            DiarizedHypothesis([1, 2], [1], [0, 0], 0.0)

    def test_empty_allowed(self):
        h = DiarizedHypothesis([], [], [], -1.5)
        assert h.score == -1.5


class TestGreedy:
    def test_blank_biased_model_emits_nothing(self, cfg):
        params = random_model(cfg, 0)
        # a huge blank bias makes sigmoid(s0) ~ 1 at every lattice point
        params.asr_joint.b_s.data[0, 0] = 50.0
        hyp = greedy_decode(params, np.zeros((6, 4)))
        assert hyp.wordpieces == []
        assert hyp.speakers == []
        assert hyp.score == pytest.approx(0.0, abs=1e-12)

    def test_emission_cap_limits_per_frame(self, cfg):
        params = random_model(cfg, 0)
        params.asr_joint.b_s.data[0, 0] = -50.0  # never blank on its own
        hyp = greedy_decode(params, np.zeros((3, 4)),
                            max_emissions_per_frame=4)
        assert len(hyp.wordpieces) == 12
        assert hyp.frame_of_emission == [0] * 4 + [1] * 4 + [2] * 4

    def test_sync_invariant_random_models(self, cfg):
        rng = np.random.default_rng(11)
        for seed in range(10):
            params = random_model(cfg, seed)
            feats = rng.normal(size=(rng.integers(1, 8), 4))
            hyp = greedy_decode(params, feats)
            assert len(hyp.wordpieces) == len(hyp.speakers)
            assert len(hyp.wordpieces) == len(hyp.frame_of_emission)
            assert all(1 <= s <= cfg.max_speakers for s in hyp.speakers)
            assert all(1 <= w < cfg.vocab_size for w in hyp.wordpieces)
            assert hyp.frame_of_emission == sorted(hyp.frame_of_emission)

    def test_deterministic(self, cfg):
        params = random_model(cfg, 3)
        feats = np.random.default_rng(4).normal(size=(5, 4))
        a = greedy_decode(params, feats)
        b = greedy_decode(params, feats)
        assert a == b

    def test_bad_cap_rejected(self, cfg):
        with pytest.raises(ValueError):
            greedy_decode(random_model(cfg, 0), np.zeros((2, 4)),
                          max_emissions_per_frame=0)


class TestBeam:
    def test_beam_one_equals_greedy_bit_exactly(self, cfg):
        rng = np.random.default_rng(5)
        for seed in range(8):
            params = random_model(cfg, seed)
            feats = rng.normal(size=(6, 4))
            g = greedy_decode(params, feats)
            (b,) = beam_decode(params, feats, beam_size=1)
            assert b == g

    def test_beam_best_score_at_least_greedy(self, cfg):
        rng = np.random.default_rng(6)
        for seed in range(8):
            params = random_model(cfg, seed)
            feats = rng.normal(size=(5, 4))
            g = greedy_decode(params, feats)
            hyps = beam_decode(params, feats, beam_size=4)
            # merged beams accumulate path mass, so >= the single greedy path
            assert hyps[0].score >= g.score - 1e-12

    def test_nbest_sorted_and_bounded(self, cfg):
        params = random_model(cfg, 9)
        feats = np.random.default_rng(9).normal(size=(4, 4))
        hyps = beam_decode(params, feats, beam_size=3)
        assert 1 <= len(hyps) <= 3
        scores = [h.score for h in hyps]
        assert scores == sorted(scores, reverse=True)
        for h in hyps:
            assert len(h.wordpieces) == len(h.speakers)

    def test_bad_beam_size(self, cfg):
        with pytest.raises(ValueError):
            beam_decode(random_model(cfg, 0), np.zeros((2, 4)), beam_size=0)


class TestDetokenize:
    def vocab(self):
        return ["<blank>", "▁hel", "lo", "▁a", "b", "c"]

    def test_merges_continuation_pieces(self):
        hyp = DiarizedHypothesis([1, 2, 3], [1, 1, 2], [0, 1, 4], 0.0)
        words, conflicts = detokenize(hyp, self.vocab())
        assert words == [("hello", 1, 0), ("a", 2, 4)]
        assert conflicts == 0

    def test_conflict_counted_not_split(self):
        hyp = DiarizedHypothesis([1, 2], [1, 2], [0, 1], 0.0)
        words, conflicts = detokenize(hyp, self.vocab())
        assert words == [("hello", 1, 0)]
        assert conflicts == 1

    def test_leading_continuation_starts_word(self):
        hyp = DiarizedHypothesis([2, 4], [2, 2], [0, 0], 0.0)
        words, conflicts = detokenize(hyp, self.vocab())
        assert words == [("lob", 2, 0)]
        assert conflicts == 0

    def test_empty_hypothesis(self):
        words, conflicts = detokenize(DiarizedHypothesis([], [], [], 0.0),
                                      self.vocab())
        assert words == []
        assert conflicts == 0

    def test_out_of_vocab_token(self):
        hyp = DiarizedHypothesis([9], [1], [0], 0.0)
        with pytest.raises(IndexError):
            detokenize(hyp, self.vocab())


class TestOutputFormat:
    def test_round_trip(self, tmp_path):
        recs = [decode_record("c0", [("hi", 1, 0), ("there", 2, 3)], 1),
                decode_record("c1", [], 0)]
        path = tmp_path / "out.jsonl"
        write_decode_output(recs, path)
        assert read_decode_output(path) == recs

    def test_record_schema(self):
        rec = decode_record("u", [("w", 2, 7)], 0)
        assert set(rec) == {"utterance_id", "words", "speaker_conflicts"}
        assert rec["words"][0] == {"word": "w", "speaker": 2, "frame": 7}
