"""Batch drivers: simulate, train-asr, train-aux, decode, orchestrate,
eval, ablate-tap.

All commands are deterministic under a fixed --seed. Configuration is a
JSON file with four sections (model / trainer / data / eval); unknown keys
are rejected.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import datagen, decode as decode_mod, formats, metrics, training
from .baseline import orchestrate
from .datagen import (Conversation, SubwordTokenizer, WordTokenizer,
                      build_pool, canonicalize_speakers, generate_profiles,
                      segment_conversation, simulate_conversation)
from .model import (ModelConfig, ModelParams, load_checkpoint,
                    params_fingerprint, save_checkpoint)

log = logging.getLogger("worddiar")

DEFAULT_VOCAB_WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
    "hotel", "india", "juliet", "kilo", "lima", "mike", "november",
    "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform",
    "victor", "whiskey", "xray", "yankee", "zulu", "one", "two", "three",
    "four", "five", "six", "seven", "eight", "nine", "zero",
]


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class TrainerConfig:
    seed: int = 0
    asr_steps: int = 400
    aux_steps: int = 600
    batch_size: int = 4
    learning_rate: float = 1e-3
    final_learning_rate: float | None = None   # None = constant rate
    input_noise: float = 0.0                   # ASR-phase feature jitter
    average_tail: float = 0.0                  # tail fraction for weight averaging
    optimizer: str = "adam"
    loss_weights: dict = field(default_factory=lambda: {"asr": 0.0, "aux": 1.0})
    freeze_asr: bool = True
    block_blank_grad: bool = True

    def validate(self):
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("bad trainer settings")
        if self.final_learning_rate is not None and self.final_learning_rate <= 0:
            raise ValueError("final_learning_rate must be positive")
        if self.input_noise < 0 or not 0 <= self.average_tail <= 1:
            raise ValueError("bad regularization settings")


@dataclass
class DataConfig:
    train_conversations: int = 500
    test_conversations: int = 100
    train_pool_speakers: int = 24
    test_pool_speakers: int = 8
    utts_per_speaker: int = 6
    speakers_per_conversation: int = 2      # simulator M
    utterances_per_speaker: int = 2         # simulator N
    words_per_utt: list = field(default_factory=lambda: [3, 7])
    segment_lengths: list = field(default_factory=lambda: [15.0, 30.0, 60.0])
    sigma: float = 0.05
    signature_dims: int = 4
    min_profile_angle_deg: float = 25.0
    tokenizer: str = "word"
    vocab_words: list = field(default_factory=lambda: list(DEFAULT_VOCAB_WORDS))

    def validate(self):
        if self.tokenizer not in ("word", "subword"):
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")
        if self.speakers_per_conversation < 1:
            raise ValueError("need at least one speaker per conversation")
        if self.signature_dims < 1:
            raise ValueError("need at least one signature dimension")


@dataclass
class EvalConfig:
    mapping: str = "identity"
    beam_size: int = 1
    max_emissions_per_frame: int = 10

    def validate(self):
        if self.mapping not in ("identity", "best_permutation"):
            raise ValueError(f"unknown mapping {self.mapping!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.model.validate()
        self.trainer.validate()
        self.data.validate()
        self.eval.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"model", "trainer", "data", "eval"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(model=ModelConfig.from_dict(d.get("model", {})),
                  trainer=_from_dict(TrainerConfig, d.get("trainer", {})),
                  data=_from_dict(DataConfig, d.get("data", {})),
                  eval=_from_dict(EvalConfig, d.get("eval", {})))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "trainer": asdict(self.trainer),
                "data": asdict(self.data), "eval": asdict(self.eval)}


def load_config(path) -> RunConfig:
    with open(path) as f:
        return RunConfig.from_dict(json.load(f))


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def make_tokenizer(cfg: RunConfig):
    words = cfg.data.vocab_words
    if cfg.data.tokenizer == "word":
        return WordTokenizer(words)
    return SubwordTokenizer(words)


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(cfg: RunConfig, out_dir, seed: int, force: bool = False) -> dict:
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"{out_dir} is not empty; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    if d.signature_dims >= cfg.model.d_features:
        raise ValueError("signature_dims must leave room for content dims")
    sig_dim = d.signature_dims
    rng = np.random.default_rng(seed)
    profiles = generate_profiles(d.train_pool_speakers + d.test_pool_speakers,
                                 sig_dim, rng,
                                 min_angle_deg=d.min_profile_angle_deg)
    train_profiles = profiles[:d.train_pool_speakers]
    test_profiles = profiles[d.train_pool_speakers:]

    train_pool = build_pool(train_profiles, d.utts_per_speaker, d.vocab_words,
                            rng, tuple(d.words_per_utt), cfg.model.d_features,
                            d.sigma)
    test_pool = build_pool(test_profiles, d.utts_per_speaker, d.vocab_words,
                           rng, tuple(d.words_per_utt), cfg.model.d_features,
                           d.sigma)

    train_segments: list[Conversation] = []
    for i in range(d.train_conversations):
        conv = simulate_conversation(train_pool, d.speakers_per_conversation,
                                     d.utterances_per_speaker, rng,
                                     conv_id=f"train{i:05d}")
        target = d.segment_lengths[i % len(d.segment_lengths)]
        for seg in segment_conversation(conv, target):
            canonicalize_speakers(seg.words, cfg.model.max_speakers)
            train_segments.append(seg)
    test_convs: list[Conversation] = []
    for i in range(d.test_conversations):
        conv = simulate_conversation(test_pool, d.speakers_per_conversation,
                                     d.utterances_per_speaker, rng,
                                     conv_id=f"test{i:05d}")
        canonicalize_speakers(conv.words, cfg.model.max_speakers)
        test_convs.append(conv)

    train_manifest = formats.write_manifest(train_segments, out_dir / "train")
    test_manifest = formats.write_manifest(test_convs, out_dir / "test")
    save_config(cfg, out_dir / "config.json")
    log.info("wrote %d train segments, %d test conversations",
             len(train_segments), len(test_convs))
    return {"train_manifest": str(train_manifest),
            "test_manifest": str(test_manifest)}


# ---------------------------------------------------------------------------
# training

def _load_samples(cfg: RunConfig, manifest_path):
    tokenizer = make_tokenizer(cfg)
    convs = formats.read_manifest(manifest_path)
    return tokenizer, training.samples_from_conversations(
        convs, tokenizer, cfg.model.max_speakers)


def _model_config_for(cfg: RunConfig, tokenizer) -> ModelConfig:
    mc = ModelConfig(**asdict(cfg.model))
    mc.vocab_size = tokenizer.vocab_size
    mc.validate()
    return mc


def cmd_train_asr(cfg: RunConfig, manifest_path, out_ckpt, seed: int) -> list[float]:
    tokenizer, samples = _load_samples(cfg, manifest_path)
    mc = _model_config_for(cfg, tokenizer)
    params = ModelParams(mc, seed=seed)
    losses = training.train_asr(params, samples, cfg.trainer.asr_steps,
                                lr=cfg.trainer.learning_rate, seed=seed,
                                batch_size=cfg.trainer.batch_size,
                                lr_final=cfg.trainer.final_learning_rate,
                                input_noise=cfg.trainer.input_noise,
                                average_tail=cfg.trainer.average_tail)
    save_checkpoint(out_ckpt, mc, params)
    return losses


def cmd_train_aux(cfg: RunConfig, asr_ckpt, manifest_path, out_ckpt,
                  seed: int) -> list[float]:
    _, samples = _load_samples(cfg, manifest_path)
    mc, params = load_checkpoint(asr_ckpt)
    losses = training.train_aux(params, samples, cfg.trainer.aux_steps,
                                lr=cfg.trainer.learning_rate, seed=seed,
                                batch_size=cfg.trainer.batch_size,
                                block_blank_grad=cfg.trainer.block_blank_grad,
                                lr_final=cfg.trainer.final_learning_rate,
                                average_tail=cfg.trainer.average_tail)
    save_checkpoint(out_ckpt, mc, params)
    return losses


# ---------------------------------------------------------------------------
# decode

def cmd_decode(ckpt_path, manifest_path, out_path, cfg: RunConfig | None = None
               ) -> list[dict]:
    cfg = cfg or RunConfig()
    _, params = load_checkpoint(ckpt_path)
    tokenizer = make_tokenizer(cfg)
    if tokenizer.vocab_size != params.config.vocab_size:
        raise ValueError(
            f"tokenizer vocab {tokenizer.vocab_size} != checkpoint vocab "
            f"{params.config.vocab_size}")
    convs = formats.read_manifest(manifest_path)
    records = []
    total_conflicts = 0
    for conv in convs:
        if cfg.eval.beam_size > 1:
            hyp = decode_mod.beam_decode(params, conv.features,
                                         cfg.eval.beam_size,
                                         cfg.eval.max_emissions_per_frame)[0]
        else:
            hyp = decode_mod.greedy_decode(params, conv.features,
                                           cfg.eval.max_emissions_per_frame)
        words, conflicts = decode_mod.detokenize(hyp, tokenizer.pieces)
        total_conflicts += conflicts
        records.append(decode_mod.decode_record(conv.id, words, conflicts))
    decode_mod.write_decode_output(records, out_path)
    log.info("decoded %d utterances, %d speaker conflicts",
             len(records), total_conflicts)
    return records


# ---------------------------------------------------------------------------
# eval

def evaluate_records(records: list[dict], refs: list[Conversation],
                     mapping: str = "identity") -> dict:
    """Per-utterance and corpus WER / WDER / modified WDER."""
    ref_by_id = {c.id: c for c in refs}
    rec_ids = [r["utterance_id"] for r in records]
    missing = sorted(set(rec_ids) ^ set(ref_by_id))
    if missing:
        raise ValueError(f"utterance ids mismatch between decode and reference: {missing}")

    per_utt = {}
    tot = dict(ref_len=0, errs=0, S=0, D=0, I=0, C=0, CS_IS=0, CS=0,
               mC=0, mS=0, mC_IS=0, mS_IS=0, dropped=0, ref_words=0)
    for rec in records:
        conv = ref_by_id[rec["utterance_id"]]
        ref_words = [w.text for w in conv.words]
        ref_spk = [w.speaker_id for w in conv.words]
        if not any(ref_spk):
            _, ref_spk = canonicalize_speakers(conv.words)
        hyp_words = [w["word"] for w in rec["words"]]
        hyp_spk = [w["speaker"] for w in rec["words"]]
        al = metrics.align(ref_words, hyp_words)
        w, s, d, i = metrics.wer(al, len(ref_words))
        rep = metrics.wder(al, ref_spk, hyp_spk, mapping)
        mrep = metrics.modified_wder(al, conv.words, ref_spk, hyp_spk, mapping)
        per_utt[conv.id] = {
            "wer": w, "sub_rate": s, "del_rate": d, "ins_rate": i,
            "wder": rep.wder, "modified_wder": mrep.wder,
            "counts": {"C": rep.C, "S": rep.S, "D": rep.D, "I": rep.I,
                       "C_IS": rep.C_IS, "S_IS": rep.S_IS},
            "dropped_word_fraction": mrep.dropped_word_fraction,
            "ref_speaker_count": len(set(ref_spk)),
        }
        tot["ref_len"] += len(ref_words)
        tot["errs"] += al.distance
        tot["S"] += rep.S
        tot["D"] += rep.D
        tot["I"] += rep.I
        tot["C"] += rep.C
        tot["CS_IS"] += rep.C_IS + rep.S_IS
        tot["CS"] += rep.C + rep.S
        tot["mC_IS"] += mrep.C_IS + mrep.S_IS
        tot["mC"] += mrep.C + mrep.S
        tot["dropped"] += mrep.dropped_words
        tot["ref_words"] += mrep.ref_words

    drop_fracs = [u["dropped_word_fraction"] for u in per_utt.values()]
    corpus = {
        "wer": tot["errs"] / tot["ref_len"] if tot["ref_len"] else 0.0,
        "sub_rate": tot["S"] / tot["ref_len"] if tot["ref_len"] else 0.0,
        "del_rate": tot["D"] / tot["ref_len"] if tot["ref_len"] else 0.0,
        "ins_rate": tot["I"] / tot["ref_len"] if tot["ref_len"] else 0.0,
        "wder": tot["CS_IS"] / tot["CS"] if tot["CS"] else 0.0,
        "modified_wder": tot["mC_IS"] / tot["mC"] if tot["mC"] else 0.0,
        "dropped_word_fraction_mean": float(np.mean(drop_fracs)) if drop_fracs else 0.0,
        "dropped_word_fraction_std": float(np.std(drop_fracs)) if drop_fracs else 0.0,
        "utterances": len(records),
        "mapping": mapping,
    }
    return {"corpus": corpus, "per_utterance": per_utt}


def speaker_count_breakdown(report: dict) -> dict[int, dict]:
    """WDER bucketed by the reference number of speakers."""
    buckets: dict[int, dict] = {}
    for utt in report["per_utterance"].values():
        b = buckets.setdefault(utt["ref_speaker_count"],
                               {"CS": 0, "CS_IS": 0, "utterances": 0})
        b["CS"] += utt["counts"]["C"] + utt["counts"]["S"]
        b["CS_IS"] += utt["counts"]["C_IS"] + utt["counts"]["S_IS"]
        b["utterances"] += 1
    for b in buckets.values():
        b["wder"] = b["CS_IS"] / b["CS"] if b["CS"] else 0.0
    return dict(sorted(buckets.items()))


def write_report_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["utterance_id", "wer", "sub_rate", "del_rate", "ins_rate",
                    "wder", "modified_wder", "ref_speaker_count"])
        for uid, u in sorted(report["per_utterance"].items()):
            w.writerow([uid, u["wer"], u["sub_rate"], u["del_rate"],
                        u["ins_rate"], u["wder"], u["modified_wder"],
                        u["ref_speaker_count"]])


def cmd_eval(decode_output, manifest_path, out_path=None, csv_path=None,
             mapping: str = "identity", by_speaker_count: bool = False) -> dict:
    records = decode_mod.read_decode_output(decode_output)
    refs = formats.read_manifest(manifest_path, load_features=False)
    report = evaluate_records(records, refs, mapping)
    if by_speaker_count:
        report["by_speaker_count"] = {
            str(k): v for k, v in speaker_count_breakdown(report).items()}
    if out_path:
        with open(out_path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    if csv_path:
        write_report_csv(report, csv_path)
    return report


# ---------------------------------------------------------------------------
# ablation

def cmd_ablate_tap(cfg: RunConfig, asr_ckpt, train_manifest, test_manifest,
                   tap_layers: list[int], out_dir, seed: int) -> dict:
    """Train one auxiliary network per tap layer on the same frozen ASR."""
    if len(tap_layers) < 2:
        raise ValueError("need at least two tap layers to ablate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_cfg, base_params = load_checkpoint(asr_ckpt)
    rows = {}
    for tap in tap_layers:
        mc = ModelConfig(**{**asdict(base_cfg), "tap_layer": tap})
        params = ModelParams(mc, seed=seed)
        base_named = base_params.named()
        for name, p in params.named().items():
            p.data[...] = base_named[name].data
        ckpt = out_dir / f"aux_tap{tap}.ckpt"
        cfg_tap = RunConfig.from_dict({**cfg.to_dict(),
                                       "model": asdict(mc)})
        _, samples = _load_samples(cfg_tap, train_manifest)
        training.train_aux(params, samples, cfg.trainer.aux_steps,
                           lr=cfg.trainer.learning_rate, seed=seed,
                           batch_size=cfg.trainer.batch_size,
                           block_blank_grad=cfg.trainer.block_blank_grad,
                           lr_final=cfg.trainer.final_learning_rate,
                           average_tail=cfg.trainer.average_tail)
        save_checkpoint(ckpt, mc, params)
        dec_path = out_dir / f"decode_tap{tap}.jsonl"
        try:
            cmd_decode(ckpt, test_manifest, dec_path, cfg_tap)
            report = cmd_eval(dec_path, test_manifest, mapping=cfg.eval.mapping)
            rows[tap] = {"wder": report["corpus"]["wder"],
                         "wer": report["corpus"]["wer"]}
        except Exception:
            _write_ablation_report(rows, tap_layers, out_dir)  # keep partials
            raise
    result = _write_ablation_report(rows, tap_layers, out_dir)
    return result


def _write_ablation_report(rows: dict, tap_layers: list[int], out_dir: Path) -> dict:
    taps = sorted(rows)
    observation = None
    if len(rows) == len(tap_layers) and len(taps) >= 3:
        first, last = min(taps), max(taps)
        middles = [t for t in taps if t not in (first, last)]
        mid_best = min(rows[t]["wder"] for t in middles)
        observation = {
            "middle_tap_not_worse_than_first": mid_best <= rows[first]["wder"],
            "middle_tap_not_worse_than_last": mid_best <= rows[last]["wder"],
        }
    result = {"rows": {str(t): rows[t] for t in taps},
              "expected_observation": observation}
    with open(out_dir / "ablation.json", "w") as f:
        json.dump(result, f, indent=2, sort_keys=True)
        f.write("\n")
    return result


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="worddiar",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a synthetic corpus")
    _add_common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")

    sp = sub.add_parser("train-asr", help="phase 1: wordpiece transducer")
    _add_common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train-aux", help="phase 2: frozen-ASR speaker loss")
    _add_common(sp)
    sp.add_argument("--asr-checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("decode", help="decode a manifest with a checkpoint")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--beam", type=int, default=None)

    sp = sub.add_parser("orchestrate", help="baseline: join CTM with RTTM")
    _add_common(sp)
    sp.add_argument("--ctm", required=True)
    sp.add_argument("--rttm", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="score a decode output against a manifest")
    _add_common(sp)
    sp.add_argument("--decode-output", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.add_argument("--csv")
    sp.add_argument("--mapping", choices=["identity", "best_permutation"],
                    default=None)
    sp.add_argument("--by-speaker-count", action="store_true")

    sp = sub.add_parser("ablate-tap", help="aux training per tap layer")
    _add_common(sp)
    sp.add_argument("--asr-checkpoint", required=True)
    sp.add_argument("--train-manifest", required=True)
    sp.add_argument("--test-manifest", required=True)
    sp.add_argument("--taps", required=True,
                    help="comma-separated 1-based layer indices")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, args.out, args.seed, args.force)
        elif args.command == "train-asr":
            cmd_train_asr(cfg, args.manifest, args.out, args.seed)
        elif args.command == "train-aux":
            cmd_train_aux(cfg, args.asr_checkpoint, args.manifest, args.out,
                          args.seed)
        elif args.command == "decode":
            if args.beam is not None:
                cfg.eval.beam_size = args.beam
            cmd_decode(args.checkpoint, args.manifest, args.out, cfg)
        elif args.command == "orchestrate":
            with open(args.ctm) as f:
                words = formats.parse_ctm(f.read())
            with open(args.rttm) as f:
                segs = formats.parse_rttm(f.read())
            records, fallbacks = orchestrate(words, segs)
            decode_mod.write_decode_output(records, args.out)
            log.info("orchestrated %d files, %d fallback assignments",
                     len(records), fallbacks)
        elif args.command == "eval":
            report = cmd_eval(args.decode_output, args.manifest, args.out,
                              args.csv, args.mapping or cfg.eval.mapping,
                              args.by_speaker_count)
            log.info("corpus WER %.4f WDER %.4f modified WDER %.4f",
                     report["corpus"]["wer"], report["corpus"]["wder"],
                     report["corpus"]["modified_wder"])
        elif args.command == "ablate-tap":
            taps = [int(t) for t in args.taps.split(",")]
            cmd_ablate_tap(cfg, args.asr_checkpoint, args.train_manifest,
                           args.test_manifest, taps, args.out, args.seed)
    except FileExistsError as e:
        print(f"error (output exists): {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
