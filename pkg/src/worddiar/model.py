"""Joint ASR + speaker network.

ASR side: a stacked causal encoder (affine + tanh + LSTM per layer), an
embedding prediction network over the last few non-blank tokens, and a
joint network producing logits whose position 0 is the blank. The blank
posterior is a sigmoid of that logit; non-blank mass is (1 - blank) times
a softmax over the rest.

Speaker side: a recurrent auxiliary encoder reads the activations of an
intermediate ASR encoder layer; its own joint produces N speaker logits,
prefixed with the *same* blank logit as the ASR joint, so speaker
emissions stay synchronized with wordpiece emissions.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import numerics as nm
from .numerics import (Parameter, Tensor, LstmParams, affine, tanh, matmul,
                       add, constant, embed_rows, concat_cols, lstm_run,
                       slice_rows)

SOS_ID = 0  # blank row doubles as start-of-sequence in the predictor table

CHECKPOINT_MAGIC = b"WDCKPT01"


@dataclass
class ModelConfig:
    d_features: int = 16
    d_a: int = 32          # ASR encoder output width (tap width too)
    d_l: int = 24          # prediction network output width
    d_h: int = 32          # ASR joint hidden width
    d_aux: int = 32        # auxiliary encoder output width
    d_h_aux: int = 32      # auxiliary joint hidden width
    vocab_size: int = 64   # V, including blank at index 0
    max_speakers: int = 4  # N; speaker vocab is N+1 with the shared blank
    asr_layers: int = 3
    tap_layer: int = 2     # 1-based intermediate layer fed to the aux encoder
    aux_layers: int = 1
    predictor_context: int = 2
    embed_dim: int = 16

    def validate(self) -> None:
        if not (1 <= self.tap_layer <= self.asr_layers):
            raise ValueError(f"tap_layer {self.tap_layer} outside 1..{self.asr_layers}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2 (blank + one label)")
        if self.max_speakers < 1:
            raise ValueError("max_speakers must be >= 1")
        if self.predictor_context < 1:
            raise ValueError("predictor_context must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


class EncoderLayer:
    """affine + tanh + causal LSTM, with a residual around the LSTM.

    The residual keeps the input signal flowing through deep stacks even
    while the small-scale initial weights leave the LSTM nearly silent.
    """

    def __init__(self, w: Parameter, b: Parameter, lstm: LstmParams):
        self.w = w
        self.b = b
        self.lstm = lstm

    def run(self, xs: Tensor) -> Tensor:
        pre = tanh(affine(xs, self.w, self.b))
        out = lstm_run(self.lstm, pre)
        skip = xs if xs.cols == out.cols else pre
        return add(skip, out)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b] + self.lstm.parameters()


class JointParams:
    def __init__(self, p: Parameter, q: Parameter, b_h: Parameter,
                 a: Parameter, b_s: Parameter):
        self.p = p
        self.q = q
        self.b_h = b_h
        self.a = a
        self.b_s = b_s

    def parameters(self) -> list[Parameter]:
        return [self.p, self.q, self.b_h, self.a, self.b_s]


class ModelParams:
    """All tensors of the joint model, grouped by component."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)

        def w(name, r, c):
            return Parameter(rng.uniform(-0.1, 0.1, size=(r, c)), name=name)

        def zeros(name, c):
            return Parameter(np.zeros((1, c)), name=name)

        c = config
        self.asr_encoder: list[EncoderLayer] = []
        d_in = c.d_features
        for i in range(c.asr_layers):
            layer = EncoderLayer(
                w(f"asr_enc.{i}.w", d_in, c.d_a),
                zeros(f"asr_enc.{i}.b", c.d_a),
                LstmParams(w(f"asr_enc.{i}.lstm.w_x", c.d_a, 4 * c.d_a),
                           w(f"asr_enc.{i}.lstm.w_h", c.d_a, 4 * c.d_a),
                           zeros(f"asr_enc.{i}.lstm.b", 4 * c.d_a)))
            self.asr_encoder.append(layer)
            d_in = c.d_a

        self.embedding = w("predictor.embedding", c.vocab_size, c.embed_dim)
        self.pred_w = w("predictor.w", c.predictor_context * c.embed_dim, c.d_l)
        self.pred_b = zeros("predictor.b", c.d_l)

        self.asr_joint = JointParams(
            w("asr_joint.p", c.d_a, c.d_h), w("asr_joint.q", c.d_l, c.d_h),
            zeros("asr_joint.b_h", c.d_h), w("asr_joint.a", c.d_h, c.vocab_size),
            zeros("asr_joint.b_s", c.vocab_size))

        self.aux_encoder: list[LstmParams] = []
        d_in = c.d_a
        for i in range(c.aux_layers):
            self.aux_encoder.append(
                LstmParams(w(f"aux_enc.{i}.lstm.w_x", d_in, 4 * c.d_aux),
                           w(f"aux_enc.{i}.lstm.w_h", c.d_aux, 4 * c.d_aux),
                           zeros(f"aux_enc.{i}.lstm.b", 4 * c.d_aux)))
            d_in = c.d_aux

        self.aux_joint = JointParams(
            w("aux_joint.p", c.d_aux, c.d_h_aux), w("aux_joint.q", c.d_l, c.d_h_aux),
            zeros("aux_joint.b_h", c.d_h_aux),
            w("aux_joint.a", c.d_h_aux, c.max_speakers),
            zeros("aux_joint.b_s", c.max_speakers))

    # -- parameter groups ---------------------------------------------------

    def asr_parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.asr_encoder:
            out += layer.parameters()
        out += [self.embedding, self.pred_w, self.pred_b]
        out += self.asr_joint.parameters()
        return out

    def aux_parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for lstm in self.aux_encoder:
            out += lstm.parameters()
        out += self.aux_joint.parameters()
        return out

    def parameters(self) -> list[Parameter]:
        return self.asr_parameters() + self.aux_parameters()

    def freeze_asr(self, frozen: bool = True) -> None:
        for p in self.asr_parameters():
            p.frozen = frozen

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    # -- forward ------------------------------------------------------------

    def asr_encode(self, features: np.ndarray) -> tuple[Tensor, Tensor]:
        """Run the ASR encoder; returns (final outputs, tap-layer outputs)."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"features must be nonempty frames x d, got {feats.shape}")
        if feats.shape[1] != self.config.d_features:
            raise nm.DimensionError(
                f"features width {feats.shape[1]} != d_features {self.config.d_features}")
        x = constant(feats)
        tap = None
        for i, layer in enumerate(self.asr_encoder, start=1):
            x = layer.run(x)
            if i == self.config.tap_layer:
                tap = x
        assert tap is not None
        return x, tap

    def aux_encode(self, tap_seq: Tensor) -> Tensor:
        if tap_seq.rows < 1:
            raise ValueError("aux_encode needs a nonempty sequence")
        if tap_seq.cols != self.aux_encoder[0].d_in:
            raise nm.DimensionError(
                f"tap width {tap_seq.cols} != aux input {self.aux_encoder[0].d_in}")
        x = tap_seq
        for lstm in self.aux_encoder:
            x = lstm_run(lstm, x)
        return x

    def predict(self, history: list[int]) -> Tensor:
        """Prediction-network output for one token history (1 x d_l)."""
        ctx = self.config.predictor_context
        padded = [SOS_ID] * max(0, ctx - len(history)) + list(history[-ctx:])
        for tok in padded:
            if not (0 <= tok < self.config.vocab_size):
                raise IndexError(f"token id {tok} outside vocab of {self.config.vocab_size}")
        embs = [embed_rows(self.embedding, [tok]) for tok in padded]
        return affine(concat_cols(embs), self.pred_w, self.pred_b)

    def predict_all(self, targets: list[int]) -> Tensor:
        """Teacher-forced predictor states for u = 0..U as a (U+1) x d_l tensor."""
        rows = [self.predict(targets[:u]) for u in range(len(targets) + 1)]
        return nm.stack_rows(rows)

    def joint_hidden(self, f_t: Tensor, g_u: Tensor, which: str = "asr") -> Tensor:
        j = self._joint(which)
        return add(add(matmul(f_t, j.p), matmul(g_u, j.q)), j.b_h)

    def asr_logits(self, h: Tensor) -> Tensor:
        j = self.asr_joint
        return add(matmul(tanh(h), j.a), j.b_s)

    def aux_logits(self, h_aux: Tensor, s_blank: Tensor) -> Tensor:
        """Speaker logits prefixed with the shared ASR blank logit."""
        j = self.aux_joint
        spk = add(matmul(tanh(h_aux), j.a), j.b_s)
        return concat_cols([s_blank, spk])

    def _joint(self, which: str) -> JointParams:
        if which == "asr":
            return self.asr_joint
        if which == "aux":
            return self.aux_joint
        raise ValueError(f"unknown joint {which!r}")


def hat_posterior(s: np.ndarray) -> tuple[float, np.ndarray]:
    """HAT factorization of a logit row: blank prob and non-blank probs.

    Returns (b, p) with b = sigmoid(s[0]) and p = (1-b) * softmax(s[1:]),
    so b + p.sum() == 1 exactly up to rounding.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size < 2:
        raise ValueError("need a blank logit plus at least one label logit")
    b = float(nm._sigmoid_np(s[:1].reshape(1, 1))[0, 0])
    p = (1.0 - b) * nm._softmax_np(s[1:].reshape(1, -1)).ravel()
    return b, p


def aux_posterior(s_aux: np.ndarray) -> np.ndarray:
    """Speaker probabilities given a non-blank emission (softmax over s_aux[1:])."""
    s_aux = np.asarray(s_aux, dtype=np.float64).ravel()
    return nm._softmax_np(s_aux[1:].reshape(1, -1)).ravel()


# ---------------------------------------------------------------------------
# Checkpoints: versioned header, JSON config block, named little-endian
# float64 tensors with explicit shapes.

def save_checkpoint(path, config: ModelConfig, params: ModelParams) -> None:
    named = params.named()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    cfg_bytes = json.dumps(asdict(config), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", len(named)))
    for name in sorted(named):
        p = named[name]
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<QQ", p.rows, p.cols))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    magic = buf.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    (cfg_len,) = struct.unpack("<I", buf.read(4))
    config = ModelConfig.from_dict(json.loads(buf.read(cfg_len).decode()))
    params = ModelParams(config, seed=0)
    named = params.named()
    (count,) = struct.unpack("<I", buf.read(4))
    if count != len(named):
        raise CheckpointError(f"tensor count {count} != expected {len(named)}")
    seen = set()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", buf.read(4))
        name = buf.read(nlen).decode()
        rows, cols = struct.unpack("<QQ", buf.read(16))
        if name not in named:
            raise CheckpointError(f"unknown tensor {name!r} in checkpoint")
        p = named[name]
        if (rows, cols) != p.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {(rows, cols)}, model {p.shape}")
        data = np.frombuffer(buf.read(rows * cols * 8), dtype="<f8")
        p.data[...] = data.reshape(rows, cols)
        seen.add(name)
    if seen != set(named):
        raise CheckpointError("checkpoint is missing tensors")
    return config, params


def params_fingerprint(params: ModelParams, names: list[str] | None = None) -> dict[str, bytes]:
    """Stable per-tensor byte digests, for freeze-contract checks."""
    import hashlib
    named = params.named()
    keys = names if names is not None else sorted(named)
    return {k: hashlib.sha256(named[k].data.tobytes()).digest() for k in keys}
