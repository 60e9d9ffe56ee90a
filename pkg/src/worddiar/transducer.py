"""Transducer loss over a blank/label lattice, with an enumeration oracle.

The lattice walks a (time x label) grid: a blank transition consumes one
frame, a label transition emits one target symbol without consuming time.
A valid path takes T blanks and U labels and its final transition is the
blank at the last frame. All arithmetic is log-space.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from . import numerics as nm

NEG_INF = -np.inf

ENUM_LIMIT = 14


@dataclass
class LogProbLattice:
    """Per-cell log-probs: blank_lp is T x (U+1), label_lp is T x U."""

    blank_lp: np.ndarray
    label_lp: np.ndarray

    def __post_init__(self):
        self.blank_lp = np.asarray(self.blank_lp, dtype=np.float64)
        self.label_lp = np.asarray(self.label_lp, dtype=np.float64)
        t, u1 = self.blank_lp.shape
        if self.label_lp.shape != (t, u1 - 1):
            raise nm.DimensionError(
                f"lattice shapes disagree: blank {self.blank_lp.shape}, "
                f"label {self.label_lp.shape}")
        if not (np.all(np.isfinite(self.blank_lp))
                and np.all(np.isfinite(self.label_lp))):
            raise nm.NumericError("non-finite lattice entry")
        if self.blank_lp.max(initial=NEG_INF) > 1e-9 or \
           self.label_lp.max(initial=NEG_INF) > 1e-9:
            raise nm.NumericError("lattice entries must be log-probs (<= 0)")

    @property
    def T(self) -> int:
        return self.blank_lp.shape[0]

    @property
    def U(self) -> int:
        return self.label_lp.shape[1]


@dataclass
class LossResult:
    loss: float
    grad_blank: np.ndarray
    grad_label: np.ndarray


def forward_backward(lat: LogProbLattice) -> LossResult:
    """Exact -log P(target) with gradients from the occupancy (beta) pass."""
    T, U = lat.T, lat.U
    blank, label = lat.blank_lp, lat.label_lp

    alpha = np.full((T, U + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for u in range(1, U + 1):
        alpha[0, u] = alpha[0, u - 1] + label[0, u - 1]
    for t in range(1, T):
        alpha[t, 0] = alpha[t - 1, 0] + blank[t - 1, 0]
        for u in range(1, U + 1):
            alpha[t, u] = np.logaddexp(alpha[t - 1, u] + blank[t - 1, u],
                                       alpha[t, u - 1] + label[t, u - 1])

    log_p = alpha[T - 1, U] + blank[T - 1, U]
    if not np.isfinite(log_p):
        raise nm.NumericError("path probability underflowed to zero")

    # beta[t, u]: log prob of completing a path from node (t, u)
    beta = np.full((T, U + 1), NEG_INF)
    beta[T - 1, U] = blank[T - 1, U]
    for u in range(U - 1, -1, -1):
        beta[T - 1, u] = label[T - 1, u] + beta[T - 1, u + 1]
    for t in range(T - 2, -1, -1):
        beta[t, U] = blank[t, U] + beta[t + 1, U]
        for u in range(U - 1, -1, -1):
            beta[t, u] = np.logaddexp(blank[t, u] + beta[t + 1, u],
                                      label[t, u] + beta[t, u + 1])

    grad_blank = np.zeros_like(blank)
    grad_label = np.zeros_like(label)
    # blank transition occupancy
    for t in range(T):
        for u in range(U + 1):
            if t + 1 < T:
                cont = beta[t + 1, u]
            elif u == U:
                cont = 0.0  # terminating blank
            else:
                continue
            occ = alpha[t, u] + blank[t, u] + cont - log_p
            grad_blank[t, u] = -np.exp(occ)
    for t in range(T):
        for u in range(U):
            occ = alpha[t, u] + label[t, u] + beta[t, u + 1] - log_p
            grad_label[t, u] = -np.exp(occ)

    return LossResult(loss=-log_p, grad_blank=grad_blank, grad_label=grad_label)


def brute_force_loss(lat: LogProbLattice) -> float:
    """Sum of all alignment path probabilities by explicit enumeration."""
    T, U = lat.T, lat.U
    if T + U > ENUM_LIMIT:
        raise ValueError(f"enumeration bound exceeded: T+U = {T + U} > {ENUM_LIMIT}")
    total = _enumerate_paths(lat, collect=None)
    return -total


def path_count(T: int, U: int) -> int:
    """Number of valid alignments: C(T+U-1, U) (last move is pinned)."""
    return comb(T + U - 1, U)


def enumerate_path_logprobs(lat: LogProbLattice) -> list[float]:
    """Log-probability of every valid path (test support)."""
    if lat.T + lat.U > ENUM_LIMIT:
        raise ValueError("enumeration bound exceeded")
    paths: list[float] = []
    _enumerate_paths(lat, collect=paths)
    return paths


def _enumerate_paths(lat: LogProbLattice, collect: list[float] | None) -> float:
    T, U = lat.T, lat.U
    blank, label = lat.blank_lp, lat.label_lp
    total = NEG_INF

    stack = [(0, 0, 0.0)]
    while stack:
        t, u, lp = stack.pop()
        if t == T - 1 and u == U:
            lp += blank[t, u]
            if collect is not None:
                collect.append(lp)
            total = np.logaddexp(total, lp)
            continue
        if t < T - 1:
            stack.append((t + 1, u, lp + blank[t, u]))
        if u < U:
            stack.append((t, u + 1, lp + label[t, u]))
    return total


def transducer_loss_op(blank_lp: nm.Tensor, label_lp: nm.Tensor) -> nm.Tensor:
    """Tape node wrapping forward_backward; returns a 1x1 loss tensor."""
    lat = LogProbLattice(blank_lp.data, label_lp.data)
    res = forward_backward(lat)
    out_data = np.array([[res.loss]])
    if not (blank_lp.requires_grad or label_lp.requires_grad):
        return nm.constant(out_data)

    def bwd(g):
        s = g[0, 0]
        if blank_lp.requires_grad:
            blank_lp._accumulate(s * res.grad_blank)
        if label_lp.requires_grad:
            label_lp._accumulate(s * res.grad_label)

    return nm.Tensor(out_data, True, (blank_lp, label_lp), bwd)


# ---------------------------------------------------------------------------
# Lattice construction on top of the model


def _lattice_logits(params, features, wordpiece_targets,
                    block_blank_grad: bool = True):
    """Shared forward plumbing for both losses.

    Returns (s0, log_b, log_1mb, G, F_aux, T, U) where s0 is the flat
    (T*(U+1)) x 1 blank logit column. ASR-side tensors come from a no-grad
    forward when every ASR parameter is frozen.
    """
    from .model import ModelParams  # local import avoids a cycle

    assert isinstance(params, ModelParams)
    U = len(wordpiece_targets)
    asr_frozen = all(p.frozen for p in params.asr_parameters())

    def asr_forward():
        F, TAP = params.asr_encode(features)
        G = params.predict_all(list(wordpiece_targets))
        j = params.asr_joint
        h_flat = nm.outer_sum(nm.matmul(F, j.p),
                              nm.add(nm.matmul(G, j.q), j.b_h))
        s = nm.add(nm.matmul(nm.tanh(h_flat), j.a), j.b_s)
        s0 = nm.slice_cols(s, 0, 1)
        return F, TAP, G, s, s0

    if asr_frozen:
        with nm.no_grad():
            F, TAP, G, s, s0 = asr_forward()
    else:
        F, TAP, G, s, s0 = asr_forward()
        if block_blank_grad:
            s0 = nm.detach(s0)

    T = F.rows
    log_b = nm.log_sigmoid(s0)
    log_1mb = nm.log_sigmoid(nm.scale(s0, -1.0))
    return F, TAP, G, s, s0, log_b, log_1mb, T, U


def _flat_index(T: int, U: int, target_cols) -> tuple[list[int], list[int]]:
    """Row/col picks for label cells of a flattened T x (U+1) lattice."""
    rows, cols = [], []
    for t in range(T):
        for u in range(U):
            rows.append(t * (U + 1) + u)
            cols.append(target_cols[u])
    return rows, cols


def precompute_asr_cache(params, features, wordpiece_targets) -> dict:
    """Frozen-ASR forward quantities reused across aux-training steps."""
    if not all(p.frozen for p in params.asr_parameters()):
        raise ValueError("ASR cache is only valid with a frozen ASR side")
    _, TAP, G, _, _, log_b, log_1mb, T, U = _lattice_logits(
        params, features, wordpiece_targets, block_blank_grad=True)
    return {"TAP": TAP, "G": G, "log_b": log_b, "log_1mb": log_1mb,
            "T": T, "U": U}


def aux_loss(params, features, wordpiece_targets, speaker_targets,
             block_blank_grad: bool = True, asr_cache: dict | None = None
             ) -> nm.Tensor:
    """Speaker-label transducer loss with the blank shared from ASR.

    Predictor states are teacher-forced on the wordpiece targets; the label
    term at (t, u) is log(1 - b) plus the log speaker posterior of
    speaker_targets[u].
    """
    if len(speaker_targets) != len(wordpiece_targets):
        raise ValueError(
            f"targets differ in length: {len(wordpiece_targets)} wordpieces "
            f"vs {len(speaker_targets)} speakers")
    n = params.config.max_speakers
    for s_id in speaker_targets:
        if not (1 <= s_id <= n):
            raise ValueError(f"speaker id {s_id} outside 1..{n}")

    if asr_cache is not None:
        TAP, G = asr_cache["TAP"], asr_cache["G"]
        log_b, log_1mb = asr_cache["log_b"], asr_cache["log_1mb"]
        T, U = asr_cache["T"], asr_cache["U"]
    else:
        _, TAP, G, _, _, log_b, log_1mb, T, U = _lattice_logits(
            params, features, wordpiece_targets, block_blank_grad)

    f_aux = params.aux_encode(TAP)
    j = params.aux_joint
    h_flat = nm.outer_sum(nm.matmul(f_aux, j.p),
                          nm.add(nm.matmul(G, j.q), j.b_h))
    s_spk = nm.add(nm.matmul(nm.tanh(h_flat), j.a), j.b_s)
    log_q = nm.log_softmax(s_spk)

    blank_lp = nm.reshape(log_b, T, U + 1)
    _check_lattice_normalized(blank_lp.data[0, 0], log_1mb.data[0, 0])
    if U == 0:
        label_lp = nm.constant(np.zeros((T, 0)))
        return transducer_loss_op(blank_lp, label_lp)
    rows, cols = _flat_index(T, U, [s - 1 for s in speaker_targets])
    label_pick = nm.add(nm.pick(log_1mb, rows, [0] * len(rows)),
                        nm.pick(log_q, rows, cols))
    label_lp = nm.reshape(label_pick, T, U)
    return transducer_loss_op(blank_lp, label_lp)


def asr_loss(params, features, wordpiece_targets) -> nm.Tensor:
    """Wordpiece transducer loss over the HAT-factorized ASR distribution."""
    v = params.config.vocab_size
    for tok in wordpiece_targets:
        if not (1 <= tok < v):
            raise ValueError(f"wordpiece id {tok} outside 1..{v - 1}")

    F, TAP, G, s, _, log_b, log_1mb, T, U = _lattice_logits(
        params, features, wordpiece_targets, block_blank_grad=False)

    log_q = nm.log_softmax(nm.slice_cols(s, 1, v))
    blank_lp = nm.reshape(log_b, T, U + 1)
    _check_lattice_normalized(blank_lp.data[0, 0], log_1mb.data[0, 0])
    if U == 0:
        label_lp = nm.constant(np.zeros((T, 0)))
        return transducer_loss_op(blank_lp, label_lp)
    rows, cols = _flat_index(T, U, [tok - 1 for tok in wordpiece_targets])
    label_pick = nm.add(nm.pick(log_1mb, rows, [0] * len(rows)),
                        nm.pick(log_q, rows, cols))
    label_lp = nm.reshape(label_pick, T, U)
    return transducer_loss_op(blank_lp, label_lp)


def _check_lattice_normalized(log_b0: float, log_1mb0: float) -> None:
    total = np.exp(log_b0) + np.exp(log_1mb0)
    if abs(total - 1.0) > 1e-9:
        raise nm.NumericError(f"lattice cell not normalized: b + (1-b) = {total}")
