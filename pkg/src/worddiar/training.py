"""Optimizer and the two training phases.

Phase 1 trains the whole model on the wordpiece transducer loss. Phase 2
loads that checkpoint, freezes the ASR side (encoder, predictor, ASR
joint) and optimizes the speaker-label transducer loss only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import transducer
from .datagen import Conversation, build_targets, canonicalize_speakers
from .model import ModelParams
from .numerics import Parameter

log = logging.getLogger("worddiar")


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.frozen:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Sample:
    id: str
    features: np.ndarray
    wordpieces: list[int]
    speakers: list[int]


def samples_from_conversations(convs: list[Conversation], tokenizer,
                               max_speakers: int) -> list[Sample]:
    """Canonicalize speakers per conversation and build paired targets."""
    out: list[Sample] = []
    for conv in convs:
        _, ids = canonicalize_speakers(conv.words, max_speakers=max_speakers)
        wp, spk = build_targets(conv.words, ids, tokenizer)
        out.append(Sample(conv.id, conv.features, wp, spk))
    return out


def _train(params: ModelParams, samples: list[Sample], loss_of, steps: int,
           lr: float, seed: int, batch_size: int, log_every: int = 50,
           lr_final: float | None = None, input_noise: float = 0.0,
           average_tail: float = 0.0) -> list[float]:
    """Deterministic mini-batch loop; returns per-step mean losses.

    When lr_final is given, the learning rate decays linearly from lr to
    lr_final across the run; otherwise it stays constant.  input_noise > 0
    adds per-step Gaussian jitter to the features seen by loss_of.
    average_tail > 0 replaces the final weights with the running average of
    the last average_tail fraction of steps (tail weight averaging).
    """
    if not samples:
        raise ValueError("no training samples")
    opt = Adam(params.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    order: list[int] = []
    history: list[float] = []
    avg_from = steps - max(1, int(round(average_tail * steps))) if average_tail > 0 else steps
    avg: dict[int, np.ndarray] = {}
    avg_count = 0
    for step in range(steps):
        if lr_final is not None and steps > 1:
            opt.lr = lr + (lr_final - lr) * step / (steps - 1)
        opt.zero_grad()
        total = 0.0
        for _ in range(batch_size):
            if not order:
                order = list(rng.permutation(len(samples)))
            s = samples[order.pop()]
            if input_noise > 0.0:
                s = Sample(s.id, s.features +
                           rng.normal(0.0, input_noise, s.features.shape),
                           s.wordpieces, s.speakers)
            loss = loss_of(s)
            loss.backward(np.array([[1.0 / batch_size]]))
            total += loss.item()
        opt.step()
        if step >= avg_from:
            avg_count += 1
            for i, p in enumerate(params.parameters()):
                if i in avg:
                    avg[i] += (p.data - avg[i]) / avg_count
                else:
                    avg[i] = p.data.copy()
        mean = total / batch_size
        history.append(mean)
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("step %d: loss %.4f", step, mean)
    if avg:
        for i, p in enumerate(params.parameters()):
            p.data[...] = avg[i]
    return history


def train_asr(params: ModelParams, samples: list[Sample], steps: int,
              lr: float = 1e-3, seed: int = 0, batch_size: int = 4,
              log_every: int = 50, lr_final: float | None = None,
              input_noise: float = 0.0, average_tail: float = 0.0) -> list[float]:
    params.freeze_asr(False)
    return _train(params, samples,
                  lambda s: transducer.asr_loss(params, s.features, s.wordpieces),
                  steps, lr, seed, batch_size, log_every, lr_final,
                  input_noise, average_tail)


def train_aux(params: ModelParams, samples: list[Sample], steps: int,
              lr: float = 1e-3, seed: int = 0, batch_size: int = 4,
              block_blank_grad: bool = True, log_every: int = 50,
              lr_final: float | None = None,
              average_tail: float = 0.0) -> list[float]:
    params.freeze_asr(True)
    # the frozen ASR forward of each sample never changes: compute it once
    cache = {s.id: transducer.precompute_asr_cache(params, s.features,
                                                   s.wordpieces)
             for s in samples}
    return _train(params, samples,
                  lambda s: transducer.aux_loss(params, s.features,
                                                s.wordpieces, s.speakers,
                                                block_blank_grad=block_blank_grad,
                                                asr_cache=cache[s.id]),
                  steps, lr, seed, batch_size, log_every, lr_final,
                  average_tail=average_tail)
