"""Loss terms and the multi-task combiner."""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import ndtensor as nt
from .errors import ConfigError

log = logging.getLogger(__name__)

ABLATION_MODES = ("sr", "sr_csd", "sr_csd_gr", "full")


@dataclass
class LossWeights:
    alpha: float = 0.1
    beta1: float = 0.1
    beta2: float = 0.1
    lam: float = 0.1
    tau1: float = 0.1
    tau2: float = 0.1
    tau3: float = 1.0

    def validate(self):
        for name in ("alpha", "beta1", "beta2", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss.{name} must be >= 0")
        for name in ("tau1", "tau2", "tau3"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"loss.{name} must be > 0")
        return self


@dataclass
class LossReport:
    l_sr: float = 0.0
    l_cluster: float = 0.0
    l_contrastive: float = 0.0
    l_distill: float = 0.0
    l_adv: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def mode_flags(mode):
    """(use_csd, use_adversarial) for an ablation mode."""
    if mode not in ABLATION_MODES:
        raise ConfigError(f"ablation.mode must be one of {ABLATION_MODES}, got {mode!r}")
    return mode != "sr", mode in ("sr_csd_gr", "full")


def next_item_targets(ids):
    """Shifted targets and the mask of positions that have a next item."""
    targets = np.zeros_like(ids)
    targets[:, :-1] = ids[:, 1:]
    return targets, (ids != 0) & (targets != 0)


def next_item_loss(hidden, targets, pad_mask, item_table, num_items):
    """Mean full-softmax cross-entropy over non-pad positions.

    Scores are tied to item rows 1..num_items, so padding and the mask token
    are outside the softmax support.
    """
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if not pad_mask.any():
        raise ValueError("next_item_loss: every position is padding")
    B, L, d = hidden.shape
    rows = np.flatnonzero(pad_mask.reshape(-1))
    flat = nt.reshape(hidden, (B * L, d))
    picked = nt.getitem(flat, rows)
    return nt.tied_softmax_xent(picked, item_table, np.asarray(targets).reshape(-1)[rows], 1, num_items + 1)


def contrastive_loss(za, zb, tau1):
    """NT-Xent over 2B row-normalised views; positives are the paired rows."""
    B = za.shape[0]
    if B < 2:
        raise ValueError("contrastive_loss: batch of 1 has no negatives; use batch size >= 2")
    z = nt.concat([za, zb], axis=0)
    sim = nt.scale(nt.matmul(z, nt.transpose(z, (1, 0))), 1.0 / tau1)
    self_mask = np.zeros((2 * B, 2 * B), dtype=z.dtype)
    np.fill_diagonal(self_mask, -1e9)
    logits = sim + nt.Tensor(self_mask)
    targets = np.concatenate([np.arange(B, 2 * B), np.arange(B)])
    return nt.cross_entropy(logits, targets)


def teacher_probs(scores, tau3):
    t = np.asarray(scores, dtype=np.float64) / tau3
    t = np.exp(t - t.max(axis=1, keepdims=True))
    return t / t.sum(axis=1, keepdims=True)


def distill_loss(z, bank, tau2, tau3, tail_mask, teacher=None):
    """Teacher softmax(scores/tau3), detached, supervises student
    softmax(scores/tau2); averaged over tail rows only.

    A precomputed ``teacher`` array may be supplied instead of deriving it
    from the current scores.
    """
    tail_mask = np.asarray(tail_mask, dtype=bool)
    n_tail = int(tail_mask.sum())
    if n_tail == 0:
        log.debug("distill_loss: batch has no tail rows; term is 0")
        return nt.Tensor(np.zeros((), dtype=z.dtype))
    scores = bank.assign_scores(z)
    if teacher is None:
        teacher = teacher_probs(scores.data, tau3)
    weights = tail_mask / n_tail
    return nt.soft_cross_entropy(nt.scale(scores, 1.0 / tau2), teacher, row_weights=weights)


class HeadTailClassifier:
    """d -> d/2 -> 2 perceptron predicting head (1) vs tail (0)."""

    def __init__(self, d, rng, dtype=np.float32):
        h = max(1, d // 2)
        self.params = {
            "adv.w1": nt.parameter(rng.normal(0.0, 0.02, (d, h)).astype(dtype), "adv.w1"),
            "adv.b1": nt.parameter(np.zeros(h, dtype=dtype), "adv.b1"),
            "adv.w2": nt.parameter(rng.normal(0.0, 0.02, (h, 2)).astype(dtype), "adv.w2"),
            "adv.b2": nt.parameter(np.zeros(2, dtype=dtype), "adv.b2"),
        }

    def __call__(self, x):
        P = self.params
        return nt.gelu(x @ P["adv.w1"] + P["adv.b1"]) @ P["adv.w2"] + P["adv.b2"]


def adversarial_loss(z, head_labels, classifier, lam, reverse=True):
    """Head/tail cross-entropy on ``grad_reverse(z, lam)``.

    ``reverse=False`` swaps the reversal node for the identity (used to check
    the reversal against a plain graph).
    """
    x = nt.grad_reverse(z, lam) if reverse else z
    return nt.cross_entropy(classifier(x), np.asarray(head_labels, dtype=np.int64))


def combine(terms, weights, mode="full"):
    """total = l_sr + alpha*l_cluster + beta1*l_con + beta2*l_distill + l_adv.

    ``terms`` maps names to scalar Tensors (missing terms count as 0). Terms
    switched off by ``mode`` are dropped.
    """
    weights.validate()
    use_csd, use_adv = mode_flags(mode)
    total = terms["l_sr"]
    if use_csd:
        for key, w in (("l_cluster", weights.alpha), ("l_contrastive", weights.beta1),
                       ("l_distill", weights.beta2)):
            if key in terms and w != 0:
                total = total + nt.scale(terms[key], w)
    if use_adv and "l_adv" in terms:
        total = total + terms["l_adv"]
    return total
