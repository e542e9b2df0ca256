"""Encoder, prototype bank and head/tail classifier wired into one loss."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .. import ndtensor as nt
from ..encoder import SASEncoder
from ..intent import PrototypeBank, assignment_probs, cluster_loss, hard_assignment
from ..objectives import (HeadTailClassifier, adversarial_loss, combine, contrastive_loss,
                          distill_loss, mode_flags, next_item_loss, teacher_probs)


class Streams:
    """Named random streams derived from one base seed.

    Each name gets its own generator, so consuming one stream (say, view
    augmentation) never shifts another (say, dropout on the main sequence).
    """

    NAMES = ("init.encoder", "init.intent", "init.adv", "shuffle", "augment",
             "dropout.main", "dropout.views")

    def __init__(self, seed):
        self.seed = int(seed)
        self._gens = {n: np.random.default_rng([self.seed, zlib.crc32(n.encode())]) for n in self.NAMES}

    def __getitem__(self, name):
        return self._gens[name]

    def state(self):
        return {n: g.bit_generator.state for n, g in self._gens.items()}

    def set_state(self, state):
        for n, s in state.items():
            self._gens[n].bit_generator.state = s


@dataclass
class Batch:
    user_ids: np.ndarray
    ids: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray
    is_head: np.ndarray
    view_a: np.ndarray | None = None
    view_b: np.ndarray | None = None


class S4RecModel:
    def __init__(self, num_items, config, streams):
        self.config = config
        dtype = np.dtype(config.dtype)
        d = config.encoder.d
        self.encoder = SASEncoder(num_items, config.encoder, streams["init.encoder"], dtype)
        self.bank = PrototypeBank(config.intent.k, d, streams["init.intent"],
                                  config.intent.eps, config.intent.iters, dtype)
        self.classifier = HeadTailClassifier(d, streams["init.adv"], dtype)

    @property
    def num_items(self):
        return self.encoder.num_items

    @property
    def max_len(self):
        return self.encoder.config.max_len

    @property
    def params(self):
        return {**self.encoder.params, **self.bank.params, **self.classifier.params}

    def compute_losses(self, batch, rngs, frozen=None, reverse=True, timer=None):
        """Forward pass of every active loss term.

        ``rngs`` maps 'main'/'views' to dropout generators. ``frozen`` may carry
        'codes' and 'teacher' arrays to hold the detached targets fixed.
        Returns ``(terms, aux)`` where ``terms`` maps term names to scalar
        tensors (including 'total') and ``aux`` holds the detached targets.
        """
        cfg = self.config
        w = cfg.loss
        use_csd, use_adv = mode_flags(cfg.ablation.mode)
        frozen = frozen or {}
        timer = timer or _NullTimer()
        terms, aux = {}, {}

        with timer.section("main"):
            hidden, z = self.encoder.encode(batch.ids, training=True, rng=rngs["main"])
            if batch.target_mask.any():
                terms["l_sr"] = next_item_loss(hidden, batch.targets, batch.target_mask,
                                               self.encoder.item_table, self.num_items)
            else:
                terms["l_sr"] = nt.Tensor(np.zeros((), dtype=z.dtype))
            zn = nt.l2_normalize(z)
        aux["z"] = zn.data

        if use_csd:
            with timer.section("distill"):
                B = batch.ids.shape[0]
                _, zv = self.encoder.encode(np.concatenate([batch.view_a, batch.view_b]),
                                            training=True, rng=rngs["views"])
                zv = nt.l2_normalize(zv)
                za, zb = zv[:B], zv[B:]
                terms["l_contrastive"] = contrastive_loss(za, zb, w.tau1)
            with timer.section("cluster"):
                terms["l_cluster"], codes, _ = cluster_loss(za, zb, self.bank, w.tau2, frozen.get("codes"))
            aux["codes"] = codes
            with timer.section("distill"):
                teacher = frozen.get("teacher")
                if teacher is None:
                    teacher = teacher_probs(self.bank.scores_array(zn.data), w.tau3)
                terms["l_distill"] = distill_loss(zn, self.bank, w.tau2, w.tau3, ~batch.is_head, teacher)
            aux["teacher"] = teacher
        if use_adv:
            with timer.section("adversarial"):
                terms["l_adv"] = adversarial_loss(zn, batch.is_head.astype(np.int64), self.classifier,
                                                  w.lam, reverse=reverse)
        with timer.section("main"):
            terms["total"] = combine(terms, w, cfg.ablation.mode)
        return terms, aux

    # graph-free inference

    def represent(self, ids):
        hidden, z = self.encoder.encode(ids, training=False)
        return z.data

    def predict(self, ids):
        return self.encoder.score_items_array(self.represent(ids))

    def cluster_ids(self, z):
        """Hard prototype assignment of raw sequence representations."""
        z = np.asarray(z, dtype=np.float64)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        zn = np.where(norms >= 1e-12, z / np.where(norms >= 1e-12, norms, 1.0), 0.0)
        zn = zn.astype(self.bank.mu.dtype)
        return hard_assignment(assignment_probs(self.bank.scores_array(zn), self.config.loss.tau2))


class _NullTimer:
    def section(self, name):
        return nt.task_scope(name)
