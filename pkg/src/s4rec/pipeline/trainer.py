"""Joint training loop, early stopping, metrics logging and resume."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from collections import defaultdict
from contextlib import contextmanager

import numpy as np

from .. import ndtensor as nt
from ..augment import Augmenter, ItemSampler, make_view_pair
from ..dataio import split
from ..encoder import pad_left
from ..errors import DataError, NumericalError
from ..evalkit import evaluate, metrics_from_ranks, nmi
from ..objectives import LossReport, mode_flags, next_item_targets
from .checkpoint import load_checkpoint, save_checkpoint
from .config import complexity_budget, from_dict
from .model import Batch, S4RecModel, Streams

log = logging.getLogger(__name__)

TASKS = ("main", "cluster", "distill", "adversarial")
TERMS = ("l_sr", "l_cluster", "l_contrastive", "l_distill", "l_adv", "total")


class StepTimer:
    """Wall-clock per task bucket; each section also tags tape nodes."""

    def __init__(self):
        self.seconds = defaultdict(float)

    @contextmanager
    def section(self, name):
        t0 = time.perf_counter()
        with nt.task_scope(name):
            yield
        self.seconds[name] += time.perf_counter() - t0


def subsample_users(dataset, fraction, seed):
    if fraction >= 1.0:
        return dataset.sequences
    n = max(1, int(round(fraction * len(dataset.sequences))))
    keep = np.sort(np.random.default_rng(seed).choice(len(dataset.sequences), n, replace=False))
    return [dataset.sequences[i] for i in keep]


class Trainer:
    def __init__(self, config, dataset):
        self.config = config
        self.dataset = dataset
        L = config.encoder.max_len
        chosen = subsample_users(dataset, config.data.user_fraction, config.data.subsample_seed)
        subset = type(dataset)(dataset.num_users, dataset.num_items, chosen,
                               dataset.head_length_threshold, dataset.head_ratio)
        self.views = split(subset, L)
        if not self.views:
            raise DataError("no users with at least 3 interactions")
        max_id = max(max(v.history + [v.valid_target, v.test_target]) for v in self.views)
        if max_id > dataset.num_items:
            raise DataError(f"item id {max_id} exceeds the embedding table ({dataset.num_items} items)")
        self.streams = Streams(config.seed)
        self.model = S4RecModel(dataset.num_items, config, self.streams)
        self.optimizer = nt.Adam(self.model.params, lr=config.optim.lr)
        a = config.aug
        self.augmenter = Augmenter(
            menu=tuple(a.menu), crop_delta=a.crop_delta, reorder_delta=a.reorder_delta,
            mask_gamma=a.mask_gamma, insert_ratio=a.insert_ratio,
            mask_token=dataset.mask_token_id, max_len=L,
            sampler=ItemSampler([v.train_items for v in self.views], dataset.num_items),
        )
        self.use_csd, self.use_adv = mode_flags(config.ablation.mode)
        self.epoch = 0
        self.best_metric = -math.inf
        self.best_epoch = 0
        self.since_best = 0
        self.select_k = 20 if 20 in config.eval.ks else max(config.eval.ks)

    # batching

    def make_batch(self, idx):
        L = self.config.encoder.max_len
        views = [self.views[i] for i in idx]
        ids = pad_left([v.train_items for v in views], L)
        targets, mask = next_item_targets(ids)
        batch = Batch(
            user_ids=np.array([v.user_id for v in views]),
            ids=ids, targets=targets, target_mask=mask,
            is_head=np.array([v.is_head for v in views], dtype=bool),
        )
        if self.use_csd:
            rng = self.streams["augment"]
            pairs = [make_view_pair(v.train_items, self.augmenter, rng) for v in views]
            batch.view_a = pad_left([p.view_a for p in pairs], L)
            batch.view_b = pad_left([p.view_b for p in pairs], L)
        return batch

    # one optimisation step

    def train_step(self, batch, timer=None):
        """Forward all active terms, one backward, one Adam step, prototype renorm."""
        timer = timer or StepTimer()
        rngs = {"main": self.streams["dropout.main"], "views": self.streams["dropout.views"]}
        terms, _ = self.model.compute_losses(batch, rngs, timer=timer)
        values = {k: float(t.data) for k, t in terms.items()}
        if not math.isfinite(values["total"]):
            dump = ", ".join(f"{k}={v!r}" for k, v in values.items())
            raise NumericalError(f"non-finite total loss at epoch {self.epoch + 1}: {dump}")
        params = self.model.params
        t0 = time.perf_counter()
        grads = nt.backward(terms["total"], list(params.values()), timed=True)
        backward_wall = time.perf_counter() - t0
        attributed = sum(grads.task_seconds.values())
        for task, sec in grads.task_seconds.items():
            timer.seconds[task] += sec
        # tape bookkeeping outside any node goes to the main bucket
        timer.seconds["main"] += max(0.0, backward_wall - attributed)
        with timer.section("main"):
            try:
                self.optimizer.step(grads)
            except nt.NonFiniteGradient as exc:
                raise NumericalError(str(exc)) from exc
        with timer.section("cluster"):
            self.model.bank.renormalize()
        return LossReport(**{k: values.get(k, 0.0) for k in TERMS})

    def run_epoch(self):
        B = self.config.optim.batch_size
        order = self.streams["shuffle"].permutation(len(self.views))
        sums = dict.fromkeys(TERMS, 0.0)
        n_steps = 0
        timer = StepTimer()
        t_start = time.perf_counter()
        for s in range(0, len(order), B):
            idx = order[s:s + B]
            if len(idx) < 2 and self.use_csd:
                continue
            with timer.section("distill" if self.use_csd else "main"):
                batch = self.make_batch(idx)
            report = self.train_step(batch, timer)
            for k in TERMS:
                sums[k] += getattr(report, k)
            n_steps += 1
        total = time.perf_counter() - t_start
        means = {k: v / max(n_steps, 1) for k, v in sums.items()}
        timing = {"seconds": {t: timer.seconds.get(t, 0.0) for t in TASKS}, "step_total": total,
                  "steps": n_steps}
        timing["partition_ratio"] = sum(timing["seconds"].values()) / total if total > 0 else 1.0
        return means, timing

    # evaluation

    def evaluate_epoch(self, split_name="valid"):
        model = self.model
        captured = []

        class Capture:
            max_len = model.max_len
            num_items = model.num_items

            def predict(self, ids):
                z = model.represent(ids)
                captured.append(z)
                return model.encoder.score_items_array(z)

        ks = tuple(self.config.eval.ks)
        report = evaluate(Capture(), self.views, split_name, "all", ks, self.config.eval.batch_size)
        out = {"all": report.to_dict()}
        head_of = {v.user_id: v.is_head for v in self.views}
        is_head = np.array([head_of[u] for u in report.user_ids])
        for name, sel in (("head", is_head), ("tail", ~is_head)):
            if sel.any():
                hr, ndcg = metrics_from_ranks(report.ranks[sel], ks)
                out[name] = {"num_users_evaluated": int(sel.sum()),
                             "hr": {str(k): v for k, v in hr.items()},
                             "ndcg": {str(k): v for k, v in ndcg.items()}}
        z = np.concatenate(captured)
        clusters = model.cluster_ids(z)
        hist = np.bincount(clusters, minlength=model.bank.k)
        head_frac = [float(is_head[clusters == c].mean()) if hist[c] else None
                     for c in range(model.bank.k)]
        diag = {
            "cluster_histogram": hist.tolist(),
            "cluster_head_fraction": head_frac,
            "nmi_cluster_head": nmi(clusters, is_head),
            "empty_clusters": int((hist == 0).sum()),
        }
        return report, out, diag

    # persistence

    def state_manifest(self):
        return {
            "kind": "s4rec-checkpoint",
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "num_items": self.dataset.num_items,
            "num_users": self.dataset.num_users,
            "epoch": self.epoch,
            "best_metric": self.best_metric if math.isfinite(self.best_metric) else None,
            "best_epoch": self.best_epoch,
            "since_best": self.since_best,
            "adam_t": self.optimizer.t,
            "rng": self.streams.state(),
        }

    def save(self, path):
        arrays = {name: p.data for name, p in self.model.params.items()}
        arrays.update(self.optimizer.state_arrays())
        return save_checkpoint(path, self.state_manifest(), arrays)

    def restore(self, path):
        manifest, arrays = load_checkpoint(path)
        if manifest["config_hash"] != self.config.hash():
            log.warning("resuming with a config that differs from the checkpoint's")
        for name, p in self.model.params.items():
            p.data[...] = arrays[name]
        self.optimizer.load_state_arrays(arrays, manifest["adam_t"])
        self.streams.set_state(manifest["rng"])
        self.epoch = manifest["epoch"]
        self.best_metric = manifest["best_metric"] if manifest["best_metric"] is not None else -math.inf
        self.best_epoch = manifest["best_epoch"]
        self.since_best = manifest["since_best"]
        return manifest

    # main loop

    def fit(self, output_dir=None, resume=None):
        """Train until the epoch budget or early stop; returns the best checkpoint path."""
        out = output_dir or self.config.output_dir
        os.makedirs(out, exist_ok=True)
        metrics_path = os.path.join(out, "metrics.jsonl")
        timing_path = os.path.join(out, "timing.jsonl")
        best_path = os.path.join(out, "best.ckpt")
        last_path = os.path.join(out, "last.ckpt")
        if resume:
            self.restore(resume)
            _truncate_jsonl(metrics_path, self.epoch)
            _truncate_jsonl(timing_path, self.epoch)
        else:
            for p in (metrics_path, timing_path):
                open(p, "w").close()
            with open(os.path.join(out, "run.json"), "w") as fh:
                json.dump({"config": self.config.to_dict(),
                           "complexity_budget": complexity_budget(self.config, len(self.views),
                                                                  self.config.optim.epochs)},
                          fh, indent=1)
        patience = self.config.optim.patience
        while self.epoch < self.config.optim.epochs:
            if self.epoch > 0 and self.since_best >= patience:
                break
            means, timing = self.run_epoch()
            self.epoch += 1
            t0 = time.perf_counter()
            _, valid, diag = self.evaluate_epoch("valid")
            timing["eval_seconds"] = time.perf_counter() - t0
            metric = valid["all"]["ndcg"][str(self.select_k)]
            improved = metric > self.best_metric
            if improved:
                self.best_metric, self.best_epoch, self.since_best = metric, self.epoch, 0
            else:
                self.since_best += 1
            record = {"epoch": self.epoch, "train": means, "valid": valid, **diag,
                      "selection_metric": f"ndcg@{self.select_k}", "improved": improved,
                      "best_metric": self.best_metric, "best_epoch": self.best_epoch}
            _append_jsonl(metrics_path, record)
            _append_jsonl(timing_path, {"epoch": self.epoch, **timing})
            log.info("epoch %d  total=%.4f  valid ndcg@%d=%.4f%s", self.epoch, means["total"],
                     self.select_k, metric, "  *" if improved else "")
            if improved:
                self.save(best_path)
            self.save(last_path)
        return best_path


def _append_jsonl(path, record):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _truncate_jsonl(path, epoch):
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as fh:
        keep = [ln for ln in fh if ln.strip() and json.loads(ln)["epoch"] <= epoch]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(keep)


def load_trained(checkpoint, dataset):
    """Rebuild a Trainer (model + state) from a checkpoint file."""
    manifest, _ = load_checkpoint(checkpoint)
    config = from_dict(manifest["config"])
    if manifest["num_items"] != dataset.num_items:
        raise DataError(f"checkpoint expects {manifest['num_items']} items, dataset has {dataset.num_items}")
    trainer = Trainer(config, dataset)
    trainer.restore(checkpoint)
    return trainer


def fit(config, dataset, output_dir=None, resume=None):
    return Trainer(config, dataset).fit(output_dir, resume)
