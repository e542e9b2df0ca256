"""Full-ranking HR/NDCG evaluation, head/tail buckets, clustering oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .encoder import pad_left
from .errors import DataError

BUCKETS = ("all", "head", "tail")


@dataclass
class EvalReport:
    hr: dict
    ndcg: dict
    bucket: str = "all"
    num_users_evaluated: int = 0
    ranks: np.ndarray | None = field(default=None, repr=False, compare=False)
    user_ids: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "bucket": self.bucket,
            "num_users_evaluated": self.num_users_evaluated,
            "hr": {str(k): v for k, v in self.hr.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
        }


def rank_target(logits, target, excluded=()):
    """1-based rank of ``target`` (a column index) among non-excluded columns.

    Ties go to the lower index.
    """
    logits = np.asarray(logits)
    excluded = set(int(e) for e in excluded)
    if int(target) in excluded:
        raise ValueError(f"rank_target: target {target} is in the excluded set")
    mask = np.zeros((1, logits.shape[0]), dtype=np.uint8)
    if excluded:
        idx = np.fromiter((e for e in excluded if 0 <= e < logits.shape[0]), dtype=np.int64)
        mask[0, idx] = 1
    return int(kernels.rank_rows(logits[None, :], np.array([target]), mask)[0])


def hr_at_k(rank, k):
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank, k):
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def metrics_from_ranks(ranks, ks=(5, 20)):
    ranks = np.asarray(ranks, dtype=np.int64)
    hr, ndcg = {}, {}
    gains = 1.0 / np.log2(ranks + 1.0)
    for k in ks:
        hit = ranks <= k
        hr[k] = float(np.sum(hit, dtype=np.float64) / ranks.size)
        ndcg[k] = float(np.sum(np.where(hit, gains, 0.0), dtype=np.float64) / ranks.size)
    return hr, ndcg


def eval_cases(views, split, max_len, bucket="all"):
    """(user_id, prefix, history, target, is_head) per user in ``bucket``.

    ``history`` is every item the user interacted with before the target.
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    if bucket not in BUCKETS:
        raise ValueError(f"bucket must be one of {BUCKETS}, got {bucket!r}")
    cases = []
    for v in views:
        if bucket == "head" and not v.is_head or bucket == "tail" and v.is_head:
            continue
        if split == "valid":
            history, target = v.history, v.valid_target
        else:
            history, target = v.history + [v.valid_target], v.test_target
        cases.append((v.user_id, history[-max_len:], history, target, v.is_head))
    return cases


def evaluate(model, views, split="test", bucket="all", ks=(5, 20), batch_size=256):
    """Rank each user's held-out item over the whole catalogue.

    ``model`` needs ``max_len``, ``num_items`` and ``predict(ids) -> (B, |I|)``
    logits where column j scores item j+1. Items the user already saw (other
    than the target) are excluded from the candidates.
    """
    # batch in user-id order so batch composition, and thus every float, is
    # independent of the order users were passed in
    cases = sorted(eval_cases(views, split, model.max_len, bucket), key=lambda c: c[0])
    if not cases:
        raise DataError(f"evaluate: bucket {bucket!r} has no users")
    n_items = model.num_items
    user_ids = np.array([c[0] for c in cases], dtype=np.int64)
    ranks = np.empty(len(cases), dtype=np.int64)
    for s in range(0, len(cases), batch_size):
        chunk = cases[s:s + batch_size]
        ids = pad_left([c[1] for c in chunk], model.max_len)
        logits = np.asarray(model.predict(ids))
        if logits.shape != (len(chunk), n_items):
            raise ValueError(f"predict returned {logits.shape}, expected {(len(chunk), n_items)}")
        targets = np.array([c[3] - 1 for c in chunk], dtype=np.int64)
        excluded = np.zeros((len(chunk), n_items), dtype=np.uint8)
        for i, c in enumerate(chunk):
            excluded[i, np.asarray(c[2], dtype=np.int64) - 1] = 1
        excluded[np.arange(len(chunk)), targets] = 0
        ranks[s:s + len(chunk)] = kernels.rank_rows(logits, targets, excluded)
    hr, ndcg = metrics_from_ranks(ranks, ks)
    return EvalReport(hr, ndcg, bucket, len(cases), ranks, user_ids)


def bruteforce_ranks(logits, targets, histories):
    """Sort-based reference: position of the target in a full (-score, id) ordering."""
    out = []
    for row, t, hist in zip(logits, targets, histories):
        banned = set(int(h) for h in hist) - {int(t)}
        order = sorted((j for j in range(len(row)) if j not in banned), key=lambda j: (-row[j], j))
        out.append(order.index(int(t)) + 1)
    return np.array(out, dtype=np.int64)


# clustering diagnostics

def nmi(labels_a, labels_b):
    """Normalised mutual information, arithmetic-mean normalisation; 0/0 -> 0."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("nmi: label arrays must have equal non-zero length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n = a.size
    cont = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.float64)
    np.add.at(cont, (ai, bi), 1.0)
    pij = cont / n
    pa = pij.sum(axis=1)
    pb = pij.sum(axis=0)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / np.outer(pa, pb)[nz])))
    ha = -float(np.sum(pa * np.log(pa)))
    hb = -float(np.sum(pb * np.log(pb)))
    denom = 0.5 * (ha + hb)
    if denom <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, mi / denom)))


def kmeans_oracle(points, k, iters=100, seed=0):
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is re-seeded at the point farthest from its centroid.
    Returns ``(centroids, assignments)``.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"kmeans_oracle: need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centroids[c] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[c]) ** 2).sum(axis=1))

    assign = np.full(n, -1)
    for _ in range(iters):
        dist = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        for c in range(k):
            members = new == c
            if members.any():
                continue
            nearest = dist[np.arange(n), new]
            far = int(nearest.argmax())
            new[far] = c
            centroids[c] = X[far]
            dist[far] = ((X[far] - centroids) ** 2).sum(axis=1)
        for c in range(k):
            centroids[c] = X[new == c].mean(axis=0)
        if np.array_equal(new, assign):
            break
        assign = new
    return centroids, assign
