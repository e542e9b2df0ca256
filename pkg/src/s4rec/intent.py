"""Online prototype clustering with balanced Sinkhorn codes."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from . import kernels
from . import ndtensor as nt
from .errors import ConfigError, NumericalError


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class PrototypeBank:
    """K unit-norm prototype vectors (``mu``, shape K x d)."""

    def __init__(self, k, d, rng, eps=0.05, iters=3, dtype=np.float32):
        if k < 1 or d < 1:
            raise ConfigError("intent.k and d must be positive")
        if eps <= 0 or iters < 1:
            raise ConfigError("intent.eps must be > 0 and intent.iters >= 1")
        self.k, self.d = k, d
        self.eps, self.iters = float(eps), int(iters)
        self.mu = nt.parameter(_unit_rows(rng.normal(size=(k, d))).astype(dtype), "intent.mu")

    @property
    def params(self):
        return {"intent.mu": self.mu}

    def renormalize(self):
        self.mu.data[...] = _unit_rows(self.mu.data.astype(np.float64)).astype(self.mu.dtype)

    def assign_scores(self, z):
        """Cosine scores z @ mu.T for row-normalised ``z``."""
        return nt.matmul(z, nt.transpose(self.mu, (1, 0)))

    def scores_array(self, z):
        return np.asarray(z) @ self.mu.data.T

    def codes(self, scores):
        return sinkhorn_codes(scores, self.eps, self.iters)


def sinkhorn_codes(scores, eps=0.05, iters=3):
    """Balanced soft assignment of B rows onto K columns (detached).

    Rows sum to 1; columns approach B/K as ``iters`` grows.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ValueError(f"sinkhorn_codes: need a non-empty (B, K) matrix, got {scores.shape}")
    q = kernels.sinkhorn(scores, eps, iters)
    if not np.all(np.isfinite(q)):
        raise NumericalError(f"sinkhorn_codes: non-finite codes at eps={eps}; try a larger eps")
    return q


def sinkhorn_oracle(scores, eps=0.05, tol=1e-9, max_iters=100_000):
    """Log-domain Sinkhorn run to convergence; reference for the fast path."""
    scores = np.asarray(scores, dtype=np.float64)
    B, K = scores.shape
    logits = scores / eps
    f = np.zeros(B)
    g = np.zeros(K)
    log_col = np.log(B / K)
    for _ in range(max_iters):
        g = log_col - logsumexp(logits + f[:, None], axis=0)
        f = -logsumexp(logits + g[None, :], axis=1)
        q = np.exp(logits + f[:, None] + g[None, :])
        if np.abs(q.sum(axis=0) - B / K).max() < tol:
            return q
    raise NumericalError(f"sinkhorn_oracle: no convergence to {tol} in {max_iters} iterations")


def cluster_loss(za, zb, bank, tau2, codes=None):
    """Swapped prediction: CE(q_b, p_a) + CE(q_a, p_b), batch mean.

    ``za``/``zb`` are row-normalised view representations. ``codes`` may pass
    precomputed ``(q_a, q_b)``; otherwise they are computed from the current
    scores. Returns ``(loss, (q_a, q_b), (scores_a, scores_b))``.
    """
    sa = bank.assign_scores(za)
    sb = bank.assign_scores(zb)
    if codes is None:
        codes = (bank.codes(sa.data), bank.codes(sb.data))
    qa, qb = codes
    inv = 1.0 / tau2
    loss = nt.soft_cross_entropy(nt.scale(sa, inv), qb) + nt.soft_cross_entropy(nt.scale(sb, inv), qa)
    return loss, codes, (sa, sb)


def assignment_probs(scores, tau2):
    s = np.asarray(scores, dtype=np.float64) / tau2
    s -= s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def hard_assignment(probs):
    """Row argmax; ties resolve to the lowest index."""
    return np.argmax(np.asarray(probs), axis=1)
