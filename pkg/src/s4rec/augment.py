"""Random sequence-level views: mask, crop, reorder, insert.

All randomness comes from the ``numpy.random.Generator`` passed in, so a
fixed seed replays the same views.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("mask", "crop", "reorder", "insert")


def _floor(x):
    # guard against products like 0.29 * 100 = 28.999999999999996
    return int(math.floor(x + 1e-9))


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    delta: float = 0.0
    mask_gamma: float = 0.3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation {self.kind!r}")


@dataclass
class ViewPair:
    view_a: list
    view_b: list
    op_a: AugmentOp
    op_b: AugmentOp


def mask(seq, gamma, rng, mask_token):
    n = _floor(gamma * len(seq))
    out = list(seq)
    if n == 0:
        return out
    for pos in rng.choice(len(seq), size=n, replace=False):
        out[pos] = mask_token
    return out


def remove_block(seq, start, length):
    """Drop ``seq[start:start + length]`` (0-based start)."""
    return list(seq[:start]) + list(seq[start + length:])


def crop(seq, delta, rng):
    """Remove a random contiguous block of ``max(1, floor(delta*n))`` items.

    If that would empty the sequence, one uniformly chosen item survives.
    """
    n = len(seq)
    if n <= 1:
        return list(seq)
    lc = max(1, _floor(delta * n))
    if lc >= n:
        return [seq[int(rng.integers(n))]]
    start = int(rng.integers(n - lc + 1))
    return remove_block(seq, start, lc)


def reorder(seq, delta, rng):
    n = len(seq)
    if n <= 1:
        return list(seq)
    lc = min(n, max(2, _floor(delta * n)))
    start = int(rng.integers(n - lc + 1))
    out = list(seq)
    window = out[start:start + lc]
    out[start:start + lc] = [window[i] for i in rng.permutation(lc)]
    return out


class ItemSampler:
    """Draws item ids in proportion to their frequency in training prefixes."""

    def __init__(self, sequences, num_items):
        flat = np.fromiter((i for seq in sequences for i in seq), dtype=np.int64)
        counts = np.bincount(flat, minlength=num_items + 1)[:num_items + 1].astype(np.float64)
        counts[0] = 0.0
        if counts.sum() == 0:
            counts[1:] = 1.0
        self.cdf = np.cumsum(counts) / counts.sum()

    def __call__(self, rng, size=None):
        u = rng.random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(idx, len(self.cdf) - 1) if size is not None else int(min(idx, len(self.cdf) - 1))


def insert(seq, ratio, item_sampler, rng, max_len=50):
    """Insert ``max(1, floor(ratio*n))`` sampled items at uniform positions,
    then keep the most recent ``max_len``."""
    k = max(1, _floor(ratio * len(seq)))
    out = list(seq)
    for _ in range(k):
        pos = int(rng.integers(len(out) + 1))
        out.insert(pos, item_sampler(rng))
    return out[-max_len:]


@dataclass
class Augmenter:
    menu: tuple = KINDS
    crop_delta: float = 0.8
    reorder_delta: float = 0.2
    mask_gamma: float = 0.3
    insert_ratio: float = 0.2
    mask_token: int = 0
    max_len: int = 50
    sampler: ItemSampler | None = None

    def __post_init__(self):
        if not self.menu:
            raise ValueError("augmentation menu is empty")
        for kind in self.menu:
            AugmentOp(kind)
        if "insert" in self.menu and self.sampler is None:
            raise ValueError("insert augmentation needs an item sampler")

    def op(self, kind):
        delta = {"crop": self.crop_delta, "reorder": self.reorder_delta,
                 "insert": self.insert_ratio, "mask": self.mask_gamma}[kind]
        return AugmentOp(kind, delta, self.mask_gamma)

    def apply(self, op, seq, rng):
        if op.kind == "mask":
            return mask(seq, op.mask_gamma, rng, self.mask_token)
        if op.kind == "crop":
            return crop(seq, op.delta, rng)
        if op.kind == "reorder":
            return reorder(seq, op.delta, rng)
        return insert(seq, op.delta, self.sampler, rng, self.max_len)

    def view_pair(self, seq, rng):
        return make_view_pair(seq, self, rng)


def make_view_pair(seq, augmenter, rng):
    """Two operators drawn independently and uniformly from the menu, each
    applied to its own copy of ``seq``."""
    menu = augmenter.menu
    op_a = augmenter.op(menu[int(rng.integers(len(menu)))])
    op_b = augmenter.op(menu[int(rng.integers(len(menu)))])
    return ViewPair(augmenter.apply(op_a, list(seq), rng), augmenter.apply(op_b, list(seq), rng), op_a, op_b)
