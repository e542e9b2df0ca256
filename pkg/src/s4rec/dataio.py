"""Interaction log ingestion, 5-core filtering, head/tail labelling and splits.

Id layout: users are 1..|U|, items are 1..|I|, item 0 is padding and |I|+1 is
the mask token used by augmentation.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, EmptyInputError, ParseError

log = logging.getLogger(__name__)

FORMATS = ("triplet", "seqline")
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RawInteraction:
    user_token: str
    item_token: str
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_token or not self.item_token:
            raise ValueError("user_token and item_token must be non-empty")


@dataclass
class InteractionSequence:
    user_id: int
    items: list
    is_head: bool = False


@dataclass
class PreparedDataset:
    num_users: int
    num_items: int
    sequences: list
    head_length_threshold: int = 0
    head_ratio: float = 0.2
    user_tokens: list = field(default_factory=list)
    item_tokens: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def mask_token_id(self):
        return self.num_items + 1

    @property
    def vocab_size(self):
        """Embedding rows needed: padding, items, mask token."""
        return self.num_items + 2

    def head_users(self):
        return [s.user_id for s in self.sequences if s.is_head]

    def __eq__(self, other):
        if not isinstance(other, PreparedDataset):
            return NotImplemented
        return (self.num_users == other.num_users and self.num_items == other.num_items
                and self.head_length_threshold == other.head_length_threshold
                and self.user_tokens == other.user_tokens
                and self.item_tokens == other.item_tokens
                and len(self.sequences) == len(other.sequences)
                and all(a.user_id == b.user_id and a.is_head == b.is_head
                        and list(a.items) == list(b.items)
                        for a, b in zip(self.sequences, other.sequences)))


@dataclass
class SplitView:
    user_id: int
    train_items: list
    valid_target: int
    test_target: int
    is_head: bool = False
    history: list | None = None

    def __post_init__(self):
        if self.history is None:
            self.history = list(self.train_items)


# ingestion

def ingest(path, format="triplet"):
    """Parse a whitespace-separated log.

    ``triplet``: ``user item timestamp`` per line, returns RawInteraction list.
    ``seqline``: ``user item1 ... itemN`` per line, returns (user, [items]) pairs.
    """
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if format == "triplet":
                if len(parts) != 3:
                    raise ParseError(path, line_no, f"expected 'user item timestamp', got {len(parts)} fields")
                try:
                    ts = int(parts[2])
                except ValueError:
                    try:
                        ts = int(float(parts[2]))
                    except ValueError:
                        raise ParseError(path, line_no, f"bad timestamp {parts[2]!r}") from None
                out.append(RawInteraction(parts[0], parts[1], ts))
            else:
                if len(parts) < 2:
                    raise ParseError(path, line_no, "sequence line has no items")
                out.append((parts[0], parts[1:]))
    if not out:
        raise EmptyInputError(f"{path}: no interactions")
    return out


def group_events(events):
    """Group triplet events per user, ordered by (timestamp, input order).

    Users keep their order of first appearance. Already-grouped
    ``(user, items)`` pairs pass through (repeated users are concatenated).
    """
    groups = {}
    for idx, ev in enumerate(events):
        if isinstance(ev, RawInteraction):
            ts = ev.timestamp if ev.timestamp is not None else 0
            groups.setdefault(ev.user_token, []).append((ts, idx, ev.item_token))
        else:
            user, items = ev
            bucket = groups.setdefault(user, [])
            base = len(bucket)
            bucket.extend((0, base + i, it) for i, it in enumerate(items))
    grouped = []
    for user, evs in groups.items():
        evs.sort(key=lambda e: (e[0], e[1]))
        grouped.append((user, [e[2] for e in evs]))
    return grouped


# preprocessing

def core_filter(grouped, min_count=5):
    """Remove items and users below ``min_count`` until nothing changes."""
    current = [(u, list(items)) for u, items in grouped]
    rounds = 0
    while True:
        rounds += 1
        item_counts = Counter(it for _, items in current for it in items)
        filtered = []
        for u, items in current:
            kept = [it for it in items if item_counts[it] >= min_count]
            if len(kept) >= min_count:
                filtered.append((u, kept))
        if filtered == current:
            return filtered, rounds
        current = filtered


def preprocess(events, min_count=5, head_ratio=0.2):
    """5-core filter, dense id remap by first appearance, head/tail labels.

    ``events`` is either a RawInteraction list or grouped ``(user, items)`` pairs.
    """
    grouped = group_events(events)
    raw_users = len(grouped)
    raw_actions = sum(len(items) for _, items in grouped)
    kept, rounds = core_filter(grouped, min_count)
    if not kept:
        raise DataError(f"dataset degenerate after {min_count}-core filter")

    item_ids = {}
    user_tokens, item_tokens, sequences = [], [], []
    for uid, (user, items) in enumerate(kept, 1):
        user_tokens.append(user)
        ids = []
        for it in items:
            iid = item_ids.get(it)
            if iid is None:
                iid = item_ids[it] = len(item_ids) + 1
                item_tokens.append(it)
            ids.append(iid)
        sequences.append(InteractionSequence(uid, ids))

    ds = PreparedDataset(num_users=len(sequences), num_items=len(item_ids),
                         sequences=sequences, user_tokens=user_tokens, item_tokens=item_tokens)
    n_actions = sum(len(s.items) for s in sequences)
    ds.stats = {
        "raw_users": raw_users,
        "raw_actions": raw_actions,
        "filter_rounds": rounds,
        "removed_users": raw_users - len(sequences),
        "num_actions": n_actions,
        "avg_length": n_actions / len(sequences),
        "sparsity": 1.0 - n_actions / (len(sequences) * len(item_ids)),
    }
    return label_head_tail(ds, head_ratio)


def head_count(num_users, head_ratio):
    # tolerance absorbs products like 0.2 * 15 = 3.0000000000000004
    return min(num_users, math.ceil(head_ratio * num_users - 1e-9))


def label_head_tail(dataset, head_ratio=0.2):
    """Mark the longest ``ceil(head_ratio * |U|)`` sequences as head.

    Ranking is by (length desc, user_id asc).
    """
    if not 0.0 < head_ratio < 1.0:
        raise DataError(f"head_ratio must be in (0, 1), got {head_ratio}")
    order = sorted(dataset.sequences, key=lambda s: (-len(s.items), s.user_id))
    n_head = head_count(len(order), head_ratio)
    for rank, seq in enumerate(order):
        seq.is_head = rank < n_head
    dataset.head_ratio = head_ratio
    dataset.head_length_threshold = len(order[n_head - 1].items) if n_head else 0
    return dataset


def split(dataset, max_len=50):
    """Leave-last-two-out split; training prefixes keep the most recent ``max_len`` items."""
    views, skipped = [], 0
    for seq in dataset.sequences:
        items = list(seq.items)
        if len(items) < 3:
            skipped += 1
            log.warning("user %d has %d items (<3); excluded from split", seq.user_id, len(items))
            continue
        views.append(SplitView(seq.user_id, items[:-2][-max_len:], items[-2], items[-1], seq.is_head,
                               history=items[:-2]))
    dataset.stats["split_excluded_users"] = skipped
    return views


# prepared-file format

def config_hash(settings):
    blob = json.dumps(settings, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_prepared(dataset, out_dir, settings=None):
    os.makedirs(out_dir, exist_ok=True)
    settings = dict(settings or {})
    lengths = np.array([len(s.items) for s in dataset.sequences], dtype="<i4")
    heads = np.array([s.is_head for s in dataset.sequences], dtype="u1")
    flat = np.array([i for s in dataset.sequences for i in s.items], dtype="<i4")
    with open(os.path.join(out_dir, "sequences.bin"), "wb") as fh:
        fh.write(lengths.tobytes())
        fh.write(heads.tobytes())
        fh.write(flat.tobytes())
    manifest = {
        "format_version": _FORMAT_VERSION,
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "mask_token_id": dataset.mask_token_id,
        "num_interactions": int(flat.size),
        "head_ratio": dataset.head_ratio,
        "head_length_threshold": dataset.head_length_threshold,
        "user_ids": [s.user_id for s in dataset.sequences],
        "settings": settings,
        "config_hash": config_hash(settings),
        "stats": dataset.stats,
        "user_tokens": dataset.user_tokens,
        "item_tokens": dataset.item_tokens,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return out_dir


def load_prepared(path):
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no prepared dataset at {path}") from None
    if manifest.get("format_version") != _FORMAT_VERSION:
        raise DataError(f"{mpath}: unsupported format_version {manifest.get('format_version')}")
    n = manifest["num_users"]
    raw = np.fromfile(os.path.join(path, "sequences.bin"), dtype="u1")
    lengths = raw[:4 * n].view("<i4")
    heads = raw[4 * n:5 * n].astype(bool)
    flat = raw[5 * n:].view("<i4")
    if flat.size != int(lengths.sum()) or flat.size != manifest["num_interactions"]:
        raise DataError(f"{path}: sequences.bin does not match manifest")
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    sequences = [InteractionSequence(int(uid), flat[offsets[i]:offsets[i + 1]].tolist(), bool(heads[i]))
                 for i, uid in enumerate(manifest["user_ids"])]
    return PreparedDataset(
        num_users=n, num_items=manifest["num_items"], sequences=sequences,
        head_length_threshold=manifest["head_length_threshold"], head_ratio=manifest["head_ratio"],
        user_tokens=manifest["user_tokens"], item_tokens=manifest["item_tokens"],
        stats=manifest["stats"],
    )


def prepare_file(input_path, format, out_dir, min_count=5, head_ratio=0.2, max_len=50):
    events = ingest(input_path, format)
    ds = preprocess(events, min_count=min_count, head_ratio=head_ratio)
    settings = {"input": os.path.basename(input_path), "format": format, "min_count": min_count,
                "head_ratio": head_ratio, "max_len": max_len}
    save_prepared(ds, out_dir, settings)
    return ds
