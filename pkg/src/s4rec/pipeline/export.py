"""Per-user representation export for external visualisation."""
from __future__ import annotations

import csv

import numpy as np

from ..encoder import pad_left


def user_representations(model, dataset, batch_size=256):
    """seq_repr of each user's full sequence (most recent ``max_len`` items)."""
    L = model.max_len
    out = []
    for s in range(0, len(dataset.sequences), batch_size):
        chunk = dataset.sequences[s:s + batch_size]
        out.append(model.represent(pad_left([list(q.items)[-L:] for q in chunk], L)))
    return np.concatenate(out)


def export_embeddings(checkpoint, dataset, out, delimiter="\t"):
    """Write user_id, is_head, cluster_id, e0..e{d-1}; one row per user."""
    from .trainer import load_trained

    model = load_trained(checkpoint, dataset).model
    z = user_representations(model, dataset)
    clusters = model.cluster_ids(z)
    # enough digits to round-trip the stored dtype exactly
    fmt = "%.9g" if z.dtype == np.float32 else "%.17g"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["user_id", "is_head", "cluster_id"] + [f"e{j}" for j in range(z.shape[1])])
        for seq, c, row in zip(dataset.sequences, clusters, z):
            w.writerow([seq.user_id, int(seq.is_head), int(c)] + [fmt % x for x in row])
    return out


def read_embeddings(path, delimiter="\t", dtype=np.float32):
    """Inverse of :func:`export_embeddings`: (user_ids, is_head, cluster_ids, Z)."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))[1:]
    a = np.array(rows, dtype=object)
    return (a[:, 0].astype(np.int64), a[:, 1].astype(np.int64).astype(bool),
            a[:, 2].astype(np.int64), a[:, 3:].astype(np.float64).astype(dtype))
