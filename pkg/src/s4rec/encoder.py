"""Causal self-attention sequence encoder with tied item scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nt
from .errors import ConfigError


@dataclass
class EncoderConfig:
    d: int = 64
    max_len: int = 50
    num_blocks: int = 2
    num_heads: int = 2
    dropout: float = 0.5
    layernorm_eps: float = 1e-12

    def validate(self):
        if self.d <= 0 or self.max_len <= 0:
            raise ConfigError("encoder.d and encoder.max_len must be positive")
        if self.num_blocks not in (1, 2, 3):
            raise ConfigError(f"encoder.num_blocks must be 1, 2 or 3, got {self.num_blocks}")
        if self.num_heads <= 0 or self.d % self.num_heads:
            raise ConfigError(f"encoder.d={self.d} not divisible by num_heads={self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("encoder.dropout must be in [0, 1)")
        return self


def pad_left(seqs, max_len):
    """Left-pad (and left-truncate) id lists into a (B, max_len) int64 matrix."""
    out = np.zeros((len(seqs), max_len), dtype=np.int64)
    for i, s in enumerate(seqs):
        s = list(s)[-max_len:]
        if s:
            out[i, max_len - len(s):] = s
    return out


class SASEncoder:
    """Item + learned position embeddings feeding post-LN transformer blocks.

    Row 0 of the item table is padding, rows 1..num_items are items and row
    num_items+1 is the mask token.
    """

    def __init__(self, num_items, config, rng, dtype=np.float32):
        self.config = config.validate()
        self.num_items = num_items
        self.dtype = np.dtype(dtype)
        d, L = config.d, config.max_len
        self.params = {}

        def normal(name, shape):
            self.params[name] = nt.parameter(rng.normal(0.0, 0.02, shape).astype(self.dtype), name)

        def const(name, shape, value):
            self.params[name] = nt.parameter(np.full(shape, value, dtype=self.dtype), name)

        normal("encoder.item_emb", (num_items + 2, d))
        normal("encoder.pos_emb", (L, d))
        const("encoder.emb_ln.gain", (d,), 1.0)
        const("encoder.emb_ln.bias", (d,), 0.0)
        for b in range(config.num_blocks):
            p = f"encoder.block{b}."
            for w in ("wq", "wk", "wv", "wo"):
                normal(p + w, (d, d))
                const(p + "b" + w[1], (d,), 0.0)
            const(p + "ln1.gain", (d,), 1.0)
            const(p + "ln1.bias", (d,), 0.0)
            normal(p + "ff1", (d, 4 * d))
            const(p + "ff1.bias", (4 * d,), 0.0)
            normal(p + "ff2", (4 * d, d))
            const(p + "ff2.bias", (d,), 0.0)
            const(p + "ln2.gain", (d,), 1.0)
            const(p + "ln2.bias", (d,), 0.0)

    @property
    def item_table(self):
        return self.params["encoder.item_emb"]

    def _heads(self, x, B, L):
        h = self.config.num_heads
        return nt.transpose(nt.reshape(x, (B, L, h, self.config.d // h)), (0, 2, 1, 3))

    def encode(self, ids, training=False, rng=None, return_attention=False):
        """Encode a left-padded (B, L) id matrix.

        Returns ``(hidden, seq_repr)``: hidden is (B, L, d) with zeros at pad
        positions, seq_repr is the hidden state at the last column.
        """
        ids = np.asarray(ids, dtype=np.int64)
        cfg, P = self.config, self.params
        B, L = ids.shape
        if L != cfg.max_len:
            raise ConfigError(f"encode: batch width {L} != max_len {cfg.max_len}")
        if ids.min() < 0 or ids.max() > self.num_items + 1:
            raise ValueError(f"encode: item id out of range [0, {self.num_items + 1}]")
        if training and rng is None:
            raise ValueError("encode: training mode needs an rng for dropout")
        p_drop = cfg.dropout if training else 0.0
        valid = ids != 0
        keep = nt.Tensor(np.broadcast_to(valid[..., None], (B, L, cfg.d)).astype(self.dtype))

        x = nt.embedding(P["encoder.item_emb"], ids) + P["encoder.pos_emb"]
        x = nt.layernorm(x, P["encoder.emb_ln.gain"], P["encoder.emb_ln.bias"], cfg.layernorm_eps)
        x = nt.dropout(x, p_drop, rng, training)
        x = nt.mul(x, keep)
        attention = []
        for b in range(cfg.num_blocks):
            p = f"encoder.block{b}."
            q = self._heads(x @ P[p + "wq"] + P[p + "bq"], B, L)
            k = self._heads(x @ P[p + "wk"] + P[p + "bk"], B, L)
            v = self._heads(x @ P[p + "wv"] + P[p + "bv"], B, L)
            att, probs = nt.causal_masked_attention(q, k, v, valid)
            attention.append(probs)
            att = nt.reshape(nt.transpose(att, (0, 2, 1, 3)), (B, L, cfg.d))
            att = nt.dropout(att @ P[p + "wo"] + P[p + "bo"], p_drop, rng, training)
            x = nt.layernorm(x + att, P[p + "ln1.gain"], P[p + "ln1.bias"], cfg.layernorm_eps)
            ff = nt.gelu(x @ P[p + "ff1"] + P[p + "ff1.bias"]) @ P[p + "ff2"] + P[p + "ff2.bias"]
            ff = nt.dropout(ff, p_drop, rng, training)
            x = nt.layernorm(x + ff, P[p + "ln2.gain"], P[p + "ln2.bias"], cfg.layernorm_eps)
            x = nt.mul(x, keep)
        seq_repr = x[:, L - 1, :]
        if return_attention:
            return x, seq_repr, attention
        return x, seq_repr

    def score_items(self, position_repr):
        """Logits over items 1..num_items (column j scores item j+1)."""
        table = self.item_table[1:self.num_items + 1]
        return nt.matmul(position_repr, nt.transpose(table, (1, 0)))

    def score_items_array(self, reprs):
        """Graph-free scoring used at evaluation time."""
        return np.asarray(reprs) @ self.item_table.data[1:self.num_items + 1].T
