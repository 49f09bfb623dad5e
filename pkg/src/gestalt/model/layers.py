"""Transformer sub-blocks shared by the sentence model and the decoder baselines.

All blocks are pre-norm residual blocks on [B, T, d] hidden states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import NEG_INF, Tensor


@dataclass
class Mode:
    """Per-call switches: training flag, dropout RNG and warm-in scale,
    pad-column compaction and debugging hooks."""

    training: bool = False
    rng: np.random.Generator | None = None
    dropout_scale: float = 1.0
    compact: bool = True
    recompute_kv: bool = False
    trace: dict | None = field(default=None, repr=False)

    def dropout(self, x, rate):
        if not self.training or rate <= 0:
            return x
        return ad.apply_dropout(x, rate, self.rng, True)


def causal_mask(valid: np.ndarray, dtype=np.float64) -> np.ndarray:
    """[B, 1, T, T] additive mask: query i sees key j iff j <= i and j is valid."""
    B, T = valid.shape
    tri = np.tril(np.ones((T, T), dtype=bool))
    ok = tri[None] & valid[:, None, :]
    return np.where(ok, 0.0, NEG_INF).astype(dtype)[:, None]


def split_heads(x, n_heads):
    B, T, d = x.shape
    return ad.transpose(ad.reshape(x, (B, T, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x):
    B, H, T, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, T, H * dh))


def project(p, prefix, x, which):
    return ad.linear(x, p[f"{prefix}.w{which}"], p[f"{prefix}.b{which}"])


def multi_head_attention(p, prefix, xq, xk, xv, n_heads, mask, mode, attn_drop, tag=None):
    """softmax(Q K^T / sqrt(d_h) + mask) V with per-head split and output projection."""
    d = xq.shape[-1]
    dh = d // n_heads
    q = split_heads(ad.scale(project(p, prefix, xq, "q"), 1.0 / math.sqrt(dh)), n_heads)
    k = split_heads(project(p, prefix, xk, "k"), n_heads)
    v = split_heads(project(p, prefix, xv, "v"), n_heads)
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    weights = ad.row_softmax(scores, mask)
    if mode.trace is not None and tag is not None:
        mode.trace.setdefault(tag, []).append(weights.data)
    weights = mode.dropout(weights, attn_drop)
    return project(p, prefix, merge_heads(ad.matmul(weights, v)), "o")


def norm(p, prefix, x, eps):
    return ad.layer_norm(x, p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"], eps)


def self_attention_block(H, p, layer, mask, cfg, mode):
    prefix = f"l{layer}.self"
    x = norm(p, prefix, H, cfg.ln_eps)
    out = multi_head_attention(p, prefix, x, x, x, cfg.n_heads, mask, mode, cfg.attn_dropout,
                               tag=f"{prefix}")
    return ad.add(H, out)


def cross_attention_block(H, p, layer, kv, cfg, mode):
    """H + gate * CrossAttn(norm(H), K_M, V_M); identity when memory is empty."""
    if kv is None or kv.size == 0:
        return H
    prefix = f"l{layer}.cross"
    x = norm(p, prefix, H, cfg.ln_eps)
    inc = multi_head_attention(p, prefix, x, kv.keys, kv.values, cfg.n_heads, None, mode,
                               cfg.attn_dropout, tag=prefix)
    return ad.add(H, ad.mul(inc, p[f"{prefix}.gate"]))


def parallel_block(H, p, layer, mask, kv, cfg, mode):
    """Self- and cross-attention on one normed input, increments summed."""
    x = norm(p, f"l{layer}.par", H, cfg.ln_eps)
    inc = multi_head_attention(p, f"l{layer}.self", x, x, x, cfg.n_heads, mask, mode,
                               cfg.attn_dropout, tag=f"l{layer}.self")
    if kv is not None and kv.size:
        cross = multi_head_attention(p, f"l{layer}.cross", x, kv.keys, kv.values, cfg.n_heads,
                                     None, mode, cfg.attn_dropout, tag=f"l{layer}.cross")
        inc = ad.add(inc, ad.mul(cross, p[f"l{layer}.cross.gate"]))
    return ad.add(H, inc)


def prefix_self_attention_block(H, p, layer, mask, kv, cfg, mode):
    """Self-attention whose keys/values are the memory rows followed by the tokens."""
    prefix = f"l{layer}.self"
    x = norm(p, prefix, H, cfg.ln_eps)
    if kv is None or kv.size == 0:
        return ad.add(H, multi_head_attention(p, prefix, x, x, x, cfg.n_heads, mask, mode,
                                              cfg.attn_dropout, tag=prefix))
    keys = ad.concat([kv.keys, x], axis=1)
    values = ad.concat([kv.values, x], axis=1)
    B, _, T, _ = mask.shape
    ext = np.concatenate([np.zeros((B, 1, T, kv.size), dtype=mask.dtype), mask], axis=-1)
    return ad.add(H, multi_head_attention(p, prefix, x, keys, values, cfg.n_heads, ext, mode,
                                          cfg.attn_dropout, tag=prefix))


def ffn_block(H, p, layer, cfg):
    prefix = f"l{layer}.ffn"
    x = norm(p, prefix, H, cfg.ln_eps)
    h = ad.gelu(ad.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return ad.add(H, ad.linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"]))


def output_logits(h, p, cfg):
    """Final norm then the output head tied to the token embedding."""
    x = ad.layer_norm(h, p["ln_f.g"], p["ln_f.b"], cfg.ln_eps)
    return ad.matmul(x, ad.transpose(p["tok_emb"], (1, 0)))


def const(x, like: Tensor) -> Tensor:
    return Tensor(np.asarray(x, dtype=like.dtype))
