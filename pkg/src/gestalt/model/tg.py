"""Sentence-level recurrent forward pass.

One call of :func:`sentence_step` runs the shared stack over the t-th
sentence of every active stream in a batch, reading a rolling memory of
earlier sentence vectors through cross-attention and returning the new
sentence vector read off the EOS row at the extraction layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import InputError, Tensor
from ..textpipe.bpe import PAD
from ..textpipe.tensors import SentenceStream, target_weights
from . import layers
from .config import ModelConfig
from .layers import Mode


def sinusoid(n_positions: int, d: int, start: int = 1) -> np.ndarray:
    """Standard sin/cos encoding for positions start, start+1, ..."""
    pos = np.arange(start, start + n_positions, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n_positions, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class SentenceMemory:
    """FIFO of sentence vectors, oldest first. Each entry is [B_t, d] where B_t
    is the number of streams active when it was written; streams are kept
    sorted longest-first so later steps read a prefix of the rows."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: list[Tensor] = []

    def __len__(self):
        return len(self.entries)

    def append(self, m: Tensor):
        self.entries.append(m)
        if len(self.entries) > self.capacity:
            self.entries.pop(0)

    def rows(self, n: int) -> list[Tensor]:
        return [e if e.shape[0] == n else ad.take(e, slice(0, n)) for e in self.entries]

    def last(self, n: int) -> Tensor:
        e = self.entries[-1]
        return e if e.shape[0] == n else ad.take(e, slice(0, n))


@dataclass
class MemoryKV:
    keys: Tensor | None    # [B, K, d], values + slot sinusoids
    values: Tensor | None  # [B, K, d], raw sentence vectors
    size: int


def build_memory_kv(memory: SentenceMemory, n: int, cfg: ModelConfig) -> MemoryKV:
    K = len(memory)
    if K == 0:
        return MemoryKV(None, None, 0)
    values = ad.stack(memory.rows(n), axis=1)
    pe = layers.const(sinusoid(K, cfg.d_model), values)
    return MemoryKV(ad.add(values, pe), values, K)


def embed_and_seed(ids: np.ndarray, cols: np.ndarray, memory, params, cfg, mode: Mode):
    """Token + position embeddings; row 0 replaced by the previous sentence
    vector (plus its position) when seeding is on and memory is non-empty."""
    B = ids.shape[0]
    tok = ad.gather_rows(params["tok_emb"], ids)
    rate = cfg.token_dropout * mode.dropout_scale
    if mode.training and rate > 0:
        lexical = ids >= 4
        drop = (mode.rng.random(ids.shape) < rate) & lexical
        tok = ad.mul(tok, layers.const((~drop)[..., None], tok))
    pos = ad.take(params["pos_emb"], cols)
    x = ad.add(tok, pos)
    if cfg.seeding and len(memory):
        seed = ad.add(memory.last(B), ad.take(pos, 0))
        x = ad.concat([ad.reshape(seed, (B, 1, cfg.d_model)), ad.take(x, (slice(None), slice(1, None)))], axis=1)
    return x


def extract_sentence_vector(h_eos: Tensor, params, cfg: ModelConfig, mode: Mode) -> Tensor:
    """m_t = W_sent h_EOS (dropout on h_EOS first while training)."""
    x = mode.dropout(h_eos, cfg.sentence_dropout * mode.dropout_scale)
    for j in range(cfg.sentence_head_depth - 1):
        x = ad.gelu(ad.linear(x, params[f"sent.w{j}"], params[f"sent.b{j}"]))
        x = mode.dropout(x, cfg.head_dropout)
    return ad.matmul(x, params["sent.w"])


def sentence_step(params, ids: np.ndarray, memory: SentenceMemory, cfg: ModelConfig, mode: Mode):
    """Run one sentence step for a [B, T] block of sentence rows.

    Returns (final hidden [B, Tc, d], kept column indices, m_t [B, d]).
    With ``mode.compact`` the columns that are padding in every row are
    dropped before the stack; they are masked out of attention anyway.
    """
    ids = np.asarray(ids)
    B, T = ids.shape
    if T != cfg.T:
        raise InputError(f"sentence rows have length {T}, config expects T={cfg.T}")
    valid = ids != PAD
    cols = np.flatnonzero(valid.any(axis=0)) if mode.compact else np.arange(T)
    ids_c, valid_c = ids[:, cols], valid[:, cols]
    mask = layers.causal_mask(valid_c, np.dtype(cfg.dtype))

    H = embed_and_seed(ids_c, cols, memory, params, cfg, mode)
    kv = build_memory_kv(memory, B, cfg)
    m = None
    for layer, blocks in enumerate(cfg.layer_plan(), start=1):
        for kind in blocks:
            if mode.recompute_kv and kind in ("cross", "parallel", "self_prefix"):
                kv = build_memory_kv(memory, B, cfg)
            if kind == "self":
                H = layers.self_attention_block(H, params, layer, mask, cfg, mode)
            elif kind == "cross":
                H = layers.cross_attention_block(H, params, layer, kv, cfg, mode)
            elif kind == "parallel":
                H = layers.parallel_block(H, params, layer, mask, kv, cfg, mode)
            elif kind == "self_prefix":
                H = layers.prefix_self_attention_block(H, params, layer, mask, kv, cfg, mode)
            else:
                H = layers.ffn_block(H, params, layer, cfg)
        if layer == cfg.extract_layer:
            m = extract_sentence_vector(ad.take(H, (slice(None), -1)), params, cfg, mode)
    return H, cols, m


def write_memory(memory: SentenceMemory, m: Tensor, cfg: ModelConfig):
    memory.append(ad.detach(m) if cfg.variant == "tg_detach" else m)


def forward_sentence_step(params, sentence, memory: SentenceMemory, cfg: ModelConfig, mode: Mode | None = None):
    """Full-width logits [B, T, V] for one sentence step; updates ``memory``."""
    mode = mode or Mode()
    ids = np.atleast_2d(getattr(sentence, "ids", sentence))
    full = Mode(mode.training, mode.rng, mode.dropout_scale, False, mode.recompute_kv, mode.trace)
    H, _, m = sentence_step(params, ids, memory, cfg, full)
    logits = layers.output_logits(H, params, cfg)
    write_memory(memory, m, cfg)
    return logits, memory, m


@dataclass
class StreamStats:
    weight_total: float = 0.0
    lex_nll: float = 0.0
    lex_count: int = 0
    sentence_steps: int = 0
    sentences: int = 0


def run_streams(params, streams: list[SentenceStream], cfg: ModelConfig, mode: Mode,
                eos_weight: float = 1.0, keep_positions: bool = False):
    """Step a batch of streams in lockstep, each with its own fresh memory.

    Returns (loss, stats, per_position). ``loss`` is the weighted CE over all
    supervised positions of the batch divided by the total weight (None when
    graph recording is off or nothing is supervised). ``per_position`` holds,
    per input stream, a [n_sentences, T] array of label NLLs (NaN where
    unlabelled) when ``keep_positions`` is set.
    """
    if not streams or any(len(s) == 0 for s in streams):
        raise InputError("empty stream")
    order = sorted(range(len(streams)), key=lambda i: (-len(streams[i]), i))
    ordered = [streams[i] for i in order]
    memory = SentenceMemory(cfg.M)
    stats = StreamStats()
    terms = []
    per_pos = [np.full(s.ids.shape, np.nan) for s in ordered] if keep_positions else None
    d = cfg.d_model
    for t in range(len(ordered[0])):
        n = sum(len(s) > t for s in ordered)
        ids = np.stack([s.ids[t] for s in ordered[:n]])
        tgt = np.stack([s.targets[t] for s in ordered[:n]])
        H, cols, m = sentence_step(params, ids, memory, cfg, mode)
        write_memory(memory, m, cfg)
        stats.sentence_steps += 1
        stats.sentences += n
        tgt_c = tgt[:, cols]
        w = target_weights(tgt_c, eos_weight).reshape(-1)
        lex = (tgt_c >= 4).reshape(-1)
        sel = np.flatnonzero((w > 0) | lex | (keep_positions & (tgt_c >= 0).reshape(-1)))
        if sel.size == 0:
            continue
        rows = ad.take(ad.reshape(H, (n * len(cols), d)), sel)
        logits = layers.output_logits(rows, params, cfg)
        flat_t = tgt_c.reshape(-1)[sel]
        nll = ad.token_nll(logits, flat_t)
        lex_sel = lex[sel]
        stats.lex_nll += float(nll[lex_sel].sum())
        stats.lex_count += int(lex_sel.sum())
        ws = w[sel]
        stats.weight_total += float(ws.sum())
        if logits.requires_grad and ws.sum() > 0:
            terms.append(ad.weighted_cross_entropy(logits, flat_t, ws, reduction="sum"))
        if keep_positions:
            for k, flat_idx in enumerate(sel):
                r, c = divmod(int(flat_idx), len(cols))
                per_pos[r][t, cols[c]] = nll[k]
    loss = None
    if terms:
        total = terms[0]
        for term in terms[1:]:
            total = ad.add(total, term)
        loss = ad.scale(total, 1.0 / stats.weight_total)
    if keep_positions:
        unsorted = [None] * len(streams)
        for k, i in enumerate(order):
            unsorted[i] = per_pos[k]
        per_pos = unsorted
    return loss, stats, per_pos


def forward_stream(params, stream: SentenceStream, cfg: ModelConfig, mode: Mode | None = None,
                   eos_weight: float = 1.0):
    """Single stream with a fresh memory: (loss, stats, [n, T] per-position NLL)."""
    loss, stats, per_pos = run_streams(params, [stream], cfg, mode or Mode(), eos_weight, keep_positions=True)
    return loss, stats, per_pos[0]
