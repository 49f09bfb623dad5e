"""Token-stream decoder baselines and the fixed-span re-segmentation.

``gpt2``          plain causal decoder over the lexical tokens of a document
``gpt2_boundary`` same, but every sentence keeps its BOS/EOS (and EOD) markers
``gpt2_gist``     boundary stream plus a mask that lets tokens see earlier
                  sentences only through their EOS positions
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import NEG_INF, InputError
from ..textpipe.bpe import BOS, EOD, EOS, N_RESERVED
from ..textpipe.tensors import SentenceStream, layout_ids, target_weights
from . import layers
from .config import ModelConfig
from .layers import Mode


def flatten_document(doc: SentenceStream, variant: str) -> np.ndarray:
    """Token stream of a whole document for the decoder baselines."""
    parts = []
    if variant == "gpt2":
        parts.append([BOS])
        for i in range(len(doc)):
            parts.append(doc.ids[i, 1:1 + doc.n_lex[i]])
        parts.append([EOD])
    else:
        fin = doc.is_final
        for i in range(len(doc)):
            parts.append([BOS])
            parts.append(doc.ids[i, 1:1 + doc.n_lex[i]])
            if fin[i]:
                parts.append([EOD])
            parts.append([EOS])
    return np.concatenate([np.asarray(p, dtype=np.int64) for p in parts])


def windows(tokens: np.ndarray, ctx_len: int) -> list[np.ndarray]:
    """Windows of ``ctx_len`` overlapping by one token, so every transition
    is predicted exactly once."""
    if ctx_len < 2:
        raise InputError("ctx_len must be >= 2")
    out, step = [], ctx_len - 1
    for start in range(0, max(1, len(tokens) - 1), step):
        w = tokens[start:start + ctx_len]
        if len(w) >= 2:
            out.append(w)
    return out


def sentence_index(tokens: np.ndarray):
    """Per-position sentence ids and EOS flags for a boundary-marked stream.

    A new sentence starts after every EOS, so a window that begins mid
    sentence still groups its first tokens together."""
    is_eos = tokens == EOS
    sid = np.concatenate([[0], np.cumsum(is_eos)[:-1]])
    return sid, is_eos


def gist_mask(sentence_ids, is_eos, dtype=np.float64) -> np.ndarray:
    """[n, n] additive bias: 0 iff (same sentence and j <= i) or j is the EOS
    of an earlier sentence, otherwise the large negative sentinel."""
    sid = np.asarray(sentence_ids)
    eos = np.asarray(is_eos, dtype=bool)
    n = len(sid)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    same = (sid[:, None] == sid[None, :]) & (j <= i)
    earlier_gist = eos[None, :] & (sid[None, :] < sid[:, None])
    return np.where(same | earlier_gist, 0.0, NEG_INF).astype(dtype)


def decoder_hidden(params, ids: np.ndarray, cfg: ModelConfig, mode: Mode, valid=None):
    """Causal decoder over [B, n] token ids (right-padded rows allowed)."""
    ids = np.atleast_2d(ids)
    B, n = ids.shape
    if n > cfg.ctx_len:
        raise InputError(f"token stream of length {n} exceeds ctx_len={cfg.ctx_len}")
    valid = np.ones_like(ids, dtype=bool) if valid is None else valid
    dtype = np.dtype(cfg.dtype)
    mask = layers.causal_mask(valid, dtype)
    if cfg.variant == "gpt2_gist":
        gm = np.stack([gist_mask(*sentence_index(row)) for row in ids]).astype(dtype)
        mask = np.minimum(mask, gm[:, None])
    tok = ad.gather_rows(params["tok_emb"], ids)
    H = ad.add(tok, ad.take(params["pos_emb"], slice(0, n)))
    for layer, _ in enumerate(cfg.layer_plan(), start=1):
        H = layers.self_attention_block(H, params, layer, mask, cfg, mode)
        H = layers.ffn_block(H, params, layer, cfg)
    return H


def forward_decoder_baseline(params, token_stream, cfg: ModelConfig, mode: Mode | None = None):
    """Logits [B, n, V] for a batch of token streams."""
    mode = mode or Mode()
    H = decoder_hidden(params, token_stream, cfg, mode)
    return layers.output_logits(H, params, cfg)


def run_windows(params, wins: list[np.ndarray], cfg: ModelConfig, mode: Mode, eos_weight=1.0):
    """Weighted CE over a batch of token windows; mirrors ``tg.run_streams``."""
    from .tg import StreamStats

    B = len(wins)
    n = max(len(w) for w in wins)
    ids = np.zeros((B, n), dtype=np.int64)
    valid = np.zeros((B, n), dtype=bool)
    tgt = np.full((B, n), -1, dtype=np.int64)
    for b, w in enumerate(wins):
        ids[b, :len(w)] = w
        valid[b, :len(w)] = True
        tgt[b, :len(w) - 1] = w[1:]
    H = decoder_hidden(params, ids, cfg, mode, valid)
    w = target_weights(tgt, eos_weight).reshape(-1)
    lex = (tgt >= N_RESERVED).reshape(-1)
    sel = np.flatnonzero((w > 0) | lex)
    stats = StreamStats(sentence_steps=1, sentences=B)
    rows = ad.take(ad.reshape(H, (B * n, cfg.d_model)), sel)
    logits = layers.output_logits(rows, params, cfg)
    flat_t = tgt.reshape(-1)[sel]
    nll = ad.token_nll(logits, flat_t)
    stats.lex_nll = float(nll[lex[sel]].sum())
    stats.lex_count = int(lex[sel].sum())
    ws = w[sel]
    stats.weight_total = float(ws.sum())
    loss = None
    if logits.requires_grad and stats.weight_total > 0:
        loss = ad.weighted_cross_entropy(logits, flat_t, ws, reduction="mean")
    return loss, stats


def respan_fixed(doc_token_ids, n_span: int, L: int, doc_id=0, split="train") -> SentenceStream:
    """Cut a document's lexical tokens into consecutive ``n_span`` chunks, each
    laid out as one sentence row (tensor length 1 + max(L, n_span) + 2)."""
    toks = np.asarray(doc_token_ids, dtype=np.int64)
    if n_span < 1:
        raise InputError("n_span must be >= 1")
    if toks.size == 0:
        raise InputError("empty document")
    L_eff = max(L, n_span)
    chunks = [toks[i:i + n_span] for i in range(0, len(toks), n_span)]
    ids = np.stack([layout_ids(c, L_eff, i == len(chunks) - 1) for i, c in enumerate(chunks)])
    return SentenceStream(ids, np.array([len(c) for c in chunks], dtype=np.int64), doc_id, split)


def respan_document(doc: SentenceStream, n_span: int, L: int) -> SentenceStream:
    lexical = np.concatenate([doc.ids[i, 1:1 + doc.n_lex[i]] for i in range(len(doc))])
    return respan_fixed(lexical, n_span, L, doc.doc_id, doc.split)
