"""Lexical-only perplexity over whole documents."""
from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import InputError
from ..model import baselines, tg
from ..model.config import ModelConfig
from ..model.layers import Mode
from ..textpipe.tensors import slice_streams


def model_units(docs, cfg: ModelConfig, S: int | None = None):
    """What the model actually consumes for a list of whole-document streams:
    sentence streams (optionally sliced at S) for the recurrent variants,
    token windows for the decoder baselines."""
    if cfg.is_tg:
        out = []
        for doc in docs:
            if cfg.variant == "tg_fixed_span":
                doc = baselines.respan_document(doc, cfg.span, cfg.L)
            out.extend(slice_streams(doc, S) if S else [doc])
        return out
    wins = []
    for doc in docs:
        wins.extend(baselines.windows(baselines.flatten_document(doc, cfg.variant), cfg.ctx_len))
    return wins


def unit_size(unit):
    """(graph depth, lexical tokens) of a stream or token window."""
    if hasattr(unit, "n_lex"):
        return len(unit), unit.n_tokens
    return 1, int((np.asarray(unit) >= 4).sum())


def run_units(params, units, cfg: ModelConfig, mode: Mode, eos_weight=1.0):
    if cfg.is_tg:
        loss, stats, _ = tg.run_streams(params, units, cfg, mode, eos_weight)
        return loss, stats
    return baselines.run_windows(params, units, cfg, mode, eos_weight)


def lexical_nll(params, cfg: ModelConfig, docs, batch_size: int = 32):
    """(sum of lexical-label NLL, lexical label count) over whole documents."""
    if not docs:
        raise InputError("no documents to evaluate")
    units = model_units(docs, cfg)
    order = sorted(range(len(units)), key=lambda i: -unit_size(units[i])[0])
    total, count = 0.0, 0
    mode = Mode(training=False)
    with ad.no_grad():
        for k in range(0, len(order), batch_size):
            batch = [units[i] for i in order[k:k + batch_size]]
            _, stats = run_units(params, batch, cfg, mode)
            total += stats.lex_nll
            count += stats.lex_count
    return total, count


def eval_perplexity(params, cfg: ModelConfig, docs, batch_size: int = 32) -> float:
    """exp(mean NLL over lexical label positions); memory reset per document,
    dropout off, documents never sliced."""
    total, count = lexical_nll(params, cfg, docs, batch_size)
    if count == 0:
        raise InputError("documents contain no lexical labels")
    return math.exp(total / count)
