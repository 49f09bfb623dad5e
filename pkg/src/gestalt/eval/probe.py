"""Father/son completion probe for the in-context reversal curse.

Normal:   context "The son of F is S."  query "The son of F is"    -> S
Reversed: context "The son of F is S."  query "The father of S is" -> F

For each sample we read the next-token distribution at the answer position
and record the NLL of the gold name and of the other name in the prompt.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import InputError
from ..model import baselines, tg
from ..model.layers import Mode
from ..textpipe.bpe import BOS, EOS
from ..textpipe.tensors import layout_ids

CONDITIONS = ("normal", "reversed")
CSV_FIELDS = ["condition", "n_samples", "nll_target", "nll_distractor", "margin", "top1_match_rate"]


@dataclass
class ProbeResult:
    condition: str
    nll_target: float
    nll_distractor: float
    top1_match_rate: float
    n_samples: int

    @property
    def margin(self) -> float:
        """log p(target) - log p(distractor); > 0 prefers the correct name."""
        return self.nll_distractor - self.nll_target

    def row(self):
        return dict(condition=self.condition, n_samples=self.n_samples, nll_target=self.nll_target,
                    nll_distractor=self.nll_distractor, margin=self.margin,
                    top1_match_rate=self.top1_match_rate)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ------------------------------------------------------------------ models


class UniformModel:
    def __init__(self, vocab_size):
        self.vocab_size = vocab_size

    def next_token_logits(self, contexts, prefixes):
        return np.zeros((len(contexts), self.vocab_size))


class CopyModel:
    """Scripted oracle: puts its mass on the context token at the same offset
    as the answer slot of the query."""

    def __init__(self, vocab_size, confidence=30.0):
        self.vocab_size = vocab_size
        self.confidence = confidence

    def next_token_logits(self, contexts, prefixes):
        out = np.zeros((len(contexts), self.vocab_size))
        for i, (c, p) in enumerate(zip(contexts, prefixes)):
            if len(p) < len(c):
                out[i, c[len(p)]] = self.confidence
        return out


class SentenceModelAdapter:
    """Context sentence is one sentence step (memory write); the query is the
    next step and the answer distribution is read at its last prefix token."""

    def __init__(self, params, cfg):
        self.params, self.cfg = params, cfg

    def next_token_logits(self, contexts, prefixes):
        cfg = self.cfg
        ctx = np.stack([layout_ids(c, cfg.L_eff, False) for c in contexts])
        qry = np.stack([layout_ids(p, cfg.L_eff, False) for p in prefixes])
        mem = tg.SentenceMemory(cfg.M)
        with ad.no_grad():
            _, _, m = tg.sentence_step(self.params, ctx, mem, cfg, Mode(compact=True))
            tg.write_memory(mem, m, cfg)
            logits, _, _ = tg.forward_sentence_step(self.params, qry, mem, cfg, Mode())
        rows = np.arange(len(prefixes))
        cols = np.array([len(p) for p in prefixes])
        return logits.data[rows, cols]


class DecoderAdapter:
    """Token-stream baselines: context and query concatenated in one stream."""

    def __init__(self, params, cfg):
        self.params, self.cfg = params, cfg

    def stream(self, c, p):
        if self.cfg.variant == "gpt2":
            return [BOS, *c, *p]
        return [BOS, *c, EOS, BOS, *p]

    def next_token_logits(self, contexts, prefixes):
        out = []
        with ad.no_grad():
            for c, p in zip(contexts, prefixes):
                ids = np.asarray(self.stream(c, p))[None]
                logits = baselines.forward_decoder_baseline(self.params, ids, self.cfg, Mode())
                out.append(logits.data[0, -1])
        return np.stack(out)


def adapter_for(params, cfg):
    return SentenceModelAdapter(params, cfg) if cfg.is_tg else DecoderAdapter(params, cfg)


# ------------------------------------------------------------------- probe


def usable_names(name_pool, vocab):
    """Names whose " Name" encodes to a single token, with distinct tokens."""
    seen, out = set(), []
    for name in name_pool:
        ids = vocab.encode(" " + name)
        if len(ids) == 1 and ids[0] not in seen:
            seen.add(ids[0])
            out.append(name)
    return out


def build_samples(n, seed, names):
    if len(names) < 2:
        raise InputError(f"name pool has {len(names)} usable names; need at least 2")
    rng = np.random.default_rng(seed)
    pairs = [tuple(rng.choice(len(names), size=2, replace=False)) for _ in range(n)]
    return [(names[f], names[s]) for f, s in pairs]


def probe_inputs(samples, vocab, condition):
    contexts, prefixes, targets, distractors = [], [], [], []
    for father, son in samples:
        contexts.append(vocab.encode(f"The son of {father} is {son}."))
        if condition == "normal":
            prefixes.append(vocab.encode(f"The son of {father} is"))
            targets.append(vocab.encode(" " + son)[0])
            distractors.append(vocab.encode(" " + father)[0])
        else:
            prefixes.append(vocab.encode(f"The father of {son} is"))
            targets.append(vocab.encode(" " + father)[0])
            distractors.append(vocab.encode(" " + son)[0])
    return contexts, prefixes, np.array(targets), np.array(distractors)


def reversal_probe(model, vocab, name_pool, n=1000, seed=0, batch_size=250):
    """Returns {condition: ProbeResult}. ``model`` exposes
    ``next_token_logits(contexts, prefixes) -> [B, V]``."""
    if n <= 0:
        raise InputError("n must be positive")
    samples = build_samples(n, seed, usable_names(name_pool, vocab))
    results = {}
    for cond in CONDITIONS:
        ctx, pre, tgt, dis = probe_inputs(samples, vocab, cond)
        nll_t, nll_d, hit = [], [], []
        for k in range(0, n, batch_size):
            logits = np.asarray(model.next_token_logits(ctx[k:k + batch_size], pre[k:k + batch_size]),
                                dtype=np.float64)
            lp = log_softmax(logits)
            rows = np.arange(len(lp))
            nll_t.append(-lp[rows, tgt[k:k + batch_size]])
            nll_d.append(-lp[rows, dis[k:k + batch_size]])
            hit.append(logits.argmax(axis=-1) == tgt[k:k + batch_size])
        results[cond] = ProbeResult(cond, float(np.concatenate(nll_t).mean()),
                                    float(np.concatenate(nll_d).mean()),
                                    float(np.concatenate(hit).mean()), n)
    return results


def write_probe_csv(path, results):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        for cond in CONDITIONS:
            if cond in results:
                w.writerow(results[cond].row())
