"""Corpus -> vocab -> per-document sentence streams."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .bpe import build_vocab
from .segment import split_documents, split_sentences
from .tensors import DEFAULT_L, document_stream


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TG_THREADS", "1")))
    except ValueError:
        return 1


def assign_splits(docs, valid_frac=0.05, test_frac=0.05, seed=0):
    """Deterministic random train/valid/test assignment of whole documents."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    n_valid = int(round(len(docs) * valid_frac))
    n_test = int(round(len(docs) * test_frac))
    valid = sorted(order[:n_valid].tolist())
    test = sorted(order[n_valid:n_valid + n_test].tolist())
    train = sorted(order[n_valid + n_test:].tolist())
    return {"train": [docs[i] for i in train], "valid": [docs[i] for i in valid],
            "test": [docs[i] for i in test]}


def documents_to_streams(docs, vocab, L=DEFAULT_L, split="train"):
    """One whole-document stream per non-empty document, in input order."""

    def one(doc):
        sents = split_sentences(doc.text, L, vocab)
        return document_stream(sents, vocab, L, doc.doc_id, split) if sents else None

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, docs))
    else:
        out = [one(d) for d in docs]
    return [s for s in out if s is not None]


def prepare(split_texts: dict, vocab_size=8192, L=DEFAULT_L, seed=0,
            valid_frac=0.05, test_frac=0.05):
    """``split_texts`` maps split name to raw corpus text. A lone "train"
    entry is divided into train/valid/test by document."""
    if set(split_texts) == {"train"}:
        docs = split_documents(split_texts["train"])
        splits = assign_splits(docs, valid_frac, test_frac, seed)
    else:
        splits = {k: split_documents(v) for k, v in split_texts.items()}
    vocab = build_vocab([d.text for d in splits["train"]], vocab_size)
    streams = {k: documents_to_streams(v, vocab, L, k) for k, v in splits.items()}
    return vocab, streams
