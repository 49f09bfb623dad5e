"""Fixed-length sentence tensors and sentence streams.

Layout of one row (length T = L + 3)::

    [BOS][lex_1 ... lex_k][PAD ...][EOD or PAD][EOS]
     0    1 .. k                     L+1         L+2

EOS always sits in the last slot so the sentence vector is read from a
constant row; pads are masked out of attention and loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import InputError
from .bpe import BOS, EOD, EOS, N_RESERVED, PAD

DEFAULT_L = 64


def tensor_length(L: int) -> int:
    return 1 + L + 2


@dataclass
class SentenceTensor:
    ids: np.ndarray
    n_lex: int
    is_final: bool

    @property
    def pad_mask(self) -> np.ndarray:
        return self.ids != PAD

    @property
    def lexical(self) -> np.ndarray:
        return self.ids[1:1 + self.n_lex]


def layout_ids(lexical_ids, L: int, is_final: bool) -> np.ndarray:
    k = len(lexical_ids)
    if k > L:
        raise InputError(f"sentence has {k} tokens, cap is {L}")
    if k == 0:
        raise InputError("empty sentence")
    ids = np.full(tensor_length(L), PAD, dtype=np.int64)
    ids[0] = BOS
    ids[1:1 + k] = lexical_ids
    if is_final:
        ids[L + 1] = EOD
    ids[L + 2] = EOS
    return ids


def tokenize_sentence(text: str, vocab, L: int = DEFAULT_L, is_final: bool = False) -> SentenceTensor:
    lex = vocab.encode(text)
    return SentenceTensor(layout_ids(lex, L, is_final), len(lex), is_final)


def sentence_targets(ids: np.ndarray):
    """Next-token labels within each row, skipping pads.

    Every non-pad position predicts the next non-pad id of the same row, so
    the last lexical token predicts EOD (final sentence) or EOS regardless
    of how many pads sit in between. Positions with no label get -1.
    Works on [T] or [..., T] arrays.
    """
    ids = np.asarray(ids)
    flat = ids.reshape(-1, ids.shape[-1])
    out = np.full(flat.shape, -1, dtype=np.int64)
    for r, row in enumerate(flat):
        valid = np.flatnonzero(row != PAD)
        out[r, valid[:-1]] = row[valid[1:]]
    return out.reshape(ids.shape)


def target_weights(targets: np.ndarray, eos_weight: float) -> np.ndarray:
    """Loss weights: lexical 1, EOS/EOD/BOS ``eos_weight``, no label 0."""
    w = np.where(targets >= N_RESERVED, 1.0, 0.0)
    special = (targets == EOS) | (targets == EOD) | (targets == BOS)
    return np.where(special, eos_weight, w)


def lexical_label_mask(targets: np.ndarray) -> np.ndarray:
    return targets >= N_RESERVED


@dataclass
class SentenceStream:
    """Contiguous sentences sharing one memory lifetime."""

    ids: np.ndarray            # [n, T]
    n_lex: np.ndarray          # [n]
    doc_id: int = 0
    split: str = "train"
    _targets: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return self.ids.shape[0]

    @property
    def is_final(self) -> np.ndarray:
        return self.ids[:, -2] == EOD

    @property
    def n_tokens(self) -> int:
        return int(self.n_lex.sum())

    @property
    def targets(self) -> np.ndarray:
        if self._targets is None:
            self._targets = sentence_targets(self.ids)
        return self._targets

    @property
    def sentences(self) -> list[SentenceTensor]:
        fin = self.is_final
        return [SentenceTensor(self.ids[i], int(self.n_lex[i]), bool(fin[i])) for i in range(len(self))]

    @classmethod
    def from_sentences(cls, sentences, doc_id=0, split="train"):
        ids = np.stack([s.ids for s in sentences])
        n_lex = np.array([s.n_lex for s in sentences], dtype=np.int64)
        return cls(ids, n_lex, doc_id, split)


def document_stream(sentence_texts, vocab, L=DEFAULT_L, doc_id=0, split="train") -> SentenceStream:
    """Whole document as one stream; the last sentence carries EOD."""
    if not sentence_texts:
        raise InputError("document has no sentences")
    n = len(sentence_texts)
    rows = [tokenize_sentence(s, vocab, L, i == n - 1) for i, s in enumerate(sentence_texts)]
    return SentenceStream.from_sentences(rows, doc_id, split)


def slice_streams(doc: SentenceStream, S: int) -> list[SentenceStream]:
    """Cut a document into contiguous streams of at most ``S`` sentences."""
    if S < 1:
        raise InputError("S must be >= 1")
    return [
        SentenceStream(doc.ids[i:i + S], doc.n_lex[i:i + S], doc.doc_id, doc.split)
        for i in range(0, len(doc), S)
    ]
