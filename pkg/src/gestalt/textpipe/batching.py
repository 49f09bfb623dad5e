"""Token-budget batch construction with sentence-count bucketing.

Streams are bucketed by sentence count, shuffled inside each bucket, and
dealt longest bucket first into a pre-allocated set of batches. Placement is
first-fit starting from a rotating cursor, so consecutive long streams land
in different batches instead of piling into the first one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import InputError


@dataclass
class BatchPlan:
    batches: list[list[int]]
    budget: int
    max_streams: int
    bucket_width: int = 5

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def build_batches(stream_sentences, stream_tokens, budget: int, max_streams: int,
                  bucket_width: int = 5, rng=None) -> BatchPlan:
    """Assign every stream index to exactly one batch.

    ``stream_sentences[i]`` is the sentence count of stream i (its graph
    depth) and ``stream_tokens[i]`` its lexical token count.
    """
    n_sent = np.asarray(stream_sentences, dtype=np.int64)
    toks = np.asarray(stream_tokens, dtype=np.int64)
    if n_sent.shape != toks.shape:
        raise InputError("stream_sentences and stream_tokens differ in length")
    if max_streams < 1 or bucket_width < 1:
        raise InputError("max_streams and bucket_width must be >= 1")
    if len(toks) == 0:
        return BatchPlan([], budget, max_streams, bucket_width)
    if toks.max() > budget:
        raise InputError(f"stream with {int(toks.max())} lexical tokens exceeds budget {budget}")
    rng = rng if rng is not None else np.random.default_rng(0)

    n_batches = max(1, math.ceil(int(toks.sum()) / budget))
    batches: list[list[int]] = [[] for _ in range(n_batches)]
    load = [0] * n_batches

    bucket_of = (n_sent - 1) // bucket_width
    cursor = 0
    for b in sorted(set(bucket_of.tolist()), reverse=True):
        members = np.flatnonzero(bucket_of == b)
        members = members[rng.permutation(len(members))]
        for i in members.tolist():
            t = int(toks[i])
            placed = None
            for k in range(len(batches)):
                j = (cursor + k) % len(batches)
                if load[j] + t <= budget and len(batches[j]) < max_streams:
                    placed = j
                    break
            if placed is None:
                open_ = [j for j in range(len(batches)) if len(batches[j]) < max_streams]
                if open_:
                    placed = min(open_, key=lambda j: (load[j], j))
                else:
                    batches.append([])
                    load.append(0)
                    placed = len(batches) - 1
            batches[placed].append(i)
            load[placed] += t
            cursor = (placed + 1) % len(batches)
    batches = [bt for bt in batches if bt]
    order = rng.permutation(len(batches))
    return BatchPlan([batches[j] for j in order], budget, max_streams, bucket_width)
