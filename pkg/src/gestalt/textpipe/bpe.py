"""Byte-level BPE vocabulary with reserved boundary ids."""
from __future__ import annotations

import hashlib
import heapq
import re
from collections import Counter, defaultdict
from pathlib import Path

from ..autodiff import InputError

PAD, BOS, EOS, EOD = 0, 1, 2, 3
SPECIALS = {"<PAD>": PAD, "<BOS>": BOS, "<EOS>": EOS, "<EOD>": EOD}
N_RESERVED = 4
BYTE_OFFSET = N_RESERVED
BASE_SIZE = N_RESERVED + 256

# every character falls in exactly one alternative, so chunks re-join losslessly
_CHUNK_RE = re.compile(
    r"'(?:[sdmt]|ll|ve|re)| ?[^\W\d_]+| ?\d+| ?(?:[^\s\w]|_)+|\s+(?!\S)|\s+"
)


def pretokenize(text: str) -> list[str]:
    return _CHUNK_RE.findall(text)


class Vocab:
    """Ids 0-3 are PAD/BOS/EOS/EOD, 4-259 are raw bytes, then one id per merge."""

    def __init__(self, merges: list[tuple[int, int]] | None = None):
        self.merges = list(merges or [])
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.pieces: list[bytes] = [b""] * N_RESERVED + [bytes([b]) for b in range(256)]
        for a, b in self.merges:
            self.pieces.append(self.pieces[a] + self.pieces[b])
        self._cache: dict[str, list[int]] = {}

    @property
    def size(self) -> int:
        return BASE_SIZE + len(self.merges)

    def __len__(self):
        return self.size

    def _encode_chunk(self, chunk: str) -> list[int]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        ids = [b + BYTE_OFFSET for b in chunk.encode("utf-8")]
        ranks = self.ranks
        while len(ids) > 1:
            best, best_rank = None, None
            for pair in zip(ids, ids[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            new_id = BASE_SIZE + best_rank
            out, i = [], 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == best[0] and ids[i + 1] == best[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        if len(self._cache) < 200_000:
            self._cache[chunk] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for chunk in pretokenize(text):
            out.extend(self._encode_chunk(chunk))
        return out

    def decode_bytes(self, ids) -> bytes:
        return b"".join(self.pieces[int(i)] for i in ids)

    def decode(self, ids) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    def is_lexical(self, token_id: int) -> bool:
        return token_id >= N_RESERVED

    def fingerprint(self) -> int:
        """Stable 64-bit hash of the merge list."""
        h = hashlib.sha256()
        for a, b in self.merges:
            h.update(f"{a} {b}\n".encode())
        return int.from_bytes(h.digest()[:8], "little")

    def save(self, path):
        lines = ["#tg-vocab 1"]
        lines += [f"reserved {name} {idx}" for name, idx in SPECIALS.items()]
        lines += [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        merges = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "reserved":
                if SPECIALS.get(parts[1]) != int(parts[2]):
                    raise InputError(f"vocab file declares {parts[1]}={parts[2]}, expected {SPECIALS.get(parts[1])}")
                continue
            merges.append((int(parts[0]), int(parts[1])))
        return cls(merges)


def build_vocab(train_texts, target_size: int = 8192) -> Vocab:
    """Learn byte-level merges by greedy most-frequent-pair merging.

    Ties break on the smaller pair so two builds over the same input agree.
    Training stops early once no adjacent pair is left to merge.
    """
    if target_size < BASE_SIZE:
        raise InputError(f"target_size must be >= {BASE_SIZE} (bytes + reserved ids)")
    counts: Counter[str] = Counter()
    for text in train_texts:
        counts.update(pretokenize(text))
    if not counts:
        raise InputError("build_vocab needs non-empty training text")

    words = [[b + BYTE_OFFSET for b in w.encode("utf-8")] for w in counts]
    freqs = list(counts.values())
    pair_counts: dict[tuple[int, int], int] = defaultdict(int)
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for wi, ids in enumerate(words):
        for pair in zip(ids, ids[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[int, int]] = []
    while len(merges) < target_size - BASE_SIZE and heap:
        negc, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -negc or negc == 0:
            continue
        new_id = BASE_SIZE + len(merges)
        merges.append(pair)
        touched: dict[tuple[int, int], int] = {}
        for wi in sorted(where.pop(pair, ())):
            ids, f = words[wi], freqs[wi]
            for p in zip(ids, ids[1:]):
                pair_counts[p] -= f
                touched[p] = pair_counts[p]
            out, i = [], 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == pair[0] and ids[i + 1] == pair[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_counts[p] += f
                where[p].add(wi)
                touched[p] = pair_counts[p]
        pair_counts.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0 and p != pair:
                heapq.heappush(heap, (-c, p))
            elif c <= 0:
                pair_counts.pop(p, None)
    return Vocab(merges)
