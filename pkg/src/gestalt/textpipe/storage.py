"""Binary prepared-data files (one per split).

Header: magic ``TGDS``, version u32, vocab fingerprint u64, L u32, T u32.
Then per stream: doc_id u32, n_sentences u16, n*T token ids u16,
n n_lex u8, n is_final u8. Everything little-endian.
"""
from __future__ import annotations

import struct

import numpy as np

from ..autodiff import InputError
from .bpe import EOD
from .tensors import SentenceStream, tensor_length

MAGIC = b"TGDS"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")
_REC = struct.Struct("<IH")


def write_streams(path, streams, vocab_hash: int, L: int):
    T = tensor_length(L)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, vocab_hash, L, T))
        for s in streams:
            if s.ids.shape[1] != T:
                raise InputError(f"stream width {s.ids.shape[1]} != T={T}")
            if s.ids.max(initial=0) > 0xFFFF:
                raise InputError("token id does not fit u16")
            f.write(_REC.pack(s.doc_id, len(s)))
            f.write(s.ids.astype("<u2").tobytes())
            f.write(s.n_lex.astype(np.uint8).tobytes())
            f.write(s.is_final.astype(np.uint8).tobytes())


def read_streams(path, split="train"):
    """Returns (header dict, list of SentenceStream)."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, vhash, L, T = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise InputError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    streams = []
    while off < len(buf):
        doc_id, n = _REC.unpack_from(buf, off)
        off += _REC.size
        ids = np.frombuffer(buf, dtype="<u2", count=n * T, offset=off).astype(np.int64).reshape(n, T)
        off += 2 * n * T
        n_lex = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).astype(np.int64)
        off += n
        fin = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).astype(bool)
        off += n
        if not np.array_equal(fin, ids[:, -2] == EOD):
            raise InputError(f"{path}: is_final flags disagree with EOD slots (doc {doc_id})")
        streams.append(SentenceStream(ids, n_lex, doc_id, split))
    return {"vocab_hash": vhash, "L": L, "T": T, "version": version}, streams
