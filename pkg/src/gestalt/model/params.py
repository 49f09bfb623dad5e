"""Parameter allocation, exact non-embedding counts and checkpoint files."""
from __future__ import annotations

import json
import struct

import numpy as np

from ..autodiff import InputError, Tensor
from .config import ModelConfig

EMBEDDING_NAMES = ("tok_emb", "pos_emb")
_ATTN = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map for every allocated array."""
    d, f = cfg.d_model, cfg.ffn_mult * cfg.d_model
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.n_positions, d),
    }

    def attn(prefix, with_norm=True):
        if with_norm:
            shapes[f"{prefix}.ln_g"] = (d,)
            shapes[f"{prefix}.ln_b"] = (d,)
        for name in _ATTN:
            shapes[f"{prefix}.{name}"] = (d, d) if name[0] == "w" else (d,)

    for i, blocks in enumerate(cfg.layer_plan(), start=1):
        for kind in blocks:
            if kind in ("self", "self_prefix"):
                attn(f"l{i}.self")
            elif kind == "cross":
                attn(f"l{i}.cross")
                shapes[f"l{i}.cross.gate"] = ()
            elif kind == "parallel":
                shapes[f"l{i}.par.ln_g"] = (d,)
                shapes[f"l{i}.par.ln_b"] = (d,)
                attn(f"l{i}.self", with_norm=False)
                attn(f"l{i}.cross", with_norm=False)
                shapes[f"l{i}.cross.gate"] = ()
            elif kind == "ffn":
                shapes[f"l{i}.ffn.ln_g"] = (d,)
                shapes[f"l{i}.ffn.ln_b"] = (d,)
                shapes[f"l{i}.ffn.w1"] = (d, f)
                shapes[f"l{i}.ffn.b1"] = (f,)
                shapes[f"l{i}.ffn.w2"] = (f, d)
                shapes[f"l{i}.ffn.b2"] = (d,)
    if cfg.is_tg:
        for j in range(cfg.sentence_head_depth - 1):
            shapes[f"sent.w{j}"] = (d, d)
            shapes[f"sent.b{j}"] = (d,)
        shapes["sent.w"] = (d, d)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    return shapes


def count_nonembedding_params(cfg: ModelConfig) -> int:
    """Closed-form count of every parameter except token/position tables."""
    d, f = cfg.d_model, cfg.ffn_mult * cfg.d_model
    attn = 4 * d * d + 4 * d
    norm = 2 * d
    ffn = norm + d * f + f + f * d + d
    per_kind = {
        "self": norm + attn,
        "self_prefix": norm + attn,
        "cross": norm + attn + 1,
        "parallel": norm + 2 * attn + 1,
        "ffn": ffn,
    }
    total = sum(per_kind[k] for blocks in cfg.layer_plan() for k in blocks)
    if cfg.is_tg:
        total += (cfg.sentence_head_depth - 1) * (d * d + d) + d * d
    return total + norm


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith("gate"):
            data = np.full(shape, cfg.gate_init)
        elif leaf in ("ln_g", "g"):
            data = np.ones(shape)
        elif leaf in ("ln_b",) or leaf.startswith("b") or name == "ln_f.b":
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return params


def no_decay(name: str) -> bool:
    """Gates, norm parameters and biases are excluded from weight decay."""
    leaf = name.rsplit(".", 1)[-1]
    return name.endswith("gate") or leaf in ("ln_g", "ln_b", "g", "b") or leaf.startswith("b")


# --------------------------------------------------------------- checkpoint

MAGIC = b"TGCK"
VERSION = 1


def save_checkpoint(path, cfg: ModelConfig, params, opt_state=None, extra=None):
    """Header: magic, version u32, config JSON (u32 length + bytes), optimizer
    flag u8; then named float32 arrays (name, rank, extents, values)."""
    meta = {"model": cfg.to_dict(), "extra": extra or {}}
    blob = json.dumps(meta, sort_keys=True).encode()
    arrays = {k: v.data for k, v in params.items()}
    if opt_state is not None:
        for k, v in opt_state.get("m", {}).items():
            arrays[f"adam_m/{k}"] = v
        for k, v in opt_state.get("v", {}).items():
            arrays[f"adam_v/{k}"] = v
        arrays["adam_t"] = np.asarray(float(opt_state.get("t", 0)))
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(blob)) + blob)
        f.write(struct.pack("<B", 1 if opt_state is not None else 0))
        for name, arr in arrays.items():
            nb = name.encode()
            arr = np.asarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (ModelConfig, params, opt_state or None, extra)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", buf, 8)
    meta = json.loads(buf[12:12 + n])
    off = 12 + n
    has_opt = buf[off]
    off += 1
    cfg = ModelConfig.from_dict(meta["model"])
    dtype = np.dtype(cfg.dtype)
    arrays = {}
    while off < len(buf):
        (ln,) = struct.unpack_from("<I", buf, off)
        name = buf[off + 4:off + 4 + ln].decode()
        off += 4 + ln
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
    params = {k: Tensor(v.astype(dtype), requires_grad=True, name=k)
              for k, v in arrays.items() if not k.startswith("adam")}
    opt = None
    if has_opt:
        opt = {"m": {k[7:]: v.astype(dtype) for k, v in arrays.items() if k.startswith("adam_m/")},
               "v": {k[7:]: v.astype(dtype) for k, v in arrays.items() if k.startswith("adam_v/")},
               "t": int(arrays["adam_t"])}
    return cfg, params, opt, meta.get("extra", {})
