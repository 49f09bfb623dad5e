"""Command-line entry point.

    gestalt <command> [--config FILE] [--key value ...]

Config files are flat ``key = value`` lines with ``#`` comments. A run
manifest (JSON written by any command) is also accepted as a config, so a
manifest alone reproduces its run.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import InputError, Tensor
from .eval import probe as probe_mod
from .eval import scaling
from .eval.perplexity import eval_perplexity
from .model.config import VARIANTS, ModelConfig
from .model.params import count_nonembedding_params, load_checkpoint, save_checkpoint
from .rng import sub_seed
from .textpipe.bpe import Vocab
from .textpipe.pipeline import prepare, worker_count
from .textpipe.storage import read_streams, write_streams
from .textpipe.synthetic import load_names, synthetic_corpus
from .textpipe.tensors import slice_streams
from .training.loop import train, write_gate_trace, write_metrics
from .training.schedules import TrainConfig

log = logging.getLogger("gestalt")

SPLITS = ("train", "valid", "test")
COMMANDS = ("prep", "train", "eval", "probe", "fit-scaling", "count-params", "rechunk")

# keys that are not part of the model or training configs
RUN_DEFAULTS = {
    "corpus": "",              # single corpus file, split by document
    "corpus_train": "",        # or one file per split
    "corpus_valid": "",
    "corpus_test": "",
    "synthetic_docs": 0,       # > 0: generate a templated family corpus instead
    "target_vocab": 8192,
    "valid_frac": 0.05,
    "test_frac": 0.05,
    "data_dir": "prepared",
    "out_dir": "runs/default",
    "checkpoint": "",
    "eval_split": "test",
    "probe_n": 1000,
    "scaling_csv": "",
    "scaling_ref_csv": "",
    "rechunk_S": 0,
}


class ConfigError(Exception):
    def __init__(self, key, msg):
        super().__init__(msg)
        self.key = key


def _defaults():
    out = dict(RUN_DEFAULTS)
    out.update({f.name: f.default for f in fields(ModelConfig)})
    out.update({f.name: f.default for f in fields(TrainConfig)})
    return out


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return list(raw) if isinstance(default, tuple) else raw
    s = raw.strip()
    try:
        if isinstance(default, bool):
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(float(s)) if "e" in s.lower() else int(s)
        if isinstance(default, float):
            return float(s)
        if isinstance(default, tuple):
            return [int(x) for x in s.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None
    return s


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {path}")
    text = p.read_text()
    if text.lstrip().startswith("{"):
        return dict(json.loads(text)["config"])
    return parse_config_text(text)


def parse_overrides(tokens) -> dict:
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(tok, "expected --key value")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(key, "missing value")
            val = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = val
    return out


def resolve(config_path=None, overrides=None) -> dict:
    """Defaults <- config file <- overrides, with every key validated."""
    defaults = _defaults()
    merged = dict(defaults)
    for source in (load_config_file(config_path) if config_path else {}, overrides or {}):
        for k, v in source.items():
            if k not in defaults:
                raise ConfigError(k, "unknown config key")
            merged[k] = _coerce(k, v, defaults[k])
    if merged["variant"] not in VARIANTS and not str(merged["variant"]).startswith("tg_fixed_span_"):
        raise ConfigError("variant", f"invalid variant {merged['variant']!r}")
    return merged


def model_config(cfg: dict, **over) -> ModelConfig:
    d = {f.name: cfg[f.name] for f in fields(ModelConfig)}
    d.update(over)
    try:
        return ModelConfig(**d)
    except InputError as e:
        raise ConfigError("model", str(e)) from None


def train_config(cfg: dict) -> TrainConfig:
    d = {f.name: cfg[f.name] for f in fields(TrainConfig)}
    d["warmin_steps"] = tuple(d["warmin_steps"])
    return TrainConfig(**d)


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    return v


def write_manifest(out_dir, command, cfg, extra=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man = {"command": command, "version": __version__, "seed": cfg["seed"],
           "sub_seeds": {n: sub_seed(cfg["seed"], n) for n in ("data", "init", "dropout", "probe")},
           "threads": worker_count(),
           "config": {k: _jsonable(v) for k, v in sorted(cfg.items())}}
    if extra:
        man.update(extra)
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def write_summary(out_dir, command, summary):
    path = Path(out_dir) / f"summary_{command}.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return path


def _need(path, key):
    if not path or not Path(path).exists():
        raise ConfigError(key, f"file not found: {path or '(unset)'}")
    return Path(path)


# -------------------------------------------------------------- commands


def cmd_prep(cfg):
    if cfg["synthetic_docs"] > 0:
        texts = {"train": synthetic_corpus(cfg["synthetic_docs"], sub_seed(cfg["seed"], "data") % 2**32)}
    elif cfg["corpus"]:
        texts = {"train": _need(cfg["corpus"], "corpus").read_text(encoding="utf-8")}
    else:
        texts = {s: _need(cfg[f"corpus_{s}"], f"corpus_{s}").read_text(encoding="utf-8") for s in SPLITS}
    vocab, streams = prepare(texts, cfg["target_vocab"], cfg["L"], sub_seed(cfg["seed"], "data") % 2**32,
                             cfg["valid_frac"], cfg["test_frac"])
    out = Path(cfg["data_dir"])
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    summary = {"vocab_size": vocab.size, "vocab_hash": vocab.fingerprint()}
    for split, docs in streams.items():
        write_streams(out / f"{split}.tgds", docs, vocab.fingerprint(), cfg["L"])
        summary[f"n_docs_{split}"] = len(docs)
        summary[f"n_tokens_{split}"] = int(sum(d.n_tokens for d in docs))
    write_manifest(out, "prep", cfg)
    write_summary(out, "prep", summary)
    return 0


def load_prepared(cfg, splits=SPLITS):
    data = Path(cfg["data_dir"])
    vocab = Vocab.load(_need(data / "vocab.txt", "data_dir"))
    out = {}
    for split in splits:
        header, docs = read_streams(_need(data / f"{split}.tgds", "data_dir"), split)
        if header["vocab_hash"] != vocab.fingerprint():
            raise ConfigError("data_dir", f"{split}.tgds was built with a different vocabulary")
        if header["L"] != cfg["L"]:
            raise ConfigError("L", f"prepared data has L={header['L']}, config has L={cfg['L']}")
        out[split] = docs
    return vocab, out


def _checkpoint_path(cfg):
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out_dir"]) / "best.tgck"


def cmd_train(cfg):
    vocab, data = load_prepared(cfg)
    mcfg = model_config(cfg, vocab_size=vocab.size)
    tcfg = train_config(cfg)
    out = Path(cfg["out_dir"])
    write_manifest(out, "train", cfg)
    res = train(mcfg, tcfg, data["train"], data["valid"])
    best = {k: Tensor(res.best_params[k], requires_grad=True, name=k) for k in res.params}
    save_checkpoint(_checkpoint_path(cfg), res.model_cfg, best,
                    extra={"best_epoch": res.best_epoch, "vocab_hash": vocab.fingerprint()})
    write_metrics(out / "metrics.csv", res)
    write_gate_trace(out / "gates.csv", res)
    ppl_test = eval_perplexity(best, res.model_cfg, data["test"]) if data["test"] else float("nan")
    write_summary(out, "train", {
        "variant": mcfg.variant, "ppl_valid": res.best_val_ppl, "ppl_test": ppl_test,
        "best_epoch": res.best_epoch, "steps": res.steps, "stopped_early": res.stopped_early,
        "n_nonembed": count_nonembedding_params(mcfg), "seconds": round(res.seconds, 2)})
    return 0


def _load_model(cfg):
    mcfg, params, _, extra = load_checkpoint(_need(_checkpoint_path(cfg), "checkpoint"))
    return mcfg, params, extra


def cmd_eval(cfg):
    split = cfg["eval_split"]
    if split not in SPLITS:
        raise ConfigError("eval_split", f"expected one of {SPLITS}")
    _, data = load_prepared(cfg, (split,))
    mcfg, params, _ = _load_model(cfg)
    ppl = eval_perplexity(params, mcfg, data[split])
    write_manifest(cfg["out_dir"], "eval", cfg)
    write_summary(cfg["out_dir"], "eval", {f"ppl_{split}": ppl, "variant": mcfg.variant,
                                           "n_nonembed": count_nonembedding_params(mcfg)})
    return 0


def cmd_probe(cfg):
    vocab = Vocab.load(_need(Path(cfg["data_dir"]) / "vocab.txt", "data_dir"))
    mcfg, params, _ = _load_model(cfg)
    model = probe_mod.adapter_for(params, mcfg)
    results = probe_mod.reversal_probe(model, vocab, load_names(), cfg["probe_n"],
                                       sub_seed(cfg["seed"], "probe") % 2**32)
    out = Path(cfg["out_dir"])
    write_manifest(out, "probe", cfg)
    probe_mod.write_probe_csv(out / "probe.csv", results)
    write_summary(out, "probe", {c: r.row() for c, r in results.items()})
    return 0


def cmd_fit_scaling(cfg):
    pts = scaling.read_points(_need(cfg["scaling_csv"], "scaling_csv"))
    fit = scaling.fit_power_law(pts)
    summary = {"alpha": fit.alpha, "C": fit.C, "residual": fit.residual, "n_points": fit.n_points}
    if cfg["scaling_ref_csv"]:
        ref = scaling.fit_power_law(scaling.read_points(_need(cfg["scaling_ref_csv"], "scaling_ref_csv")))
        xs = [x for x, _ in pts]
        summary["multiplier_achieved"] = scaling.effective_multiplier(ref, pts).tolist()
        summary["multiplier_fitted"] = scaling.fitted_multiplier(ref, fit, xs).tolist()
        summary["ref_alpha"], summary["ref_C"] = ref.alpha, ref.C
    print(f"alpha = {fit.alpha:.6g}  C = {fit.C:.6g}  residual = {fit.residual:.3g}")
    write_manifest(cfg["out_dir"], "fit-scaling", cfg)
    write_summary(cfg["out_dir"], "fit-scaling", summary)
    return 0


def cmd_count_params(cfg):
    mcfg = model_config(cfg)
    n = count_nonembedding_params(mcfg)
    print(f"{mcfg.variant}: {n} non-embedding parameters ({n / 1e6:.1f}M)")
    write_manifest(cfg["out_dir"], "count-params", cfg)
    write_summary(cfg["out_dir"], "count-params", {"variant": mcfg.variant, "n_nonembed": n})
    return 0


def cmd_rechunk(cfg):
    S = cfg["rechunk_S"]
    if S < 1:
        raise ConfigError("rechunk_S", "must be >= 1")
    vocab, data = load_prepared(cfg, ("train",))
    chunks = [s for doc in data["train"] for s in slice_streams(doc, S)]
    path = Path(cfg["data_dir"]) / f"train_S{S}.tgds"
    write_streams(path, chunks, vocab.fingerprint(), cfg["L"])
    write_manifest(cfg["data_dir"], "rechunk", cfg)
    write_summary(cfg["data_dir"], "rechunk", {"S": S, "n_streams": len(chunks), "path": str(path)})
    return 0


HANDLERS = {"prep": cmd_prep, "train": cmd_train, "eval": cmd_eval, "probe": cmd_probe,
            "fit-scaling": cmd_fit_scaling, "count-params": cmd_count_params, "rechunk": cmd_rechunk}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gestalt", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", "-c", help="key = value config file or a JSON manifest")
    ap.add_argument("--verbose", "-v", action="store_true")
    args, rest = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve(args.config, parse_overrides(rest))
        return HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"error: config key '{e.key}': {e}", file=sys.stderr)
        return 2
    except (InputError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
