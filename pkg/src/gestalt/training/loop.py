"""Epoch loop: curriculum re-chunking, token-budget batches, one AdamW step
per batch, lexical validation perplexity, best-checkpoint tracking and
early stopping."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import autodiff as ad
from ..eval.perplexity import eval_perplexity, model_units, run_units, unit_size
from ..model.config import ModelConfig
from ..model.layers import Mode
from ..model.params import init_params
from ..rng import generator, sub_seed
from ..textpipe.batching import build_batches
from .optim import AdamW, clip_grad_norm
from .schedules import TrainConfig, curriculum_S, dropout_warmin, eos_weight, lr_at

log = logging.getLogger(__name__)

METRIC_FIELDS = ["epoch", "step", "sentence_step", "split", "loss_nats", "ppl_lexical", "lr", "S", "eos_w"]


class TrainingDiverged(RuntimeError):
    pass


class EarlyStopper:
    """Stop once ``patience`` consecutive epochs fail to beat the best
    perplexity by more than ``min_delta``."""

    def __init__(self, min_delta=0.1, patience=3):
        self.min_delta = min_delta
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, ppl: float) -> bool:
        if ppl < self.best - self.min_delta:
            self.best = ppl
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_val_ppl: float
    best_epoch: int
    metrics: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    steps: int = 0
    sentence_steps: int = 0
    stopped_early: bool = False
    seconds: float = 0.0
    model_cfg: ModelConfig | None = None


def effective_model_config(cfg: ModelConfig) -> ModelConfig:
    # the narrowest models train without token dropout
    if cfg.d_model < 96 and cfg.token_dropout > 0:
        return replace(cfg, token_dropout=0.0)
    return cfg


def plan_batches(units, tcfg: TrainConfig, rng):
    sizes = [unit_size(u) for u in units]
    budget = max(tcfg.budget, max(t for _, t in sizes))
    return build_batches([s for s, _ in sizes], [t for _, t in sizes], budget,
                         tcfg.max_streams, tcfg.bucket_width, rng)


def gate_values(params) -> dict[int, float]:
    out = {}
    for name, p in params.items():
        if name.endswith("cross.gate"):
            out[int(name.split(".")[0][1:])] = float(p.data)
        elif name.endswith("gate"):
            out[name] = float(p.data)
    return dict(sorted(out.items()))


def train(model_cfg: ModelConfig, tcfg: TrainConfig, train_docs, valid_docs, params=None,
          eval_every_epoch=True, gate_every=50, log_every=50, on_epoch=None) -> TrainResult:
    """Train from whole-document streams. Validation documents are never sliced."""
    start = time.time()
    model_cfg = effective_model_config(model_cfg)
    params = params if params is not None else init_params(model_cfg, sub_seed(tcfg.seed, "init") % 2**32)
    opt = AdamW(params, (tcfg.beta1, tcfg.beta2), tcfg.eps, tcfg.weight_decay)
    drop_rng = generator(tcfg.seed, "dropout")

    S = curriculum_S(1, tcfg)
    units = model_units(train_docs, model_cfg, S if model_cfg.is_tg else None)
    first_plan = plan_batches(units, tcfg, generator(tcfg.seed, "data", 0))
    total_steps = tcfg.epochs_max * max(1, len(first_plan))
    if tcfg.max_steps:
        total_steps = min(total_steps, tcfg.max_steps)

    res = TrainResult(params, {k: p.data.copy() for k, p in params.items()}, math.inf, 0,
                      model_cfg=model_cfg)
    stopper = EarlyStopper(tcfg.min_delta, tcfg.patience)
    step = sentence_step = 0
    for epoch in range(1, tcfg.epochs_max + 1):
        new_S = curriculum_S(epoch, tcfg)
        if model_cfg.is_tg and new_S != S:
            S = new_S
            units = model_units(train_docs, model_cfg, S)
        plan = first_plan if epoch == 1 else plan_batches(units, tcfg, generator(tcfg.seed, "data", epoch))
        w_eos = eos_weight(epoch, tcfg)
        for batch in plan:
            lr = lr_at(step, total_steps, tcfg)
            mode = Mode(training=True, rng=drop_rng,
                        dropout_scale=dropout_warmin(sentence_step, tcfg))
            loss, stats = run_units(params, [units[i] for i in batch], model_cfg, mode, w_eos)
            if loss is None:
                continue
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch} step {step} (lr={lr:.3g}, S={S})")
            grads = ad.backward(loss, leaves=params.values())
            named = {k: grads[p] for k, p in params.items()}
            clip_grad_norm(named, tcfg.grad_clip)
            opt.step(named, lr)
            for p in params.values():
                p.grad = None
            step += 1
            sentence_step += stats.sentence_steps
            ppl = math.exp(stats.lex_nll / stats.lex_count) if stats.lex_count else float("nan")
            res.metrics.append(dict(epoch=epoch, step=step, sentence_step=sentence_step, split="train",
                                    loss_nats=value, ppl_lexical=ppl, lr=lr, S=S, eos_w=w_eos))
            if gate_every and step % gate_every == 0:
                for layer, g in gate_values(params).items():
                    res.gates.append(dict(step=step, layer=layer, gate_value=g))
            if log_every and step % log_every == 0:
                log.info("epoch %d step %d loss %.4f ppl %.2f lr %.2e", epoch, step, value, ppl, lr)
            if tcfg.max_steps and step >= tcfg.max_steps:
                break
        res.steps, res.sentence_steps = step, sentence_step
        if eval_every_epoch and valid_docs:
            val = eval_perplexity(params, model_cfg, valid_docs)
            res.metrics.append(dict(epoch=epoch, step=step, sentence_step=sentence_step, split="valid",
                                    loss_nats=math.log(val), ppl_lexical=val, lr=lr_at(step, total_steps, tcfg),
                                    S=S, eos_w=w_eos))
            log.info("epoch %d valid ppl %.3f", epoch, val)
            if val < res.best_val_ppl:
                res.best_val_ppl, res.best_epoch = val, epoch
                res.best_params = {k: p.data.copy() for k, p in params.items()}
            stop = stopper.update(val)
            if on_epoch:
                on_epoch(epoch, res)
            if stop:
                res.stopped_early = True
                break
        if tcfg.max_steps and step >= tcfg.max_steps:
            break
    res.seconds = time.time() - start
    return res


def write_csv(path, rows, fields):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})


def write_metrics(path, result: TrainResult):
    write_csv(path, result.metrics, METRIC_FIELDS)


def write_gate_trace(path, result: TrainResult):
    write_csv(path, result.gates, ["step", "layer", "gate_value"])


def params_from_arrays(arrays: dict, like: dict):
    return {k: ad.Tensor(np.array(arrays[k]), requires_grad=True, name=k) for k in like}
