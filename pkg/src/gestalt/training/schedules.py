from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from ..autodiff import InputError


@dataclass
class TrainConfig:
    peak_lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_frac: float = 0.02
    grad_clip: float = 1.0
    epochs_max: int = 40
    max_steps: int = 0                 # 0: no cap
    S0: int = 30
    S_step: int = 12
    S_every: int = 5
    curriculum: bool = True
    S_fixed: int = 40                  # used when curriculum is off
    eos_w_warm: float = 1.0
    eos_w_after: float = 0.05
    eos_downweight: bool = True
    warmin_steps: tuple = (2000, 7000)
    min_delta: float = 0.1
    patience: int = 3
    budget: int = 8192
    max_streams: int = 64
    bucket_width: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.warmin_steps, str):
            self.warmin_steps = tuple(int(x) for x in self.warmin_steps.replace(",", " ").split())
        self.warmin_steps = tuple(self.warmin_steps)
        if not 0.0 < self.warmup_frac < 1.0:
            raise InputError("warmup_frac must lie in (0, 1)")
        if self.patience < 1:
            raise InputError("patience must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["warmin_steps"] = list(self.warmin_steps)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown TrainConfig key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warm-up over the first ``warmup_frac`` of steps, then cosine to 0."""
    if total_steps <= 0:
        raise InputError("total_steps must be positive")
    step = min(max(step, 0), total_steps)
    warm = cfg.warmup_frac * total_steps
    if step < warm:
        return cfg.peak_lr * step / warm
    progress = (step - warm) / max(total_steps - warm, 1e-12)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def eos_weight(epoch: int, cfg: TrainConfig | None = None) -> float:
    cfg = cfg or TrainConfig()
    if epoch < 1:
        raise InputError("epochs are 1-based")
    if not cfg.eos_downweight:
        return cfg.eos_w_warm
    return cfg.eos_w_warm if epoch == 1 else cfg.eos_w_after


def curriculum_S(epoch: int, cfg: TrainConfig | None = None) -> int:
    cfg = cfg or TrainConfig()
    if epoch < 1:
        raise InputError("epochs are 1-based")
    if not cfg.curriculum:
        return cfg.S_fixed
    return cfg.S0 + cfg.S_step * ((epoch - 1) // cfg.S_every)


def dropout_warmin(sentence_step: int, cfg: TrainConfig | None = None) -> float:
    """0 before the first threshold, 0.5 until the second, then 1."""
    cfg = cfg or TrainConfig()
    first, second = cfg.warmin_steps
    if sentence_step < first:
        return 0.0
    if sentence_step < second:
        return 0.5
    return 1.0
