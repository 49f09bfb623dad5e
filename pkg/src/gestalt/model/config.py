from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..autodiff import InputError

TG_VARIANTS = (
    "tg", "tg_fixed_span", "tg_detach", "tg_incontext", "tg_self_then_cross",
    "tg_parallel", "tg_last_layer", "tg_no_seed",
)
DECODER_VARIANTS = ("gpt2", "gpt2_boundary", "gpt2_gist")
VARIANTS = TG_VARIANTS + DECODER_VARIANTS
FIXED_SPANS = (25, 50, 75)


@dataclass
class ModelConfig:
    vocab_size: int = 8192
    n_layers: int = 12
    d_model: int = 768
    n_heads: int = 12
    ffn_mult: int = 4
    L: int = 64
    M: int = 40
    sentence_layer: int = 7
    sentence_head_depth: int = 1
    variant: str = "tg"
    span: int = 0
    ctx_len: int = 1024
    token_dropout: float = 0.15
    sentence_dropout: float = 0.15
    attn_dropout: float = 0.2
    head_dropout: float = 0.1
    gate_init: float = 1.0
    ln_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        v = self.variant
        if v.startswith("tg_fixed_span_"):
            self.span = int(v.rsplit("_", 1)[1])
            self.variant = v = "tg_fixed_span"
        if v not in VARIANTS:
            raise InputError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")
        if v == "tg_fixed_span" and self.span < 1:
            raise InputError("tg_fixed_span needs span >= 1")
        if self.d_model % self.n_heads:
            raise InputError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.is_tg and not 1 <= self.sentence_layer <= self.n_layers:
            raise InputError(f"sentence_layer must lie in [1, {self.n_layers}]")
        if self.is_tg and self.M < 1:
            raise InputError("sentence-memory variants need M >= 1")
        if self.sentence_head_depth < 1:
            raise InputError("sentence_head_depth must be >= 1")

    @property
    def is_tg(self) -> bool:
        return self.variant in TG_VARIANTS

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def L_eff(self) -> int:
        return max(self.L, self.span) if self.variant == "tg_fixed_span" else self.L

    @property
    def T(self) -> int:
        return 1 + self.L_eff + 2

    @property
    def n_positions(self) -> int:
        return self.T if self.is_tg else self.ctx_len

    @property
    def extract_layer(self) -> int:
        return self.n_layers if self.variant == "tg_last_layer" else self.sentence_layer

    @property
    def seeding(self) -> bool:
        return self.is_tg and self.variant != "tg_no_seed"

    def layer_plan(self) -> list[tuple[str, ...]]:
        """Sub-blocks of each layer, in order; every layer ends with its FFN."""
        v = self.variant
        plan = []
        for layer in range(1, self.n_layers + 1):
            if not self.is_tg:
                plan.append(("self", "ffn"))
            elif v == "tg_self_then_cross":
                plan.append(("self", "cross", "ffn"))
            elif v == "tg_parallel":
                plan.append(("parallel", "ffn"))
            elif v == "tg_incontext":
                plan.append(("self_prefix", "ffn"))
            else:
                plan.append(("cross", "ffn") if layer % 2 == 0 else ("self", "ffn"))
        return plan

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown ModelConfig key(s): {', '.join(sorted(unknown))}")
        return cls(**d)
