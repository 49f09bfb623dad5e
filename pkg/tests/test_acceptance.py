"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed together at the
end of the pytest run (see conftest.py) and also to stdout as they finish.
"""
import contextlib
import math
import time

import numpy as np
import pytest

import oracle
import test_autodiff as tad
from test_model import lively_params, loss3_and_leaves, rand_stream, small, step_logits
from test_textpipe import check_plan
from gestalt import autodiff as ad
from gestalt.eval.probe import CopyModel, UniformModel, reversal_probe
from gestalt.eval.scaling import effective_multiplier, fit_power_law, fitted_multiplier, ppl_to_nats
from gestalt.model import Mode, ModelConfig, baselines, count_nonembedding_params, init_params, run_streams
from gestalt.textpipe import EOS, build_batches, build_vocab, split_documents, tokenize_sentence
from gestalt.textpipe.pipeline import prepare
from gestalt.textpipe.synthetic import load_names, synthetic_corpus
from gestalt.training import TrainConfig, curriculum_S, dropout_warmin, eos_weight, lr_at, train

REPORT = []


@contextlib.contextmanager
def criterion(n, title):
    """Record PASS/FAIL for criterion ``n``; details can be appended to the
    yielded list."""
    info, t0, ok = [], time.time(), False
    try:
        yield info
        ok = True
    finally:
        detail = "; ".join(info)
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title} ({time.time() - t0:.1f}s)"
        line += f"  [{detail}]" if detail else ""
        REPORT.append((n, line))
        print(line)


# ------------------------------------------------------------ 1


def test_c01_gradient_suite():
    with criterion(1, "gradient checks: primitives and a 2-layer step at d=8") as info:
        t0 = time.time()
        rng = np.random.default_rng(1234)
        for fn in (tad.test_elementwise, tad.test_broadcasting_add_mul, tad.test_matmul_variants,
                   tad.test_masked_softmax, tad.test_fully_masked_row_is_zero, tad.test_layer_norm,
                   tad.test_gather_rows_repeated_ids, tad.test_shape_ops, tad.test_weighted_cross_entropy,
                   tad.test_dropout_with_fixed_rng):
            fn(rng)

        cfg = ModelConfig(vocab_size=23, n_layers=2, d_model=8, n_heads=2, L=5, M=2, sentence_layer=1,
                          dtype="float64")
        P = lively_params(cfg, 4)
        s = rand_stream(cfg, [3, 5], 2)

        def loss():
            return run_streams(P, [s], cfg, Mode(), 0.05)[0]

        g = ad.backward(loss(), P.values())
        worst = 0.0
        for p in P.values():
            worst = max(worst, ad.rel_error(g[p], ad.numerical_grad(lambda: loss().item(), p.data)))
        info.append(f"worst model rel err {worst:.1e}")
        assert worst < 1e-4
        assert time.time() - t0 < 60


# ------------------------------------------------------------ 2


def test_c02_memory_gradient_flow():
    with criterion(2, "memory gradient flows through writes; detach blocks it") as info:
        loss, W, delta = loss3_and_leaves("tg")
        g = ad.backward(loss(), [W, delta])
        for name, leaf in (("W_sent", W), ("sentence-1 emb", delta)):
            assert np.abs(g[leaf]).max() > 0
            err = ad.rel_error(g[leaf], ad.numerical_grad(lambda: loss().item(), leaf.data))
            info.append(f"{name} rel err {err:.1e}")
            assert err < 1e-3
        loss, W, delta = loss3_and_leaves("tg_detach")
        g = ad.backward(loss(), [W, delta])
        assert np.all(g[W] == 0) and np.all(g[delta] == 0)


# ------------------------------------------------------------ 3


def test_c03_parameter_counts():
    with criterion(3, "non-embedding parameter counts") as info:
        base = count_nonembedding_params(ModelConfig())
        stc = count_nonembedding_params(ModelConfig(variant="tg_self_then_cross"))
        info.append(f"tg {base / 1e6:.2f}M, self->cross {stc / 1e6:.2f}M")
        assert abs(base / 85.6e6 - 1) < 0.01
        assert abs(stc / 114e6 - 1) < 0.02
        rng = np.random.default_rng(5)
        variants = ["tg", "tg_detach", "tg_self_then_cross", "tg_parallel", "tg_incontext",
                    "tg_last_layer", "tg_no_seed", "gpt2", "gpt2_boundary", "gpt2_gist"]
        for _ in range(20):
            h, n = int(rng.integers(1, 4)), int(rng.integers(1, 7))
            cfg = ModelConfig(vocab_size=300, n_layers=n, d_model=h * int(rng.integers(1, 5)), n_heads=h,
                              ffn_mult=int(rng.integers(1, 5)), sentence_layer=int(rng.integers(1, n + 1)),
                              variant=str(rng.choice(variants)))
            assert count_nonembedding_params(cfg) == oracle.brute_param_count(cfg.to_dict())


# ------------------------------------------------------------ 4


def test_c04_cache_equivalence():
    with criterion(4, "cached memory K/V equals per-layer recomputation") as info:
        worst = 0.0
        for variant in ("tg", "tg_self_then_cross", "tg_parallel", "tg_incontext"):
            cfg = small(variant)
            P = lively_params(cfg)
            s = rand_stream(cfg, [5, 3, 8, 6])
            a, _ = step_logits(P, cfg, s.ids)
            b, _ = step_logits(P, cfg, s.ids, mode=Mode(recompute_kv=True))
            worst = max(worst, float(np.abs(a - b).max()))
        info.append(f"max |diff| {worst:.1e}")
        assert worst <= 1e-12


# ------------------------------------------------------------ 5


def test_c05_schedules():
    with criterion(5, "schedule constants"):
        assert (eos_weight(1), eos_weight(2)) == (1.0, 0.05)
        assert [curriculum_S(e) for e in (1, 5, 6, 11)] == [30, 30, 42, 54]
        assert [dropout_warmin(s) for s in (1999, 2000, 6999, 7000)] == [0, 0.5, 0.5, 1.0]
        total = 10_000
        assert lr_at(200, total, TrainConfig()) == pytest.approx(2.5e-4, abs=1e-15)
        assert max(lr_at(s, total, TrainConfig()) for s in range(total)) == pytest.approx(2.5e-4, abs=1e-15)


# ------------------------------------------------------------ 6


def test_c06_pipeline_invariants():
    with criterion(6, "tokenizer round-trip, T=67 layout, batch plan invariants") as info:
        text = synthetic_corpus(3200, seed=0)
        vocab = build_vocab([d.text for d in split_documents(text)], 8192)
        assert vocab.decode(vocab.encode(text)) == text
        info.append(f"{len(text)} chars round-tripped")
        assert len(tokenize_sentence("The son of Ann is Bob.", vocab).ids) == 67
        with pytest.raises(ad.InputError):
            tokenize_sentence("x" * 65, vocab.__class__())
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 80))
            sents = rng.integers(1, 60, n).tolist()
            toks = [int(s * rng.integers(3, 30)) for s in sents]
            budget = max(toks) + int(rng.integers(0, 3000))
            max_streams = int(rng.integers(1, 20))
            plan = build_batches(sents, toks, budget, max_streams, 5, np.random.default_rng(int(rng.integers(1 << 30))))
            check_plan(plan, sents, toks, budget, max_streams, 5)


# ------------------------------------------------------------ 7


@pytest.mark.slow
def test_c07_memory_beats_detached_twin():
    with criterion(7, "TG beats its detached twin by >= 2% validation PPL") as info:
        t0 = time.time()
        vocab, splits = prepare({"train": synthetic_corpus(3200, 0)}, 8192, 64, 0)
        n_tok = sum(d.n_tokens for d in splits["train"])
        ppl = {}
        for variant in ("tg", "tg_detach"):
            cfg = ModelConfig(vocab_size=vocab.size, n_layers=6, d_model=64, n_heads=4, M=40, sentence_layer=4,
                              variant=variant)
            tcfg = TrainConfig(peak_lr=2.5e-3, epochs_max=10, budget=4096, seed=0, patience=100)
            res = train(cfg, tcfg, splits["train"], splits["valid"], log_every=0, gate_every=0)
            ppl[variant] = res.best_val_ppl
            info.append(f"{variant} ppl {res.best_val_ppl:.3f} in {res.steps} steps")
        gap = 1 - ppl["tg"] / ppl["tg_detach"]
        minutes = (time.time() - t0) / 60
        info.append(f"{n_tok} train tokens, gap {100 * gap:.1f}%, {minutes:.1f} min")
        assert gap >= 0.02
        assert minutes < 30


# ------------------------------------------------------------ 8


TABLE_D = [(12e6, 50.9, 49.5), (20e6, 38.1, 37.1), (30e6, 30.9, 29.8), (50e6, 24.0, 23.2)]
TABLE_N = [(0.34e6, 104.8, 97.7), (1.3e6, 68.7, 59.8), (5.4e6, 42.4, 37.8), (21.3e6, 28.8, 26.8)]


def _fits(table):
    x = np.array([r[0] for r in table])
    gpt = fit_power_law(np.stack([x, ppl_to_nats([r[1] for r in table])], 1))
    tg = fit_power_law(np.stack([x, ppl_to_nats([r[2] for r in table])], 1))
    return x, gpt, tg


def test_c08_scaling_fit_tool():
    with criterion(8, "power-law fits and effective multipliers") as info:
        xs = np.geomspace(1e6, 1e9, 12)
        fit = fit_power_law(np.stack([xs, (3e4 / xs) ** 0.152], 1))
        assert abs(fit.alpha - 0.152) < 1e-6 and abs(fit.C / 3e4 - 1) < 1e-6
        rng = np.random.default_rng(7)
        for _ in range(20):
            y = (3e4 / xs) ** 0.152 * (1 + 0.01 * rng.normal(size=xs.size))
            noisy = fit_power_law(np.stack([xs, y], 1))
            assert abs(noisy.alpha / 0.152 - 1) < 0.02

        x, gpt, tg = _fits(TABLE_D)
        m_d = effective_multiplier(gpt, np.stack([x, ppl_to_nats([r[2] for r in TABLE_D])], 1))
        x, gpt, tg = _fits(TABLE_N)
        m_n = fitted_multiplier(gpt, tg, x)
        info.append(f"m_D {m_d.min():.3f}-{m_d.max():.3f}, m_N {m_n.min():.3f}-{m_n.max():.3f}")
        assert (round(m_d.min(), 2), round(m_d.max(), 2)) == (1.05, 1.08)
        assert (round(m_n.min(), 2), round(m_n.max(), 2)) == (1.33, 1.42)


# ------------------------------------------------------------ 9


def test_c09_reversal_probe_harness():
    with criterion(9, "reversal probe harness") as info:
        names = load_names()
        vocab = build_vocab([" ".join(names) * 3 + " The son of is father."], 1200)
        a = reversal_probe(CopyModel(vocab.size), vocab, names, n=300, seed=3)
        b = reversal_probe(CopyModel(vocab.size), vocab, names, n=300, seed=3)
        assert {k: v.row() for k, v in a.items()} == {k: v.row() for k, v in b.items()}
        u = reversal_probe(UniformModel(vocab.size), vocab, names, n=300, seed=3)
        for r in u.values():
            assert r.margin == 0
            assert r.nll_target == pytest.approx(math.log(vocab.size), abs=1e-12)
        info.append(f"copy oracle target NLL {a['normal'].nll_target:.1e}")
        assert a["normal"].nll_target < 1e-6


# ------------------------------------------------------------ 10


SMOKE_VARIANTS = ["gpt2", "gpt2_boundary", "tg_fixed_span_25", "tg_fixed_span_50", "tg_fixed_span_75",
                  "gpt2_gist", "tg_incontext", "tg_self_then_cross", "tg_parallel", "tg_last_layer",
                  "tg_no_seed"]


@pytest.mark.slow
def test_c10_baseline_matrix_smoke():
    with criterion(10, "every variant trains 100 steps; gist mask matches brute force") as info:
        vocab, splits = prepare({"train": synthetic_corpus(300, 0)}, 1200, 64, 0)
        drops = []
        for variant in SMOKE_VARIANTS:
            cfg = ModelConfig(vocab_size=vocab.size, n_layers=2, d_model=32, n_heads=2, M=8, sentence_layer=1,
                              variant=variant, ctx_len=256)
            tcfg = TrainConfig(peak_lr=3e-3, epochs_max=1000, max_steps=100, budget=1024, seed=0)
            res = train(cfg, tcfg, splits["train"], [], eval_every_epoch=False, log_every=0, gate_every=0)
            losses = [m["loss_nats"] for m in res.metrics if m["split"] == "train"]
            assert len(losses) == 100 and np.all(np.isfinite(losses)), variant
            first, last = np.mean(losses[:10]), np.mean(losses[-10:])
            assert last < first, variant
            drops.append(first - last)
        info.append(f"smallest loss drop {min(drops):.2f} nats")

        rng = np.random.default_rng(0)
        fixtures = [np.array([1, 5, 2, 1, 6, 2]), np.array([4, 5, 6, 7])]
        for _ in range(50):
            n = int(rng.integers(2, 30))
            fixtures.append(np.where(rng.random(n) < 0.25, EOS, rng.integers(4, 20, n)))
        for toks in fixtures:
            m = baselines.gist_mask(*baselines.sentence_index(toks))
            assert np.array_equal((m == 0).astype(int), oracle.brute_gist_mask(list(toks)))
