import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gestalt.autodiff import InputError
from gestalt.textpipe import (
    BOS, EOD, EOS, PAD, SentenceStream, Vocab, build_batches, build_vocab, document_stream,
    sentence_targets, slice_streams, split_documents, split_sentences, target_weights,
    tokenize_sentence,
)
from gestalt.textpipe.pipeline import documents_to_streams, prepare
from gestalt.textpipe.storage import read_streams, write_streams
from gestalt.textpipe.synthetic import load_names, synthetic_corpus

BYTES = Vocab()  # no merges: one token per byte


@pytest.fixture(scope="module")
def corpus_vocab():
    text = synthetic_corpus(300, seed=3)
    docs = split_documents(text)
    return text, docs, build_vocab([d.text for d in docs], 600)


# ------------------------------------------------------------ documents


def test_two_headings_two_documents():
    docs = split_documents(" = Alpha = \nbody a\n = Beta = \nbody b\n")
    assert [d.title for d in docs] == ["Alpha", "Beta"]
    assert docs[0].text.strip() == "body a"


def test_nested_headings_do_not_split():
    text = " = Top = \nintro line\n = = Section = = \n== Other ==\nmore text\n"
    docs = split_documents(text)
    assert len(docs) == 1
    assert "Section" in docs[0].text and "Other" in docs[0].text


def test_heading_free_text_and_preamble():
    assert len(split_documents("just some text\nmore\n")) == 1
    docs = split_documents("preamble\n = T = \nbody\n")
    assert [d.title for d in docs] == ["", "T"]
    assert split_documents("") == []


# ------------------------------------------------------------ sentences


def test_simple_sentence_split():
    assert split_sentences("A. B.", 64, BYTES) == ["A.", "B."]


def test_abbreviation_guard():
    out = split_sentences("Dr. Smith arrived. He sat down.", 64, BYTES)
    assert out == ["Dr. Smith arrived.", "He sat down."]


def test_comma_fallback_split():
    text = "w" * 50 + ", " + "v" * 48  # 100 byte tokens
    out = split_sentences(text, 64, BYTES)
    assert out == ["w" * 50 + ",", "v" * 48]
    assert all(len(BYTES.encode(s)) <= 64 for s in out)


def test_hard_split_without_punctuation():
    out = split_sentences("x" * 130, 64, BYTES)
    assert [len(BYTES.encode(s)) for s in out] == [64, 64, 2]


def test_cap_below_minimum_rejected():
    with pytest.raises(ValueError):
        split_sentences("A. B.", 7, BYTES)


@settings(max_examples=40, deadline=None)
@given(st.text(alphabet="abc ,.;XY7é", min_size=1, max_size=300), st.integers(8, 40))
def test_sentences_respect_cap(text, cap):
    for s in split_sentences(text, cap, BYTES):
        assert 1 <= len(BYTES.encode(s)) <= cap


# ------------------------------------------------------------ tokenizer


def test_aaaa_merge_trace():
    v = build_vocab(["aaaa"], 261)
    a = ord("a") + 4
    assert v.merges == [(a, a)]
    assert v.encode("aaaa") == [260, 260]


def test_vocab_size_floor():
    with pytest.raises(InputError):
        build_vocab(["abc"], 259)


def test_build_is_deterministic(corpus_vocab):
    _, docs, v = corpus_vocab
    assert build_vocab([d.text for d in docs], 600).merges == v.merges


def test_reserved_ids_never_emitted(corpus_vocab):
    text, _, v = corpus_vocab
    assert min(v.encode(text[:20000])) >= 4


def test_round_trip_full_desk_corpus():
    text = synthetic_corpus(3200, seed=0)
    docs = split_documents(text)
    v = build_vocab([d.text for d in docs], 1024)
    assert v.decode(v.encode(text)) == text


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=200))
def test_round_trip_arbitrary_unicode(s):
    v = build_vocab(["hello world, hello there. the theme"], 300)
    assert v.decode(v.encode(s)) == s


def test_vocab_file_round_trip(tmp_path, corpus_vocab):
    _, _, v = corpus_vocab
    v.save(tmp_path / "v.txt")
    w = Vocab.load(tmp_path / "v.txt")
    assert w.merges == v.merges and w.fingerprint() == v.fingerprint()


# ------------------------------------------------------------ layout


def test_short_sentence_layout():
    s = tokenize_sentence("abc", BYTES, 64, is_final=False)
    assert len(s.ids) == 67 and s.n_lex == 3
    assert s.ids[0] == BOS and s.ids[66] == EOS
    assert np.all(s.ids[4:66] == PAD)
    assert list(s.pad_mask.nonzero()[0]) == [0, 1, 2, 3, 66]


def test_full_final_sentence_layout():
    s = tokenize_sentence("y" * 64, BYTES, 64, is_final=True)
    assert PAD not in s.ids
    assert s.ids[65] == EOD and s.ids[66] == EOS


def test_layout_rejects_bad_input():
    with pytest.raises(InputError):
        tokenize_sentence("", BYTES)
    with pytest.raises(InputError):
        tokenize_sentence("z" * 65, BYTES)


def test_lexical_span_decodes_to_sentence(corpus_vocab):
    _, docs, v = corpus_vocab
    for d in docs[:50]:
        sents = split_sentences(d.text, 64, v)
        stream = document_stream(sents, v)
        for s, row in zip(sents, stream.sentences):
            assert v.decode(row.lexical) == s


def test_targets_skip_pads():
    s = tokenize_sentence("ab", BYTES, 8, is_final=True)
    t = sentence_targets(s.ids)
    a, b = ord("a") + 4, ord("b") + 4
    assert t[0] == a and t[1] == b and t[2] == EOD
    assert t[9] == EOS and t[10] == -1
    assert np.all(t[3:9] == -1)
    w = target_weights(t, 0.05)
    assert list(w[[0, 1, 2, 9, 10]]) == [1, 1, 0.05, 0.05, 0]


# ------------------------------------------------------------ streams


def _doc(n, L=8):
    rows = [tokenize_sentence("s" * (1 + i % 5), BYTES, L, i == n - 1) for i in range(n)]
    return SentenceStream.from_sentences(rows, doc_id=9)


def test_slice_seven_by_three():
    assert [len(s) for s in slice_streams(_doc(7), 3)] == [3, 3, 1]
    assert [len(s) for s in slice_streams(_doc(7), 10)] == [7]


def test_reslicing_conserves_sentences_and_tokens():
    doc = _doc(100)
    for S in (30, 42):
        parts = slice_streams(doc, S)
        assert sum(len(p) for p in parts) == 100
        assert sum(p.n_tokens for p in parts) == doc.n_tokens
        assert np.array_equal(np.concatenate([p.ids for p in parts]), doc.ids)


def test_valid_streams_are_whole_documents(corpus_vocab):
    text, _, _ = corpus_vocab
    vocab, splits = prepare({"train": text}, 400, 64, seed=1)
    n_docs = len(split_documents(text))
    assert sum(len(v) for v in splits.values()) == n_docs
    for doc in splits["valid"] + splits["test"]:
        assert doc.is_final[-1] and not doc.is_final[:-1].any()


def test_parallel_prep_matches_serial(corpus_vocab, monkeypatch):
    _, docs, v = corpus_vocab
    monkeypatch.setenv("TG_THREADS", "1")
    a = documents_to_streams(docs[:40], v)
    monkeypatch.setenv("TG_THREADS", "4")
    b = documents_to_streams(docs[:40], v)
    assert all(np.array_equal(x.ids, y.ids) for x, y in zip(a, b)) and len(a) == len(b)


def test_storage_round_trip(tmp_path, corpus_vocab):
    _, docs, v = corpus_vocab
    streams = documents_to_streams(docs[:30], v)
    write_streams(tmp_path / "x.tgds", streams, v.fingerprint(), 64)
    header, back = read_streams(tmp_path / "x.tgds")
    assert header == {"vocab_hash": v.fingerprint(), "L": 64, "T": 67, "version": 1}
    for a, b in zip(streams, back):
        assert np.array_equal(a.ids, b.ids) and np.array_equal(a.n_lex, b.n_lex)
        assert a.doc_id == b.doc_id


def test_storage_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.tgds"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(InputError):
        read_streams(p)


def test_synthetic_corpus_deterministic():
    assert synthetic_corpus(20, 5) == synthetic_corpus(20, 5)
    assert len(set(load_names())) == len(load_names()) >= 150


# ------------------------------------------------------------ batching


def test_first_fit_hand_trace():
    plan = build_batches([1, 1, 1, 1], [100, 100, 100, 100], 200, 4)
    assert sorted(len(b) for b in plan) == [2, 2]


def test_single_stream_single_batch():
    assert build_batches([3], [50], 100, 4).batches == [[0]]


def test_oversized_stream_rejected():
    with pytest.raises(InputError):
        build_batches([2, 3], [10, 500], 100, 4)


def check_plan(plan, sents, toks, budget, max_streams, width):
    flat = sorted(i for b in plan for i in b)
    assert flat == list(range(len(toks)))
    big = max(toks)
    for b in plan:
        assert 1 <= len(b) <= max_streams
        assert sum(toks[i] for i in b) <= budget + big
    # long streams are dealt round-robin: when the deepest bucket alone can
    # fill every pre-allocated batch (and no overflow batch was opened), each
    # batch's depth lies within one bucket width
    deepest = (max(sents) - 1) // width
    first_round = math.ceil(sum(toks) / budget)
    if len(plan) == first_round and sum((s - 1) // width == deepest for s in sents) >= len(plan):
        depths = [max(sents[i] for i in b) for b in plan]
        assert max(depths) - min(depths) < width


def test_batch_invariants_on_1000_random_sets():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        sents = rng.integers(1, 60, n).tolist()
        toks = [int(s * rng.integers(3, 30)) for s in sents]
        budget = max(toks) + int(rng.integers(0, 3000))
        max_streams = int(rng.integers(1, 20))
        plan = build_batches(sents, toks, budget, max_streams, 5, np.random.default_rng(int(rng.integers(1 << 30))))
        check_plan(plan, sents, toks, budget, max_streams, 5)


def test_batching_is_seeded():
    sents, toks = list(range(1, 30)), [10 * i for i in range(1, 30)]
    a = build_batches(sents, toks, 500, 8, rng=np.random.default_rng(3)).batches
    b = build_batches(sents, toks, 500, 8, rng=np.random.default_rng(3)).batches
    assert a == b


def test_batch_count_close_to_budget_quotient():
    toks = [100] * 40
    plan = build_batches([1] * 40, toks, 1000, 64)
    assert len(plan) == math.ceil(sum(toks) / 1000)
