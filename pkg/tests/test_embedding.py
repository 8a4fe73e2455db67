import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gadgetforge.embedding import (
    PAD,
    UNK,
    EmbeddingConfig,
    _sgns_epoch_nb,
    _sgns_epoch_np,
    build_vocab,
    embed_gadget,
    export_tsv,
    init_table,
    load_table,
    save_table,
    sgns_loss,
    skipgram_pairs,
    table_digest,
    train_embeddings,
)
from gadgetforge.errors import ConfigError, DimensionMismatch, EmptyCorpus, IoFailure


def test_vocab_min_count():
    v = build_vocab([["a", "b", "a"], ["a"]], min_count=2)
    assert v.tokens == ("<PAD>", "<UNK>", "a")
    assert v.id("b") == UNK and v.id("a") == 2
    assert v.counts == (0, 1, 3)


def test_vocab_order_and_determinism():
    v1 = build_vocab([["c", "b", "b", "a"], ["a", "d"]])
    v2 = build_vocab([["d", "a"], ["a", "b", "c", "b"]])
    assert v1 == v2
    assert v1.tokens[2:] == ("a", "b", "c", "d")  # count desc, then lexicographic
    assert [v1.id(t) for t in v1.tokens] == list(range(len(v1)))


def test_vocab_empty():
    with pytest.raises(EmptyCorpus):
        build_vocab([])
    with pytest.raises(EmptyCorpus):
        build_vocab([[]])


def test_pairs_examples():
    assert skipgram_pairs(list("abc"), 5) == [("a", "b"), ("a", "c"), ("b", "a"), ("b", "c"), ("c", "a"), ("c", "b")]
    assert skipgram_pairs(["a"], 5) == []
    assert skipgram_pairs(list("abc"), 1) == [("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")]


@given(st.lists(st.integers(0, 5), max_size=20), st.integers(1, 6))
def test_pairs_symmetric(tokens, window):
    from collections import Counter

    pairs = Counter(skipgram_pairs(tokens, window))
    assert pairs == Counter((b, a) for a, b in pairs.elements())


def _closed_form(v, u_pos, u_negs):
    s = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
    loss = -math.log(s(sum(a * b for a, b in zip(v, u_pos))))
    for u in u_negs:
        loss -= math.log(s(-sum(a * b for a, b in zip(v, u))))
    return loss


@settings(max_examples=100)
@given(st.integers(0, 10**6))
def test_sgns_loss_closed_form(seed):
    rng = np.random.default_rng(seed)
    w_in = rng.normal(size=(8, 6))
    w_out = rng.normal(size=(8, 6))
    c, o = rng.integers(0, 8, size=2)
    negs = rng.integers(0, 8, size=5)
    want = _closed_form(w_in[c].tolist(), w_out[o].tolist(), [w_out[n].tolist() for n in negs])
    assert sgns_loss(w_in, w_out, int(c), int(o), negs) == pytest.approx(want, abs=1e-10)


def test_sgns_step_decreases_loss():
    rng = np.random.default_rng(0)
    w_in, w_out = rng.normal(scale=0.3, size=(6, 4)), rng.normal(scale=0.3, size=(6, 4))
    pairs = np.array([[2, 3]])
    negs = np.array([[4, 5, 1]])
    before = sgns_loss(w_in, w_out, 2, 3, negs[0])
    _sgns_epoch_np(w_in, w_out, pairs, negs, 0.05, 0.0, 1.0)
    assert sgns_loss(w_in, w_out, 2, 3, negs[0]) < before


def test_kernels_agree():
    rng = np.random.default_rng(1)
    w0 = rng.uniform(-0.05, 0.05, size=(30, 16))
    pairs = rng.integers(2, 30, size=(500, 2))
    negs = rng.integers(2, 30, size=(500, 5))
    a_in, a_out = w0.copy(), np.zeros_like(w0)
    b_in, b_out = w0.copy(), np.zeros_like(w0)
    _sgns_epoch_nb(a_in, a_out, pairs, negs, 0.025, 0.0, 500.0)
    _sgns_epoch_np(b_in, b_out, pairs, negs, 0.025, 0.0, 500.0)
    np.testing.assert_allclose(a_in, b_in, atol=1e-12)
    np.testing.assert_allclose(a_out, b_out, atol=1e-12)


CORPUS = [["x", "=", "y", ";"], ["strcpy", "(", "x", ",", "y", ")", ";"]] * 5


def test_table_shape_and_epochs_zero():
    cfg = EmbeddingConfig(epochs=0, seed=3)
    t = train_embeddings(CORPUS, cfg)
    assert t.input_vectors.shape == (len(t.vocab), 100)
    w_in, w_out = init_table(t.vocab, 100, 3)
    assert np.array_equal(t.input_vectors, w_in) and np.array_equal(t.output_vectors, w_out)
    assert np.all(np.abs(w_in) <= 0.5 / 100) and not w_out.any()


def test_deterministic_and_backend_independent(monkeypatch):
    cfg = EmbeddingConfig(dim=12, epochs=3, seed=5)
    a = train_embeddings(CORPUS, cfg)
    b = train_embeddings(CORPUS, cfg)
    assert np.array_equal(a.input_vectors, b.input_vectors) and table_digest(a) == table_digest(b)
    monkeypatch.setenv("GADGETFORGE_NUMBA", "0")
    c = train_embeddings(CORPUS, cfg)
    np.testing.assert_allclose(a.input_vectors, c.input_vectors, atol=1e-12)
    assert not a.input_vectors[PAD].any()


@pytest.mark.parametrize("seed", range(5))
def test_cooccurrence_margin(seed):
    # omega sits alone, so its input vector keeps its random initialization
    corpus = [["alpha", "beta"]] * 100 + [["omega"]]
    t = train_embeddings(corpus, EmbeddingConfig(epochs=5, seed=seed))
    assert t.cosine("alpha", "beta") > t.cosine("alpha", "omega") + 0.3


def test_embed_gadget_rows():
    t = train_embeddings(CORPUS, EmbeddingConfig(dim=8, epochs=1))
    m = embed_gadget(["strcpy", "(", "x", ",", "y", ")", ";"], t, dim=8)
    assert m.shape == (7, 8)
    assert np.array_equal(embed_gadget(["never-seen"], t)[0], t.input_vectors[UNK])
    pads = embed_gadget(["<PAD>"] * 3, t)
    assert np.array_equal(pads, np.repeat(t.input_vectors[PAD][None], 3, axis=0))
    with pytest.raises(DimensionMismatch):
        embed_gadget(["x"], t, dim=100)


def test_config_validation():
    for bad in (EmbeddingConfig(dim=0), EmbeddingConfig(window=0), EmbeddingConfig(lr=0.0), EmbeddingConfig(epochs=-1)):
        with pytest.raises(ConfigError):
            bad.validate()


def test_file_round_trip(tmp_path):
    t = train_embeddings(CORPUS, EmbeddingConfig(dim=8, epochs=2))
    p = tmp_path / "emb.bin"
    save_table(t, p)
    raw = p.read_bytes()
    assert raw[:4] == b"GFEM"
    assert len(raw) == 32 + 2 * len(t.vocab) * 8 * 4
    back = load_table(p)
    assert back.vocab == t.vocab
    assert np.array_equal(back.input_vectors, t.input_vectors.astype(np.float32).astype(np.float64))
    assert table_digest(back) == table_digest(t)
    export_tsv(t, tmp_path / "emb.tsv")
    lines = (tmp_path / "emb.tsv").read_text().splitlines()
    assert len(lines) == len(t.vocab) and lines[0].split("\t")[0] == "<PAD>"
    p.write_bytes(raw[:-4])
    with pytest.raises(IoFailure):
        load_table(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(IoFailure):
        load_table(p)
