"""Cross-lingual alignment: CWR MRR, k-NN modularity, embedding files."""

import numpy as np
import pytest

from entlm.align import (
    SpanEmbedding,
    cwr_mrr,
    feature_dump,
    knn_graph,
    load_embeddings,
    modularity,
    modularity_of_partition,
    save_embeddings,
    span_embed,
)
from entlm.errors import ContractError
from entlm.seeding import substream


def se(uid, lang, vec):
    return SpanEmbedding(uid=uid, language=lang, text=uid, vector=np.asarray(vec, dtype=float))


# ---------------------------------------------------------------------------
# span embedding


def test_span_embed_is_mean():
    wv = np.arange(12.0).reshape(4, 3)
    assert np.allclose(span_embed(wv, (1, 3)), wv[1:3].mean(axis=0))
    with pytest.raises(ContractError):
        span_embed(wv, (2, 2))
    with pytest.raises(ContractError):
        span_embed(wv, (0, 5))


# ---------------------------------------------------------------------------
# CWR MRR


def test_mrr_perfect_and_rank_two():
    pool = [se("p0", "de", [1, 0]), se("p1", "de", [0, 1])]
    qs = [se("q0", "en", [1, 0.1]), se("q1", "en", [0.1, 1])]
    assert cwr_mrr(qs, pool, {"q0": "p0", "q1": "p1"}) == 1.0
    assert cwr_mrr(qs, pool, {"q0": "p1", "q1": "p0"}) == 0.5


def test_mrr_tie_breaks_toward_lower_pool_index():
    pool = [se("p0", "de", [1, 0]), se("p1", "de", [1, 0])]  # identical
    qs = [se("q0", "en", [1, 0])]
    assert cwr_mrr(qs, pool, {"q0": "p0"}) == 1.0
    assert cwr_mrr(qs, pool, {"q0": "p1"}) == 0.5


def test_mrr_rotation_and_scale_invariance():
    rng = substream(0, "mrr-invariance")
    qv = rng.normal(size=(5, 4))
    pv = rng.normal(size=(7, 4))
    qs = [se(f"q{i}", "en", v) for i, v in enumerate(qv)]
    pool = [se(f"p{i}", "de", v) for i, v in enumerate(pv)]
    gold = {f"q{i}": f"p{i}" for i in range(5)}
    base = cwr_mrr(qs, pool, gold)

    a = rng.normal(size=(4, 4))
    rot, _ = np.linalg.qr(a)  # orthogonal
    qs_r = [se(f"q{i}", "en", v @ rot) for i, v in enumerate(qv)]
    pool_r = [se(f"p{i}", "de", v @ rot) for i, v in enumerate(pv)]
    assert cwr_mrr(qs_r, pool_r, gold) == pytest.approx(base, abs=1e-12)

    pool_s = [se(f"p{i}", "de", v * (1 + i)) for i, v in enumerate(pv)]
    assert cwr_mrr(qs, pool_s, gold) == pytest.approx(base, abs=1e-12)


def test_mrr_contract_errors():
    good = [se("q0", "en", [1, 0])]
    pool = [se("p0", "de", [0, 1])]
    with pytest.raises(ContractError):
        cwr_mrr([], pool, {})
    with pytest.raises(ContractError):
        cwr_mrr(good, pool, {})  # missing gold
    with pytest.raises(ContractError):
        cwr_mrr([se("q0", "en", [0, 0])], pool, {"q0": "p0"})  # zero norm


# ---------------------------------------------------------------------------
# k-NN graph and modularity


def test_knn_graph_symmetrized_union():
    # a's nearest is b; c's nearest is b; b's nearest is a
    vecs = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    edges = knn_graph(vecs, k=1)
    assert (0, 1) in edges and (1, 2) in edges
    assert all(u < v for u, v in edges)
    with pytest.raises(ContractError):
        knn_graph(vecs, k=0)


def test_modularity_separated_oracle():
    edges = {(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)}
    labels = ["en"] * 3 + ["de"] * 3
    assert modularity_of_partition(edges, labels) == pytest.approx(0.5, abs=1e-12)


def test_modularity_bipartite_oracle():
    edges = {(0, 2), (0, 3), (1, 2), (1, 3)}
    labels = ["en", "en", "de", "de"]
    assert modularity_of_partition(edges, labels) == pytest.approx(-0.5, abs=1e-12)


def test_modularity_from_embeddings_separated():
    embs = []
    for i in range(4):
        embs.append(se(f"e{i}", "en", [1.0, 0.001 * i]))
        embs.append(se(f"d{i}", "de", [0.001 * i, 1.0]))
    q = modularity(embs, k=2)
    assert q == pytest.approx(0.5, abs=1e-12)


def test_modularity_from_embeddings_interleaved():
    # twin points across languages: every 1-NN edge crosses languages
    rng = substream(1, "twins")
    embs = []
    for i in range(6):
        v = rng.normal(size=3)
        embs.append(se(f"e{i}", "en", v))
        embs.append(se(f"d{i}", "de", v + 1e-9))
    q = modularity(embs, k=1)
    assert q == pytest.approx(-0.5, abs=1e-9)


def test_modularity_single_language_is_undefined():
    embs = [se("a", "en", [1, 0]), se("b", "en", [0, 1])]
    assert modularity(embs, k=1) is None


def test_modularity_random_shuffles_near_zero():
    rng = substream(2, "shuffle")
    vecs = rng.normal(size=(100, 8))
    edges = knn_graph(vecs, k=3)
    for _ in range(20):
        labels = list(rng.choice(["en", "de"], size=100))
        assert abs(modularity_of_partition(edges, labels)) < 0.1


def test_modularity_no_edges_rejected():
    with pytest.raises(ContractError):
        modularity_of_partition(set(), ["en", "de"])


# ---------------------------------------------------------------------------
# files and feature dumping


def test_embedding_file_round_trip(tmp_path):
    embs = [se("a", "en", [1.5, -2.0]), se("b", "ja", [0.25, 3.0])]
    path = str(tmp_path / "emb.jsonl")
    save_embeddings(embs, path)
    loaded = load_embeddings(path)
    assert [(e.uid, e.language, e.text) for e in loaded] == [("a", "en", "a"), ("b", "ja", "b")]
    assert np.array_equal(loaded[0].vector, embs[0].vector)


def test_feature_dump_span_mean(task_model):
    model, seq_item = task_model
    records = feature_dump(model, [("u1", "en", seq_item)], "span-mean")
    from entlm.encoder import EncodedSequence, encode
    out = encode(model.params, model.encoder_config,
                 EncodedSequence(word_ids=seq_item["word_ids"]))
    expected = span_embed(out.word_vectors, seq_item["span"])
    assert np.allclose(records[0].vector, expected, atol=1e-12)
    assert records[0].language == "en"


def test_feature_dump_re_variants(task_model, tmp_path):
    model, _ = task_model
    from entlm.heads import REInstance
    inst = REInstance(tokens=["a", "b", "c", "d"], head_span=(0, 1), tail_span=(2, 3), label="r")
    for spec in ("re-word", "re-entity"):
        path = str(tmp_path / f"{spec}.jsonl")
        records = feature_dump(model, [("u", "en", inst)], spec, out_path=path)
        assert records[0].vector.shape == (2 * model.encoder_config.hidden_size,)
        assert len(load_embeddings(path)) == 1
    with pytest.raises(ContractError):
        feature_dump(model, [], "nope")


@pytest.fixture
def task_model():
    from entlm.cloze import ClozeModel
    from entlm.corpus import WordVocab
    from entlm.encoder import EncoderConfig, init_params
    from entlm.vocab import EntityEntry, EntityVocab, SPECIAL_ENTITIES

    wv = WordVocab(["a", "b", "c", "d", "e"])
    ev = EntityVocab([EntityEntry(canonical_key=k) for k in SPECIAL_ENTITIES])
    cfg = EncoderConfig(word_vocab_size=len(wv), entity_vocab_size=len(ev),
                        hidden_size=16, entity_emb_size=8, layers=1, heads=2,
                        ffn_size=32, max_positions=16, dropout=0.0).validate()
    params = init_params(cfg, substream(3, "dump-params"))
    model = ClozeModel(encoder_config=cfg, params=params, word_vocab=wv, entity_vocab=ev)
    item = {"word_ids": wv.encode(["a", "b", "c", "d"]), "span": (1, 3), "text": "b c"}
    return model, item
