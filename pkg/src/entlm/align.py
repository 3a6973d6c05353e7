"""Cross-lingual alignment diagnostics.

Contextualized word retrieval (CWR) ranks target-language span embeddings
by cosine similarity to a query span and reports mean reciprocal rank.
Modularity measures how strongly a cosine k-NN graph of embeddings clusters
by language: communities are the language labels themselves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class SpanEmbedding:
    uid: str
    language: str
    text: str
    vector: np.ndarray

    def validate(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ContractError(f"non-finite embedding for {self.uid}")
        return self


def span_embed(word_vectors, span):
    """Arithmetic mean of contextual word vectors over [start, end)."""
    s, e = span
    if not (0 <= s < e <= word_vectors.shape[0]):
        raise ContractError(f"span ({s}, {e}) out of bounds for {word_vectors.shape[0]} vectors")
    return word_vectors[s:e].mean(axis=0)


def _unit_rows(mat, what):
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0):
        raise ContractError(f"zero-norm vector in {what}")
    return mat / norms[:, None]


def cwr_mrr(queries, pool, gold):
    """Mean reciprocal rank of the gold pool item under cosine ranking.

    queries/pool: lists of SpanEmbedding; gold: {query uid -> pool uid}.
    Ties in similarity break toward the lower pool index.
    """
    if not queries or not pool:
        raise ContractError("empty query or pool set")
    pool_index = {p.uid: i for i, p in enumerate(pool)}
    q_mat = _unit_rows(np.stack([np.asarray(q.vector, dtype=np.float64) for q in queries]), "queries")
    p_mat = _unit_rows(np.stack([np.asarray(p.vector, dtype=np.float64) for p in pool]), "pool")
    sims = q_mat @ p_mat.T
    rr = []
    for qi, q in enumerate(queries):
        if q.uid not in gold:
            raise ContractError(f"query {q.uid} has no gold mapping")
        gi = pool_index[gold[q.uid]]
        row = sims[qi]
        # rank = 1 + number of strictly better + earlier-index ties
        better = np.sum(row > row[gi])
        ties_before = np.sum((row[:gi] == row[gi]))
        rr.append(1.0 / (1 + better + ties_before))
    return float(np.mean(rr))


def knn_graph(vectors, k):
    """Undirected edge set: (u, v) iff u in kNN(v) or v in kNN(u), cosine
    metric, no self-loops."""
    if k < 1:
        raise ContractError("k must be >= 1")
    n = vectors.shape[0]
    unit = _unit_rows(np.asarray(vectors, dtype=np.float64), "knn input")
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    edges = set()
    kk = min(k, n - 1)
    for i in range(n):
        # stable tie-break: sort by (-sim, index)
        order = np.lexsort((np.arange(n), -sims[i]))[:kk]
        for j in order:
            edges.add((min(i, int(j)), max(i, int(j))))
    return edges


def modularity(embeddings, k=3):
    """Newman modularity of the language partition on the cosine k-NN graph.

    Q = sum_c (e_cc - a_c^2), with e_cc the fraction of edges inside
    community c and a_c the fraction of edge endpoints in c.
    """
    langs = [e.language for e in embeddings]
    if len(set(langs)) < 2:
        return None  # undefined with a single language
    vectors = np.stack([np.asarray(e.vector, dtype=np.float64) for e in embeddings])
    edges = knn_graph(vectors, k)
    return modularity_of_partition(edges, langs)


def modularity_of_partition(edges, labels):
    if not edges:
        raise ContractError("graph has no edges")
    m = len(edges)
    communities = sorted(set(labels))
    e_cc = {c: 0 for c in communities}
    ends = {c: 0 for c in communities}
    for u, v in edges:
        if labels[u] == labels[v]:
            e_cc[labels[u]] += 1
        ends[labels[u]] += 1
        ends[labels[v]] += 1
    return float(sum(e_cc[c] / m - (ends[c] / (2 * m)) ** 2 for c in communities))


# ---------------------------------------------------------------------------
# embedding files (JSON lines: {id, lang, text, vector})


def save_embeddings(embeddings, path):
    with open(path, "w", encoding="utf-8") as f:
        for e in embeddings:
            f.write(json.dumps({
                "id": e.uid,
                "lang": e.language,
                "text": e.text,
                "vector": [float(x) for x in np.asarray(e.vector, dtype=np.float64)],
            }, ensure_ascii=False) + "\n")


def load_embeddings(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(SpanEmbedding(uid=d["id"], language=d["lang"], text=d["text"],
                                     vector=np.array(d["vector"], dtype=np.float64)).validate())
    return out


# ---------------------------------------------------------------------------
# feature dumping (models used as-is, before any fine-tuning)


FEATURE_SPECS = ("span-mean", "re-word", "re-entity")


def feature_dump(model, dataset, feature_spec, out_path=None):
    """Write SpanEmbedding records for downstream metric ops.

    span-mean: dataset items are (uid, lang, EncodedSequence-buildable dict
    with word_ids and a span); re-word / re-entity: items are (uid, lang,
    REInstance) and the feature is the concatenated head+tail vector of the
    requested RE variant.
    """
    from .encoder import EncodedSequence, encode
    from .heads import _re_features, make_re_model

    if feature_spec not in FEATURE_SPECS:
        raise ContractError(f"unknown feature spec {feature_spec!r}")

    records = []
    if feature_spec == "span-mean":
        for uid, lang, item in dataset:
            seq = EncodedSequence(
                word_ids=item["word_ids"],
                entity_ids=item.get("entity_ids", []),
                entity_positions=item.get("entity_positions", []),
            )
            out = encode(model.params, model.encoder_config, seq)
            vec = span_embed(out.word_vectors, item["span"])
            records.append(SpanEmbedding(uid=uid, language=lang,
                                         text=item.get("text", ""), vector=vec).validate())
    else:
        variant = "word-markers" if feature_spec == "re-word" else "entity-mask"
        re_model = make_re_model(model.encoder_config, model.params, model.word_vocab,
                                 model.entity_vocab, labels=["_dummy"], variant=variant)
        for uid, lang, inst in dataset:
            f = _re_features(re_model, [inst])
            records.append(SpanEmbedding(uid=uid, language=lang,
                                         text=" ".join(inst.tokens), vector=f.data[0]).validate())
    if out_path:
        save_embeddings(records, out_path)
    return records
