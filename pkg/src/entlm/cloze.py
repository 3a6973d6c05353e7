"""Typed cloze-prompt evaluation.

A query is a template with [X] and [Y] slots, a subject filling [X], and a
fixed candidate answer set for [Y].  Word mode scores a candidate as the
mean MLM log-probability of its tokens over that many word-[MASK] slots.
Entity modes instead read the MEP classifier through an entity-[MASK] token
tied to the [Y] positions, falling back to word scoring for candidates
outside the entity vocabulary.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncodedSequence, encode
from .errors import ContractError
from .tensor import log_softmax_np

MODES = ("word", "entity-y", "entity-xy")


@dataclass
class TypedQuery:
    language: str
    template: str  # contains [X] and [Y] exactly once each (as whitespace tokens)
    sub_surface: str
    candidates: list  # list of (surface, explicit entity key or None)
    gold_index: int
    sub_entity: str | None = None

    def validate(self):
        toks = self.template.split()
        if toks.count("[X]") != 1 or toks.count("[Y]") != 1:
            raise ContractError("template must contain exactly one [X] and one [Y]")
        if not self.candidates:
            raise ContractError("query needs at least one candidate")
        if not 0 <= self.gold_index < len(self.candidates):
            raise ContractError("gold_index out of range")
        return self


def load_queries(path):
    queries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            queries.append(
                TypedQuery(
                    language=d["lang"],
                    template=d["template"],
                    sub_surface=d["sub_surface"],
                    sub_entity=d.get("sub_entity"),
                    candidates=[(c["surface"], c.get("entity")) for c in d["candidates"]],
                    gold_index=d["gold_index"],
                ).validate()
            )
    return queries


@dataclass
class ClozeModel:
    encoder_config: object
    params: dict  # encoder + mlm_head + mep_head parameters
    word_vocab: object
    entity_vocab: object


def resolve_candidate_entity(vocab, language, surface, explicit=None):
    """Entity id via explicit key, else exact title match in the query's
    language with an English fallback."""
    if explicit is not None:
        eid = vocab.resolve_key(explicit)
        if eid is None:
            eid = vocab.resolve(language, explicit)
        if eid is not None:
            return eid
    eid = vocab.resolve(language, surface)
    if eid is None and language != "en":
        eid = vocab.resolve("en", surface)
    return eid


def _build_cloze_input(model, query: TypedQuery, k, subject_entity_id=None, y_entity_id=None):
    """Sequence with [X] filled and k word masks at [Y]; optional entity tokens."""
    query.validate()
    toks = query.template.split()
    xi = toks.index("[X]")
    yi = toks.index("[Y]")
    sub_tokens = query.sub_surface.split()

    words = []
    x_positions = []
    y_positions = []
    for i, t in enumerate(toks):
        if i == xi:
            x_positions = list(range(len(words), len(words) + len(sub_tokens)))
            words.extend(sub_tokens)
        elif i == yi:
            y_positions = list(range(len(words), len(words) + k))
            words.extend(["[MASK]"] * k)
        else:
            words.append(t)
    word_ids = model.word_vocab.encode(words)
    for p in y_positions:
        word_ids[p] = model.word_vocab.mask_id

    entity_ids, entity_positions = [], []
    if subject_entity_id is not None and x_positions:
        entity_ids.append(subject_entity_id)
        entity_positions.append(x_positions)
    ent_index = None
    if y_entity_id is not None:
        ent_index = len(entity_ids)
        entity_ids.append(y_entity_id)
        entity_positions.append(y_positions)
    seq = EncodedSequence(word_ids=word_ids, entity_ids=entity_ids, entity_positions=entity_positions)
    return seq, y_positions, ent_index


def _word_logprobs(model, seq):
    out = encode(model.params, model.encoder_config, seq)
    logits = out.word_vectors @ model.params["mlm_head.w"].data + model.params["mlm_head.b"].data
    return log_softmax_np(logits, axis=-1), out


def score_candidate_words(model: ClozeModel, query: TypedQuery, candidate_surface):
    """Mean log-probability of the candidate's tokens at the [Y] masks."""
    cand_tokens = candidate_surface.split()
    if not cand_tokens:
        raise ContractError("candidate tokenizes to zero tokens")
    k = len(cand_tokens)
    seq, y_positions, _ = _build_cloze_input(model, query, k)
    logprobs, _ = _word_logprobs(model, seq)
    cand_ids = model.word_vocab.encode(cand_tokens)
    return float(np.mean([logprobs[p, cid] for p, cid in zip(y_positions, cand_ids)]))


def score_candidate_entity(model: ClozeModel, query: TypedQuery, candidate, mode="entity-y"):
    """(score, used_entity).  candidate is (surface, explicit entity or None).

    Out-of-vocabulary candidates fall back to word scoring exactly.  In
    entity-xy mode the subject's entity token is appended over [X] when the
    subject resolves in the vocabulary.
    """
    surface, explicit = candidate
    eid = resolve_candidate_entity(model.entity_vocab, query.language, surface, explicit)
    if eid is None:
        return score_candidate_words(model, query, surface), False
    sub_eid = None
    if mode == "entity-xy":
        sub_eid = resolve_candidate_entity(
            model.entity_vocab, query.language, query.sub_surface, query.sub_entity)
    k = max(1, len(surface.split()))
    seq, _y_pos, ent_index = _build_cloze_input(
        model, query, k, subject_entity_id=sub_eid, y_entity_id=model.entity_vocab.mask_id)
    out = encode(model.params, model.encoder_config, seq)
    logits = out.entity_vectors[ent_index] @ model.params["mep_head.w"].data + model.params["mep_head.b"].data
    return float(log_softmax_np(logits)[eid]), True


def score_query(model, query, mode):
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}")
    scores = []
    used_entity = []
    for cand in query.candidates:
        if mode == "word":
            scores.append(score_candidate_words(model, query, cand[0]))
            used_entity.append(False)
        else:
            s, used = score_candidate_entity(model, query, cand, mode=mode)
            scores.append(s)
            used_entity.append(used)
    return scores, used_entity


def evaluate(model: ClozeModel, queries, mode="word"):
    """Top-1 accuracy per language and overall; records every prediction."""
    per_lang = defaultdict(lambda: [0, 0])
    records = []
    for qi, q in enumerate(queries):
        scores, used = score_query(model, q, mode)
        pred = int(np.argmax(scores))  # ties: lowest candidate index
        correct = pred == q.gold_index
        per_lang[q.language][0] += int(correct)
        per_lang[q.language][1] += 1
        records.append({
            "query_index": qi,
            "lang": q.language,
            "template": q.template,
            "predicted_index": pred,
            "predicted_surface": q.candidates[pred][0],
            "gold_index": q.gold_index,
            "gold_surface": q.candidates[q.gold_index][0],
            "correct": correct,
            "used_entity": used[pred],
        })
    total_c = sum(c for c, _ in per_lang.values())
    total_n = sum(n for _, n in per_lang.values())
    return {
        "mode": mode,
        "accuracy": total_c / total_n if total_n else 0.0,
        "per_language": {l: c / n for l, (c, n) in sorted(per_lang.items())},
        "records": records,
    }


def top1_fp_ratio(false_prediction_surfaces):
    """Share of the most common false-positive prediction among all false
    predictions; None with zero false predictions (undefined)."""
    total = len(false_prediction_surfaces)
    if total == 0:
        return None
    counts = Counter(false_prediction_surfaces)
    # tie-break on equal counts: lexicographically smallest surface
    best_count = max(counts.values())
    surface = min(s for s, c in counts.items() if c == best_count)
    return {"surface": surface, "ratio": counts[surface] / total,
            "count": counts[surface], "total": total}


def fp_analysis(records):
    """Per (template, language) top-1 false-positive analysis from evaluate records."""
    grouped = defaultdict(list)
    for r in records:
        if not r["correct"]:
            grouped[(r["template"], r["lang"])].append(r["predicted_surface"])
    return {
        f"{lang}|{template}": top1_fp_ratio(surfaces)
        for (template, lang), surfaces in sorted(grouped.items())
    }
