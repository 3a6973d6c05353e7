"""Downstream heads: extractive QA, relation classification, span NER.

Each task comes in a word-baseline variant and an entity-augmented variant.
QA appends detected entity tokens as extra input features; RE and NER reuse
the entity-[MASK] machinery ([HEAD]/[TAIL] tokens for RE, one [MASK] entity
per candidate span for NER) and classify the contextualized entity vectors.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import NEG_INF, EncodedSequence, EncoderConfig, encode_batch, pack_batch
from .errors import ContractError
from .pretrain import AdamW
from .seeding import substream

MAX_ANSWER_LEN = 30
QA_WINDOW_STRIDE = 128
NER_MAX_SPAN_LEN = 16
NER_NON_ENTITY = "O"
RE_HEAD_MARKER = "<ent>"
RE_TAIL_MARKER = "<ent2>"

DEFAULT_NER_CHUNK = 64


# ---------------------------------------------------------------------------
# instances and file formats


@dataclass
class QAInstance:
    qid: str
    question_tokens: list
    context_tokens: list
    answers: list  # gold answer strings
    gold_spans: list = field(default_factory=list)  # (start, end) token spans in context
    question_entities: list = field(default_factory=list)  # (start, end, entity_id)
    context_entities: list = field(default_factory=list)
    q_lang: str = "en"
    c_lang: str = "en"

    def validate(self):
        n = len(self.context_tokens)
        for s, e in self.gold_spans:
            if not (0 <= s < e <= n):
                raise ContractError(f"gold span ({s}, {e}) outside context of {n} tokens")
        return self


@dataclass
class REInstance:
    tokens: list
    head_span: tuple  # (start, end) exclusive
    tail_span: tuple
    label: str

    def validate(self):
        n = len(self.tokens)
        for s, e in (self.head_span, self.tail_span):
            if not (0 <= s < e <= n):
                raise ContractError(f"span ({s}, {e}) outside sentence of {n} tokens")
        (hs, he), (ts, te) = self.head_span, self.tail_span
        if hs < te and ts < he:
            raise ContractError("head and tail spans overlap")
        return self


@dataclass
class NERInstance:
    tokens: list
    gold_spans: list = field(default_factory=list)  # (start, end, type)

    def validate(self):
        n = len(self.tokens)
        for s, e, _t in self.gold_spans:
            if not (0 <= s < e <= n):
                raise ContractError(f"span ({s}, {e}) outside sentence of {n} tokens")
        return self


def _tokenize_with_offsets(text):
    tokens, starts = [], []
    i = 0
    for tok in text.split():
        i = text.index(tok, i)
        tokens.append(tok)
        starts.append(i)
        i += len(tok)
    return tokens, starts


def _char_span_to_tokens(starts, tokens, answer_start, answer_text):
    end_char = answer_start + len(answer_text)
    s = e = None
    for ti, st in enumerate(starts):
        if st + len(tokens[ti]) > answer_start and s is None:
            s = ti
        if st < end_char:
            e = ti + 1
    if s is None or e is None or s >= e:
        return None
    return (s, e)


def load_qa_data(path):
    """Read QA instances from SQuAD-shaped JSON or from JSON lines."""
    with open(path, encoding="utf-8") as f:
        first = f.read(1)
        f.seek(0)
        if first == "{":
            payload = json.load(f)
            records = []
            if "data" in payload:
                for article in payload["data"]:
                    for para in article["paragraphs"]:
                        for qa in para["qas"]:
                            records.append({"context": para["context"], **qa})
            else:
                f.seek(0)
                records = [json.loads(line) for line in f if line.strip()]
        else:
            records = [json.loads(line) for line in f if line.strip()]

    insts = []
    for r in records:
        ctx_tokens, starts = _tokenize_with_offsets(r["context"])
        spans = []
        answers = []
        for a in r.get("answers", []):
            answers.append(a["text"])
            span = _char_span_to_tokens(starts, ctx_tokens, a["answer_start"], a["text"])
            if span:
                spans.append(span)
        insts.append(
            QAInstance(
                qid=str(r.get("id", len(insts))),
                question_tokens=r["question"].split(),
                context_tokens=ctx_tokens,
                answers=answers,
                gold_spans=spans,
                question_entities=[tuple(a) for a in r.get("question_entities", [])],
                context_entities=[tuple(a) for a in r.get("context_entities", [])],
                q_lang=r.get("q_lang", r.get("lang", "en")),
                c_lang=r.get("c_lang", r.get("lang", "en")),
            ).validate()
        )
    return insts


def load_re_data(path):
    """One example per line: label TAB tokens TAB head_start head_end TAB tail_start tail_end."""
    insts = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            label, toks, head, tail = line.split("\t")
            hs, he = (int(x) for x in head.split())
            ts, te = (int(x) for x in tail.split())
            insts.append(REInstance(tokens=toks.split(), head_span=(hs, he),
                                    tail_span=(ts, te), label=label).validate())
    return insts


def save_re_data(insts, path):
    with open(path, "w", encoding="utf-8") as f:
        for inst in insts:
            f.write("\t".join([
                inst.label, " ".join(inst.tokens),
                f"{inst.head_span[0]} {inst.head_span[1]}",
                f"{inst.tail_span[0]} {inst.tail_span[1]}",
            ]) + "\n")


def bio_to_spans(tags):
    spans = []
    start, typ = None, None
    for i, tag in enumerate(tags + ["O"]):
        if tag.startswith("B-") or tag == "O" or (tag.startswith("I-") and tag[2:] != typ):
            if start is not None:
                spans.append((start, i, typ))
                start, typ = None, None
        if tag.startswith("B-"):
            start, typ = i, tag[2:]
        elif tag.startswith("I-") and start is None:
            start, typ = i, tag[2:]  # tolerate I- openings
    return spans


def spans_to_bio(n, spans):
    tags = ["O"] * n
    for s, e, typ in spans:
        tags[s] = f"B-{typ}"
        for i in range(s + 1, e):
            tags[i] = f"I-{typ}"
    return tags


def load_ner_data(path):
    """CoNLL-style token-per-line with BIO tags; blank lines separate sentences."""
    insts = []
    tokens, tags = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                if tokens:
                    insts.append(NERInstance(tokens=tokens, gold_spans=bio_to_spans(tags)).validate())
                    tokens, tags = [], []
                continue
            parts = line.split()
            tokens.append(parts[0])
            tags.append(parts[-1])
    if tokens:
        insts.append(NERInstance(tokens=tokens, gold_spans=bio_to_spans(tags)).validate())
    return insts


# ---------------------------------------------------------------------------
# shared model bundle


@dataclass
class TaskModel:
    """Encoder weights plus one task head."""

    encoder_config: EncoderConfig
    params: dict  # encoder parameters + task head parameters
    word_vocab: object
    entity_vocab: object
    labels: list | None = None  # RE/NER label set
    variant: str = "word"  # task-specific variant tag

    def trainable_names(self):
        return {n for n, p in self.params.items() if p.requires_grad}


def _linear_head(rng, in_dim, out_dim, prefix):
    return {
        f"{prefix}.w": T.parameter(rng.normal(0.0, 0.02, size=(in_dim, out_dim)), name=f"{prefix}.w"),
        f"{prefix}.b": T.parameter(np.zeros(out_dim), name=f"{prefix}.b"),
    }


# ---------------------------------------------------------------------------
# extractive QA


def make_qa_model(encoder_config, params, word_vocab, entity_vocab, use_entities=False, seed=0):
    rng = substream(seed, "qa-head")
    p = dict(params)
    p.update(_linear_head(rng, encoder_config.hidden_size, 2, "qa_head"))
    return TaskModel(encoder_config=encoder_config, params=p, word_vocab=word_vocab,
                     entity_vocab=entity_vocab, variant="entity" if use_entities else "word")


def _qa_sequence(model: TaskModel, inst: QAInstance, ctx_lo, ctx_hi, use_entities):
    """Build the joint sequence for one context window; returns (seq, ctx_offset)."""
    q = inst.question_tokens
    ctx = inst.context_tokens[ctx_lo:ctx_hi]
    word_ids = model.word_vocab.encode(q) + model.word_vocab.encode(ctx)
    off = len(q)
    entity_ids, entity_positions = [], []
    if use_entities:
        for s, e, eid in inst.question_entities:
            entity_ids.append(eid)
            entity_positions.append(list(range(s, e)))
        for s, e, eid in inst.context_entities:
            if s >= ctx_lo and e <= ctx_hi:
                entity_ids.append(eid)
                entity_positions.append(list(range(s - ctx_lo + off, e - ctx_lo + off)))
    return EncodedSequence(word_ids=word_ids, entity_ids=entity_ids,
                           entity_positions=entity_positions), off


def _qa_logits(model: TaskModel, seq: EncodedSequence):
    out = encode_batch(model.params, model.encoder_config, pack_batch([seq]))
    wv = out.word_tensor
    logits = T.matmul(wv, model.params["qa_head.w"]) + model.params["qa_head.b"]
    return logits, out


def _best_span(start_logits, end_logits, max_len=MAX_ANSWER_LEN):
    """Argmax of start+end over valid spans; first hit wins on ties, and
    candidates are ordered by start then length (earliest, then shortest)."""
    n = len(start_logits)
    best = None
    for s in range(n):
        hi = min(n, s + max_len)
        for e in range(s, hi):
            score = start_logits[s] + end_logits[e]
            if best is None or score > best[0]:
                best = (score, s, e)
    return best  # (score, start, end_inclusive)


def qa_predict(model: TaskModel, inst: QAInstance, use_entities=None):
    """Predicted answer span and score, with sliding windows on long contexts."""
    inst.validate()
    if not inst.context_tokens:
        raise ContractError("empty context")
    if use_entities is None:
        use_entities = model.variant == "entity"
    max_pos = model.encoder_config.max_positions
    q_len = len(inst.question_tokens)
    win = max_pos - q_len
    if win < 1:
        raise ContractError("question alone exceeds max_positions")

    n_ctx = len(inst.context_tokens)
    windows = [0] if n_ctx <= win else list(range(0, max(n_ctx - win, 0) + 1, QA_WINDOW_STRIDE))
    if windows[-1] + win < n_ctx:
        windows.append(n_ctx - win)

    best = None
    for lo in windows:
        hi = min(lo + win, n_ctx)
        seq, off = _qa_sequence(model, inst, lo, hi, use_entities)
        logits, _ = _qa_logits(model, seq)
        data = logits.data[0]  # (m, 2)
        s_log = data[off : off + (hi - lo), 0]
        e_log = data[off : off + (hi - lo), 1]
        score, s, e = _best_span(s_log, e_log)
        cand = (score, lo + s, lo + e)
        if best is None or cand[0] > best[0]:
            best = cand
    score, s, e = best
    return {"span": (s, e + 1), "text": " ".join(inst.context_tokens[s : e + 1]), "score": float(score)}


def token_f1(pred_text, gold_text):
    pred = pred_text.split()
    gold = gold_text.split()
    if not pred or not gold:
        return float(pred == gold)
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def qa_metrics(predictions, golds):
    """F1/EM per (question language, context language) pair plus G-XLT average.

    predictions: {qid: text}; golds: {qid: (q_lang, c_lang, [gold texts])}.
    """
    if not golds:
        raise ContractError("empty gold set")
    cells = defaultdict(lambda: {"f1": 0.0, "em": 0.0, "n": 0})
    for qid, (q_lang, c_lang, gold_texts) in golds.items():
        pred = predictions.get(qid, "")
        f1 = max((token_f1(pred, g) for g in gold_texts), default=0.0)
        em = max((float(pred == g) for g in gold_texts), default=0.0)
        cell = cells[(q_lang, c_lang)]
        cell["f1"] += f1
        cell["em"] += em
        cell["n"] += 1
    table = {}
    for (ql, cl), c in cells.items():
        table[f"{ql}|{cl}"] = {"f1": c["f1"] / c["n"], "em": c["em"] / c["n"], "n": c["n"]}
    off_diag = [v for k, v in table.items() if k.split("|")[0] != k.split("|")[1]]
    report = {"pairs": table}
    if off_diag:
        report["g_xlt_f1"] = sum(v["f1"] for v in off_diag) / len(off_diag)
        report["g_xlt_em"] = sum(v["em"] for v in off_diag) / len(off_diag)
    diag = [v for k, v in table.items() if k.split("|")[0] == k.split("|")[1]]
    if diag:
        report["xlt_f1"] = sum(v["f1"] for v in diag) / len(diag)
    return report


# ---------------------------------------------------------------------------
# relation extraction


def make_re_model(encoder_config, params, word_vocab, entity_vocab, labels, variant="word-markers", seed=0):
    """RE classifier over concatenated head/tail features.

    word-markers: adds <ent>/<ent2> rows to the word embedding (random
    init).  entity-mask: [HEAD]/[TAIL] entity rows are reset to a bit-exact
    copy of the entity-[MASK] row.
    """
    if variant not in ("word-markers", "entity-mask"):
        raise ContractError(f"unknown RE variant {variant!r}")
    rng = substream(seed, "re-head")
    p = dict(params)
    cfg = encoder_config
    if variant == "word-markers":
        for marker in (RE_HEAD_MARKER, RE_TAIL_MARKER):
            mid = word_vocab.add(marker)
            if mid >= p["word_emb"].shape[0]:
                row = rng.normal(0.0, 0.02, size=(1, cfg.hidden_size))
                p["word_emb"] = T.parameter(np.concatenate([p["word_emb"].data, row]), name="word_emb")
        cfg = EncoderConfig.from_dict({**cfg.to_dict(), "word_vocab_size": len(word_vocab)})
    else:
        emb = p["entity_emb"].data.copy()
        emb[entity_vocab.head_id] = emb[entity_vocab.mask_id]
        emb[entity_vocab.tail_id] = emb[entity_vocab.mask_id]
        p["entity_emb"] = T.parameter(emb, name="entity_emb")
    p.update(_linear_head(rng, 2 * cfg.hidden_size, len(labels), "re_head"))
    return TaskModel(encoder_config=cfg, params=p, word_vocab=word_vocab,
                     entity_vocab=entity_vocab, labels=list(labels), variant=variant)


def _re_sequence(model: TaskModel, inst: REInstance):
    """Build the input sequence; returns (seq, head_feature_loc, tail_feature_loc)
    where a feature loc is ("word", pos) or ("entity", index)."""
    inst.validate()
    if model.variant == "word-markers":
        hm = model.word_vocab.token_to_id[RE_HEAD_MARKER]
        tm = model.word_vocab.token_to_id[RE_TAIL_MARKER]
        inserts = sorted([
            (inst.head_span[0], hm, "head_open"),
            (inst.head_span[1], hm, None),
            (inst.tail_span[0], tm, "tail_open"),
            (inst.tail_span[1], tm, None),
        ])
        ids = model.word_vocab.encode(inst.tokens)
        out = []
        locs = {}
        prev = 0
        for pos, mid, tag in inserts:
            out.extend(ids[prev:pos])
            if tag:
                locs[tag] = len(out)
            out.append(mid)
            prev = pos
        out.extend(ids[prev:])
        seq = EncodedSequence(word_ids=out)
        return seq, ("word", locs["head_open"]), ("word", locs["tail_open"])
    seq = EncodedSequence(
        word_ids=model.word_vocab.encode(inst.tokens),
        entity_ids=[model.entity_vocab.head_id, model.entity_vocab.tail_id],
        entity_positions=[list(range(*inst.head_span)), list(range(*inst.tail_span))],
    )
    return seq, ("entity", 0), ("entity", 1)


def _re_features(model, insts):
    """Batched forward; returns the (B, 2*hidden) concatenated feature tensor."""
    built = [_re_sequence(model, inst) for inst in insts]
    out = encode_batch(model.params, model.encoder_config, pack_batch([b[0] for b in built]))
    feats = []
    rows = np.arange(len(insts))
    for which in (1, 2):
        kinds = {built[i][which][0] for i in range(len(insts))}
        pos = np.array([built[i][which][1] for i in range(len(insts))])
        src = out.word_tensor if kinds == {"word"} else out.entity_tensor
        feats.append(T.getitem(src, (rows, pos)))
    return T.concat(feats, axis=1)


def re_logits(model: TaskModel, insts):
    f = _re_features(model, insts)
    return T.matmul(f, model.params["re_head.w"]) + model.params["re_head.b"]


def re_classify(model: TaskModel, inst: REInstance):
    logits = re_logits(model, [inst]).data[0]
    return model.labels[int(np.argmax(logits))]


def re_macro_f1(golds, preds, labels):
    """Macro average of per-relation F1."""
    scores = []
    for lab in labels:
        tp = sum(1 for g, p in zip(golds, preds) if g == lab and p == lab)
        fp = sum(1 for g, p in zip(golds, preds) if g != lab and p == lab)
        fn = sum(1 for g, p in zip(golds, preds) if g == lab and p != lab)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# span-enumeration NER


def enumerate_spans(n, max_span_len=NER_MAX_SPAN_LEN):
    """All (start, end) spans with 1 <= end-start <= max_span_len, ordered by
    start then length."""
    return [(s, e) for s in range(n) for e in range(s + 1, min(s + max_span_len, n) + 1)]


def span_candidate_count(n, max_span_len=NER_MAX_SPAN_LEN):
    return sum(n - l + 1 for l in range(1, min(max_span_len, n) + 1))


def make_ner_model(encoder_config, params, word_vocab, entity_vocab, types,
                   variant="word-endpoints", max_span_len=NER_MAX_SPAN_LEN, seed=0):
    if variant not in ("word-endpoints", "entity-mask"):
        raise ContractError(f"unknown NER variant {variant!r}")
    rng = substream(seed, "ner-head")
    p = dict(params)
    in_dim = (2 if variant == "word-endpoints" else 1) * encoder_config.hidden_size
    labels = [NER_NON_ENTITY] + sorted(t for t in types if t != NER_NON_ENTITY)
    p.update(_linear_head(rng, in_dim, len(labels), "ner_head"))
    model = TaskModel(encoder_config=encoder_config, params=p, word_vocab=word_vocab,
                      entity_vocab=entity_vocab, labels=labels, variant=variant)
    model.max_span_len = max_span_len
    return model


def ner_span_logits(model: TaskModel, inst: NERInstance, chunk_size=DEFAULT_NER_CHUNK):
    """Logit tensors over all candidate spans, chunked for the entity variant.

    Returns (spans, list of logits tensors aligned with chunks of spans).
    """
    inst.validate()
    spans = enumerate_spans(len(inst.tokens), model.max_span_len)
    word_ids = model.word_vocab.encode(inst.tokens)
    chunks = []
    if model.variant == "word-endpoints":
        seq = EncodedSequence(word_ids=word_ids)
        out = encode_batch(model.params, model.encoder_config, pack_batch([seq]))
        wv = out.word_tensor
        starts = np.array([s for s, _ in spans])
        ends = np.array([e - 1 for _, e in spans])
        zeros = np.zeros(len(spans), dtype=np.int64)
        f = T.concat([T.getitem(wv, (zeros, starts)), T.getitem(wv, (zeros, ends))], axis=1)
        chunks.append(T.matmul(f, model.params["ner_head.w"]) + model.params["ner_head.b"])
    else:
        mask_id = model.entity_vocab.mask_id
        for lo in range(0, len(spans), chunk_size):
            part = spans[lo : lo + chunk_size]
            seq = EncodedSequence(
                word_ids=word_ids,
                entity_ids=[mask_id] * len(part),
                entity_positions=[list(range(s, e)) for s, e in part],
            )
            out = encode_batch(model.params, model.encoder_config, pack_batch([seq]))
            ev = out.entity_tensor
            idx = np.arange(len(part))
            f = T.getitem(ev, (np.zeros(len(part), dtype=np.int64), idx))
            chunks.append(T.matmul(f, model.params["ner_head.w"]) + model.params["ner_head.b"])
    return spans, chunks


def ner_predict(model: TaskModel, inst: NERInstance):
    """Greedy non-overlapping decode of the highest-scoring typed spans."""
    spans, chunks = ner_span_logits(model, inst)
    logits = np.concatenate([c.data for c in chunks], axis=0)
    preds = np.argmax(logits, axis=1)
    scored = [
        (logits[i, preds[i]], spans[i], model.labels[preds[i]])
        for i in range(len(spans))
        if model.labels[preds[i]] != NER_NON_ENTITY
    ]
    scored.sort(key=lambda x: (-x[0], x[1]))
    taken = []
    for score, (s, e), typ in scored:
        if all(e <= ts or s >= te for ts, te, _ in taken):
            taken.append((s, e, typ))
    return sorted(taken)


def ner_span_f1(golds, preds):
    """Micro F1 over exact (start, end, type) matches, summed across instances."""
    tp = fp = fn = 0
    for g, p in zip(golds, preds):
        gset, pset = set(g), set(p)
        tp += len(gset & pset)
        fp += len(pset - gset)
        fn += len(gset - pset)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneConfig:
    lr: float = 2e-5
    epochs: int = 5  # QA default is 2; RE/NER 5
    batch_size: int = 8
    warmup_frac: float = 0.06
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    seed: int = 0


def finetune_lr_at(step, total_steps, cfg: FinetuneConfig):
    """Linear warmup over the first 6% of steps, then linear decay to zero."""
    warmup = math.ceil(cfg.warmup_frac * total_steps)
    if warmup and step < warmup:
        return cfg.lr * step / warmup
    if total_steps == warmup:
        return cfg.lr
    return cfg.lr * (total_steps - step) / (total_steps - warmup)


def _finetune_loop(model, insts, batch_loss_fn, cfg: FinetuneConfig, eval_fn=None):
    """Shared AdamW + schedule loop; keeps the best dev score's parameters."""
    rng = substream(cfg.seed, "finetune")
    optimizer = AdamW(model.params, beta1=cfg.beta1, beta2=cfg.beta2,
                      eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(insts) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    best = None
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(insts))
        for lo in range(0, len(insts), cfg.batch_size):
            batch = [insts[i] for i in order[lo : lo + cfg.batch_size]]
            loss = batch_loss_fn(model, batch)
            T.zero_grads(model.params)
            T.backward(loss)
            optimizer.step(finetune_lr_at(step, total_steps, cfg))
            step += 1
        if eval_fn is not None:
            score = eval_fn(model)
            if best is None or score >= best[0]:
                best = (score, {n: p.data.copy() for n, p in model.params.items()})
    if best is not None:
        for n, p in model.params.items():
            p.data = best[1][n]
    return model


def _re_batch_loss(model, batch):
    logits = re_logits(model, batch)
    labels = np.array([model.labels.index(inst.label) for inst in batch])
    return T.cross_entropy_logits(logits, labels)


def finetune_re(model: TaskModel, train_insts, dev_insts=None, cfg: FinetuneConfig | None = None):
    cfg = cfg or FinetuneConfig(epochs=5)
    eval_fn = None
    if dev_insts:
        def eval_fn(m):
            preds = [re_classify(m, i) for i in dev_insts]
            return re_macro_f1([i.label for i in dev_insts], preds, m.labels)
    return _finetune_loop(model, train_insts, _re_batch_loss, cfg, eval_fn)


def _ner_batch_loss(model, batch):
    losses = []
    for inst in batch:
        spans, chunks = ner_span_logits(model, inst)
        gold = {(s, e): t for s, e, t in inst.gold_spans}
        labels = np.array([model.labels.index(gold.get(sp, NER_NON_ENTITY)) for sp in spans])
        lo = 0
        for c in chunks:
            k = c.shape[0]
            losses.append(T.cross_entropy_logits(c, labels[lo : lo + k]))
            lo += k
    return T.scale(sum(losses[1:], losses[0]), 1.0 / len(losses))


def finetune_ner(model: TaskModel, train_insts, dev_insts=None, cfg: FinetuneConfig | None = None):
    cfg = cfg or FinetuneConfig(epochs=5)
    eval_fn = None
    if dev_insts:
        def eval_fn(m):
            preds = [ner_predict(m, i) for i in dev_insts]
            return ner_span_f1([i.gold_spans for i in dev_insts], preds)
    return _finetune_loop(model, train_insts, _ner_batch_loss, cfg, eval_fn)


def _qa_batch_loss(model, batch):
    losses = []
    use_entities = model.variant == "entity"
    for inst in batch:
        if not inst.gold_spans:
            continue
        max_pos = model.encoder_config.max_positions
        hi = min(len(inst.context_tokens), max_pos - len(inst.question_tokens))
        seq, off = _qa_sequence(model, inst, 0, hi, use_entities)
        logits, _ = _qa_logits(model, seq)
        gs, ge = inst.gold_spans[0]
        if ge > hi:
            continue
        m = len(seq.word_ids)
        valid = np.full((1, m), NEG_INF)
        valid[0, off : off + hi] = 0.0
        start_row = T.reshape(logits[:, :, 0], (1, m)) + T.constant(valid)
        end_row = T.reshape(logits[:, :, 1], (1, m)) + T.constant(valid)
        losses.append(T.cross_entropy_logits(start_row, np.array([off + gs])))
        losses.append(T.cross_entropy_logits(end_row, np.array([off + ge - 1])))
    if not losses:
        raise ContractError("QA batch without any usable gold span")
    return T.scale(sum(losses[1:], losses[0]), 1.0 / len(losses))


def finetune_qa(model: TaskModel, train_insts, dev_insts=None, cfg: FinetuneConfig | None = None):
    cfg = cfg or FinetuneConfig(epochs=2)
    eval_fn = None
    if dev_insts:
        def eval_fn(m):
            preds = {i.qid: qa_predict(m, i)["text"] for i in dev_insts}
            golds = {i.qid: (i.q_lang, i.c_lang, i.answers) for i in dev_insts}
            rep = qa_metrics(preds, golds)
            vals = [v["f1"] for v in rep["pairs"].values()]
            return sum(vals) / len(vals)
    return _finetune_loop(model, train_insts, _qa_batch_loss, cfg, eval_fn)
