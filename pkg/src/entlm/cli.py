"""Command-line surface tying the modules into reproducible runs.

Every command writes a manifest (resolved options, seed, versions, input
digests) next to its output; `entlm rerun <manifest>` replays a run, which
in deterministic mode reproduces outputs bit-exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import align, cloze, corpus, heads, linker, pretrain, vocab as vocab_mod
from .config import parse_config_file, parse_overrides, resolve, section
from .encoder import EncoderConfig
from .errors import ConfigError, EntlmError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(manifest_path, command, options, seed, input_paths):
    manifest = {
        "command": command,
        "options": {k: v for k, v in options.items() if k != "func"},
        "seed": seed,
        "versions": {
            "entlm": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "input_digests": {p: _digest(p) for p in input_paths if p and os.path.exists(p)},
    }
    os.makedirs(os.path.dirname(os.path.abspath(manifest_path)), exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return manifest_path


def _file_manifest_path(out_file):
    return out_file + ".manifest.json"


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


# ---------------------------------------------------------------------------
# build-vocab


def cmd_build_vocab(args):
    docs = corpus.load_corpus(args.corpus)
    links = vocab_mod.InterLanguageLinks.load_tsv(args.links)
    ev = vocab_mod.build_entity_vocab(docs, links, min_languages=args.min_languages, top_k=args.top_k)
    ev.save(args.out)
    write_manifest(_file_manifest_path(args.out), "build-vocab", vars(args),
                   seed=None, input_paths=[args.corpus, args.links])
    print(f"wrote {len(ev)} entities ({len(vocab_mod.SPECIAL_ENTITIES)} specials) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# link-entities


def cmd_link_entities(args):
    page_docs = corpus.load_corpus(args.pages)
    ev = vocab_mod.EntityVocab.load(args.vocab)
    stats = vocab_mod.collect_mention_stats(page_docs)
    mention_map = linker.build_mention_map(page_docs, ev)
    text_docs = corpus.load_corpus(args.text)
    with open(args.out, "w", encoding="utf-8") as f:
        for doc in text_docs:
            anns = linker.detect_entities(doc.tokens, mention_map, stats=stats,
                                          language=doc.language, min_link_prob=args.min_link_prob)
            f.write(json.dumps({"lang": doc.language, "title": doc.title,
                                "annotations": [list(a) for a in anns]}, ensure_ascii=False) + "\n")
    write_manifest(_file_manifest_path(args.out), "link-entities", vars(args),
                   seed=None, input_paths=[args.pages, args.vocab, args.text])
    return EXIT_OK


# ---------------------------------------------------------------------------
# pretrain


_MODEL_FIELD_TYPES = {
    "hidden_size": int, "entity_emb_size": int, "layers": int, "heads": int,
    "ffn_size": int, "max_positions": int, "type_count": int,
    "dropout": float, "entity_position_mode": str, "layer_norm_eps": float,
}

_TRAIN_FIELD_TYPES = {
    "total_steps": int, "stage1_steps": int, "batch_size": int,
    "peak_lr": float, "stage1_peak_lr": float, "warmup_steps": int,
    "weight_decay": float, "beta1": float, "beta2": float, "adam_eps": float,
    "seed": int, "stage1_trainable_patterns": tuple,
    "word_mask_p": float, "word_random_p": float, "word_keep_p": float,
    "entity_mask_p": float, "alpha": float,
    "checkpoint_interval": int, "log_interval": int,
}

_DATA_FIELD_TYPES = {
    "corpus": str, "entity_vocab": str, "max_words": int,
    "entity_cap": int, "word_min_count": int,
}


def _pretrain_config(args):
    schema = {f"model.{k}": t for k, t in _MODEL_FIELD_TYPES.items()}
    schema.update({f"train.{k}": t for k, t in _TRAIN_FIELD_TYPES.items()})
    schema.update({f"data.{k}": t for k, t in _DATA_FIELD_TYPES.items()})
    file_values = parse_config_file(args.config)
    values = resolve(schema, file_values, parse_overrides(args.set))
    if args.seed is not None:
        values["train.seed"] = args.seed
    return values


def cmd_pretrain(args):
    values = _pretrain_config(args)
    data = section(values, "data")
    if "corpus" not in data or "entity_vocab" not in data:
        raise ConfigError("config must set data.corpus and data.entity_vocab")

    docs = corpus.load_corpus(data["corpus"])
    entity_vocab = vocab_mod.EntityVocab.load(data["entity_vocab"])
    word_vocab = corpus.build_word_vocab(docs, min_count=data.get("word_min_count", 1))

    max_words = data.get("max_words", corpus.DEFAULT_MAX_WORDS)
    entity_cap = data.get("entity_cap", corpus.DEFAULT_ENTITY_CAP)
    sequences_by_language = {}
    for doc in docs:
        for seq_doc in corpus.split_sequences(doc, max_words=max_words):
            seq = corpus.encode_document(seq_doc, word_vocab, entity_vocab, entity_cap=entity_cap)
            sequences_by_language.setdefault(doc.language, []).append(seq)

    encoder_config = EncoderConfig(
        word_vocab_size=len(word_vocab),
        entity_vocab_size=len(entity_vocab),
        **section(values, "model"),
    ).validate()
    train_config = pretrain.TrainConfig(**section(values, "train")).validate()

    os.makedirs(args.out, exist_ok=True)
    word_vocab.save(os.path.join(args.out, "word_vocab.txt"))
    result = pretrain.train(
        encoder_config, train_config, sequences_by_language, word_vocab, entity_vocab,
        out_dir=args.out, log_file=os.path.join(args.out, "train_log.tsv"),
    )
    write_manifest(os.path.join(args.out, "manifest.json"), "pretrain", vars(args),
                   seed=train_config.seed, input_paths=[args.config, data["corpus"], data["entity_vocab"]])
    print(f"pretrained {result.step} steps -> {result.final_checkpoint}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# finetune / eval


def _load_model_parts(args):
    ckpt = pretrain.load_checkpoint(args.checkpoint)
    word_vocab = corpus.WordVocab.load(args.word_vocab)
    entity_vocab = vocab_mod.EntityVocab.load(args.entity_vocab)
    return ckpt, word_vocab, entity_vocab


def cmd_finetune(args):
    ckpt, word_vocab, entity_vocab = _load_model_parts(args)
    cfg = heads.FinetuneConfig(
        lr=args.lr, epochs=args.epochs if args.epochs else (2 if args.task == "qa" else 5),
        batch_size=args.batch_size, seed=args.seed or 0,
    )
    os.makedirs(args.out, exist_ok=True)
    dev = None
    if args.task == "qa":
        train_insts = heads.load_qa_data(args.train)
        dev = heads.load_qa_data(args.dev) if args.dev else None
        model = heads.make_qa_model(ckpt.encoder_config, ckpt.params, word_vocab, entity_vocab,
                                    use_entities=args.variant == "entity", seed=cfg.seed)
        model = heads.finetune_qa(model, train_insts, dev, cfg)
        meta = {"task": "qa", "variant": model.variant}
    elif args.task == "re":
        train_insts = heads.load_re_data(args.train)
        dev = heads.load_re_data(args.dev) if args.dev else None
        labels = sorted({i.label for i in train_insts})
        variant = "entity-mask" if args.variant == "entity" else "word-markers"
        model = heads.make_re_model(ckpt.encoder_config, ckpt.params, word_vocab, entity_vocab,
                                    labels, variant=variant, seed=cfg.seed)
        model = heads.finetune_re(model, train_insts, dev, cfg)
        meta = {"task": "re", "variant": model.variant, "labels": model.labels}
    elif args.task == "ner":
        train_insts = heads.load_ner_data(args.train)
        dev = heads.load_ner_data(args.dev) if args.dev else None
        types = sorted({t for i in train_insts for _, _, t in i.gold_spans})
        variant = "entity-mask" if args.variant == "entity" else "word-endpoints"
        model = heads.make_ner_model(ckpt.encoder_config, ckpt.params, word_vocab, entity_vocab,
                                     types, variant=variant, max_span_len=args.max_span_len, seed=cfg.seed)
        model = heads.finetune_ner(model, train_insts, dev, cfg)
        meta = {"task": "ner", "variant": model.variant, "labels": model.labels,
                "max_span_len": args.max_span_len}
    else:
        raise ConfigError(f"unknown task {args.task!r}")

    model.word_vocab.save(os.path.join(args.out, "word_vocab.txt"))
    out_ckpt = os.path.join(args.out, "checkpoint-finetuned.bin")
    pretrain.save_checkpoint(out_ckpt, model.encoder_config, model.params, step=0, meta=meta)
    write_manifest(os.path.join(args.out, "manifest.json"), "finetune", vars(args),
                   seed=cfg.seed, input_paths=[args.checkpoint, args.train, args.dev or "",
                                               args.word_vocab, args.entity_vocab])
    print(f"finetuned {args.task} ({meta['variant']}) -> {out_ckpt}")
    return EXIT_OK


def _task_model_from_checkpoint(ckpt, word_vocab, entity_vocab):
    meta = ckpt.meta
    model = heads.TaskModel(
        encoder_config=ckpt.encoder_config, params=ckpt.params,
        word_vocab=word_vocab, entity_vocab=entity_vocab,
        labels=meta.get("labels"), variant=meta["variant"],
    )
    if meta["task"] == "ner":
        model.max_span_len = meta.get("max_span_len", heads.NER_MAX_SPAN_LEN)
    return model


def cmd_eval(args):
    ckpt, word_vocab, entity_vocab = _load_model_parts(args)
    model = _task_model_from_checkpoint(ckpt, word_vocab, entity_vocab)
    task = ckpt.meta["task"]
    if args.task and args.task != task:
        raise ConfigError(f"checkpoint holds a {task} head, not {args.task}")
    if task == "qa":
        insts = heads.load_qa_data(args.data)
        preds = {i.qid: heads.qa_predict(model, i)["text"] for i in insts}
        golds = {i.qid: (i.q_lang, i.c_lang, i.answers) for i in insts}
        report = heads.qa_metrics(preds, golds)
    elif task == "re":
        insts = heads.load_re_data(args.data)
        preds = [heads.re_classify(model, i) for i in insts]
        golds = [i.label for i in insts]
        report = {
            "macro_f1": heads.re_macro_f1(golds, preds, model.labels),
            "accuracy": sum(g == p for g, p in zip(golds, preds)) / len(golds),
            "n": len(golds),
        }
    else:
        insts = heads.load_ner_data(args.data)
        preds = [heads.ner_predict(model, i) for i in insts]
        report = {"span_f1": heads.ner_span_f1([i.gold_spans for i in insts], preds), "n": len(insts)}
    _write_json(args.out, report)
    write_manifest(_file_manifest_path(args.out), "eval", vars(args), seed=None,
                   input_paths=[args.checkpoint, args.data, args.word_vocab, args.entity_vocab])
    print(json.dumps(report, sort_keys=True)[:2000])
    return EXIT_OK


# ---------------------------------------------------------------------------
# cloze-eval


def cmd_cloze_eval(args):
    ckpt, word_vocab, entity_vocab = _load_model_parts(args)
    model = cloze.ClozeModel(encoder_config=ckpt.encoder_config, params=ckpt.params,
                             word_vocab=word_vocab, entity_vocab=entity_vocab)
    queries = cloze.load_queries(args.queries)
    report = cloze.evaluate(model, queries, mode=args.mode)
    report["fp_analysis"] = cloze.fp_analysis(report["records"])
    _write_json(args.out, report)
    write_manifest(_file_manifest_path(args.out), "cloze-eval", vars(args), seed=None,
                   input_paths=[args.checkpoint, args.queries, args.word_vocab, args.entity_vocab])
    print(f"accuracy[{args.mode}] = {report['accuracy']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dump-features / analyze


def cmd_dump_features(args):
    ckpt, word_vocab, entity_vocab = _load_model_parts(args)
    model = cloze.ClozeModel(encoder_config=ckpt.encoder_config, params=ckpt.params,
                             word_vocab=word_vocab, entity_vocab=entity_vocab)
    if args.feature_spec in ("re-word", "re-entity"):
        insts = heads.load_re_data(args.data)
        dataset = [(f"{args.lang}-{i}", args.lang, inst) for i, inst in enumerate(insts)]
    else:
        dataset = []
        with open(args.data, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                dataset.append((str(d["id"]), d["lang"], {
                    "word_ids": word_vocab.encode(d["tokens"]),
                    "span": tuple(d["span"]),
                    "text": " ".join(d["tokens"][d["span"][0]:d["span"][1]]),
                }))
    align.feature_dump(model, dataset, args.feature_spec, out_path=args.out)
    write_manifest(_file_manifest_path(args.out), "dump-features", vars(args), seed=None,
                   input_paths=[args.checkpoint, args.data, args.word_vocab, args.entity_vocab])
    return EXIT_OK


def cmd_analyze(args):
    if args.metric == "cwr":
        queries = align.load_embeddings(args.queries)
        pool = align.load_embeddings(args.pool)
        with open(args.gold, encoding="utf-8") as f:
            gold = json.load(f)
        report = {"mrr": align.cwr_mrr(queries, pool, gold),
                  "n_queries": len(queries), "n_pool": len(pool)}
        inputs = [args.queries, args.pool, args.gold]
    else:
        emb = align.load_embeddings(args.embeddings)
        report = {"modularity": align.modularity(emb, k=args.k), "k": args.k, "n": len(emb)}
        inputs = [args.embeddings]
    _write_json(args.out, report)
    write_manifest(_file_manifest_path(args.out), "analyze", vars(args), seed=None, input_paths=inputs)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect-checkpoint / rerun


def cmd_inspect_checkpoint(args):
    ckpt = pretrain.load_checkpoint(args.checkpoint)
    summary = {
        "step": ckpt.step,
        "encoder_config": ckpt.encoder_config.to_dict(),
        "meta": ckpt.meta,
        "tensors": {n: list(p.shape) for n, p in sorted(ckpt.params.items())},
        "n_parameters": int(sum(p.data.size for p in ckpt.params.values())),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_rerun(args):
    with open(args.manifest, encoding="utf-8") as f:
        manifest = json.load(f)
    options = dict(manifest["options"])
    if args.out:
        options["out"] = args.out
    handler = _COMMAND_HANDLERS[manifest["command"]]
    return handler(argparse.Namespace(**options))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="entlm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    bv = sub.add_parser("build-vocab", help="build the merged entity vocabulary")
    bv.add_argument("--corpus", required=True)
    bv.add_argument("--links", required=True)
    bv.add_argument("--out", required=True)
    bv.add_argument("--min-languages", type=int, default=3)
    bv.add_argument("--top-k", type=int, default=1_200_000)
    bv.set_defaults(func=cmd_build_vocab)

    le = sub.add_parser("link-entities", help="heuristic entity detection over documents")
    le.add_argument("--pages", required=True, help="annotated source pages (mention map + stats)")
    le.add_argument("--text", required=True, help="documents to annotate")
    le.add_argument("--vocab", required=True)
    le.add_argument("--out", required=True)
    le.add_argument("--min-link-prob", type=float, default=linker.DEFAULT_MIN_LINK_PROB)
    le.set_defaults(func=cmd_link_entities)

    pt = sub.add_parser("pretrain", help="two-stage MLM+MEP pretraining")
    pt.add_argument("--config", required=True)
    pt.add_argument("--set", action="append", default=[], help="override: key=value")
    pt.add_argument("--out", required=True)
    pt.add_argument("--seed", type=int, default=None)
    pt.set_defaults(func=cmd_pretrain)

    ft = sub.add_parser("finetune", help="finetune a task head")
    ft.add_argument("task", choices=["qa", "re", "ner"])
    ft.add_argument("--checkpoint", required=True)
    ft.add_argument("--train", required=True)
    ft.add_argument("--dev", default=None)
    ft.add_argument("--out", required=True)
    ft.add_argument("--word-vocab", required=True)
    ft.add_argument("--entity-vocab", required=True)
    ft.add_argument("--variant", choices=["word", "entity"], default="word")
    ft.add_argument("--epochs", type=int, default=None)
    ft.add_argument("--batch-size", type=int, default=8)
    ft.add_argument("--lr", type=float, default=2e-5)
    ft.add_argument("--max-span-len", type=int, default=heads.NER_MAX_SPAN_LEN)
    ft.add_argument("--seed", type=int, default=0)
    ft.set_defaults(func=cmd_finetune)

    ev = sub.add_parser("eval", help="evaluate a finetuned checkpoint")
    ev.add_argument("task", choices=["qa", "re", "ner"], nargs="?", default=None)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--word-vocab", required=True)
    ev.add_argument("--entity-vocab", required=True)
    ev.set_defaults(func=cmd_eval)

    cz = sub.add_parser("cloze-eval", help="typed cloze-prompt evaluation")
    cz.add_argument("--checkpoint", required=True)
    cz.add_argument("--queries", required=True)
    cz.add_argument("--mode", choices=list(cloze.MODES), default="word")
    cz.add_argument("--out", required=True)
    cz.add_argument("--word-vocab", required=True)
    cz.add_argument("--entity-vocab", required=True)
    cz.set_defaults(func=cmd_cloze_eval)

    df = sub.add_parser("dump-features", help="write span/RE feature embeddings")
    df.add_argument("--checkpoint", required=True)
    df.add_argument("--data", required=True)
    df.add_argument("--feature-spec", choices=list(align.FEATURE_SPECS), required=True)
    df.add_argument("--lang", default="en")
    df.add_argument("--out", required=True)
    df.add_argument("--word-vocab", required=True)
    df.add_argument("--entity-vocab", required=True)
    df.set_defaults(func=cmd_dump_features)

    an = sub.add_parser("analyze", help="alignment diagnostics on embedding files")
    an.add_argument("metric", choices=["cwr", "modularity"])
    an.add_argument("--queries")
    an.add_argument("--pool")
    an.add_argument("--gold")
    an.add_argument("--embeddings")
    an.add_argument("--k", type=int, default=3)
    an.add_argument("--out", required=True)
    an.set_defaults(func=cmd_analyze)

    ic = sub.add_parser("inspect-checkpoint", help="summarize a checkpoint file")
    ic.add_argument("--checkpoint", required=True)
    ic.set_defaults(func=cmd_inspect_checkpoint)

    rr = sub.add_parser("rerun", help="replay a run from its manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", default=None)
    rr.set_defaults(func=cmd_rerun)

    return p


_COMMAND_HANDLERS = {
    "build-vocab": cmd_build_vocab,
    "link-entities": cmd_link_entities,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "cloze-eval": cmd_cloze_eval,
    "dump-features": cmd_dump_features,
    "analyze": cmd_analyze,
    "inspect-checkpoint": cmd_inspect_checkpoint,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EntlmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
