"""Command-line surface: manifests, reruns, exit codes."""

import json
import os

import pytest

from entlm.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from entlm.corpus import save_corpus
from entlm.heads import REInstance, save_re_data
from entlm.synth import make_bilingual_corpus

CONFIG_TEXT = """
[model]
hidden_size = 16
entity_emb_size = 8
layers = 1
heads = 2
ffn_size = 32
max_positions = 16
dropout = 0.0

[train]
total_steps = 6
stage1_steps = 2
batch_size = 2
warmup_steps = 2
seed = 21
log_interval = 2

[data]
corpus = {corpus}
entity_vocab = {vocab}
max_words = 16
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    docs, links = make_bilingual_corpus(n_entities=6, n_sequences=40, seed=5)
    corpus_path = str(ws / "corpus.jsonl")
    links_path = str(ws / "links.tsv")
    save_corpus(docs, corpus_path)
    links.save_tsv(links_path)
    vocab_path = str(ws / "entities.tsv")
    rc = main(["build-vocab", "--corpus", corpus_path, "--links", links_path,
               "--out", vocab_path, "--min-languages", "2"])
    assert rc == EXIT_OK
    cfg_path = str(ws / "run.cfg")
    with open(cfg_path, "w") as f:
        f.write(CONFIG_TEXT.format(corpus=corpus_path, vocab=vocab_path))
    return {"ws": ws, "corpus": corpus_path, "links": links_path,
            "vocab": vocab_path, "config": cfg_path}


def test_build_vocab_writes_manifest(workspace):
    manifest = json.load(open(workspace["vocab"] + ".manifest.json"))
    assert manifest["command"] == "build-vocab"
    assert workspace["corpus"] in manifest["input_digests"]
    assert len(manifest["input_digests"][workspace["corpus"]]) == 64  # sha256 hex
    assert "entlm" in manifest["versions"]


def test_link_entities_annotates(workspace):
    out = str(workspace["ws"] / "linked.jsonl")
    rc = main(["link-entities", "--pages", workspace["corpus"],
               "--text", workspace["corpus"], "--vocab", workspace["vocab"],
               "--out", out, "--min-link-prob", "0.0"])
    assert rc == EXIT_OK
    rows = [json.loads(l) for l in open(out)]
    assert rows and any(r["annotations"] for r in rows)
    for r in rows:
        for s, e, eid in r["annotations"]:
            assert 0 <= s < e and eid >= 4  # real entities, not specials


@pytest.fixture(scope="module")
def pretrained(workspace):
    out = str(workspace["ws"] / "pretrain")
    rc = main(["pretrain", "--config", workspace["config"], "--out", out])
    assert rc == EXIT_OK
    return out


def test_pretrain_outputs(pretrained):
    assert os.path.exists(os.path.join(pretrained, "checkpoint-final.bin"))
    assert os.path.exists(os.path.join(pretrained, "word_vocab.txt"))
    log = open(os.path.join(pretrained, "train_log.tsv")).read().strip().splitlines()
    assert len(log) >= 3
    manifest = json.load(open(os.path.join(pretrained, "manifest.json")))
    assert manifest["command"] == "pretrain"
    assert manifest["seed"] == 21


def test_pretrain_rerun_is_bit_identical(workspace, pretrained):
    out2 = str(workspace["ws"] / "pretrain-rerun")
    rc = main(["rerun", os.path.join(pretrained, "manifest.json"), "--out", out2])
    assert rc == EXIT_OK
    a = open(os.path.join(pretrained, "checkpoint-final.bin"), "rb").read()
    b = open(os.path.join(out2, "checkpoint-final.bin"), "rb").read()
    assert a == b


def test_pretrain_seed_flag_changes_result(workspace, pretrained):
    out2 = str(workspace["ws"] / "pretrain-seed")
    rc = main(["pretrain", "--config", workspace["config"], "--out", out2, "--seed", "99"])
    assert rc == EXIT_OK
    a = open(os.path.join(pretrained, "checkpoint-final.bin"), "rb").read()
    b = open(os.path.join(out2, "checkpoint-final.bin"), "rb").read()
    assert a != b


def test_pretrain_set_override(workspace):
    out = str(workspace["ws"] / "pretrain-set")
    rc = main(["pretrain", "--config", workspace["config"], "--out", out,
               "--set", "train.total_steps=3", "--set", "train.stage1_steps=0"])
    assert rc == EXIT_OK
    from entlm.pretrain import load_checkpoint
    assert load_checkpoint(os.path.join(out, "checkpoint-final.bin")).step == 3


@pytest.fixture(scope="module")
def finetuned(workspace, pretrained):
    re_path = str(workspace["ws"] / "re_train.tsv")
    insts = []
    for _ in range(6):
        insts.append(REInstance(tokens="t0a_en ent0_en t0b_en t0c_en".split(),
                                head_span=(1, 2), tail_span=(3, 4), label="r1"))
        insts.append(REInstance(tokens="t1a_en ent1_en t1b_en t1c_en".split(),
                                head_span=(1, 2), tail_span=(3, 4), label="r2"))
    save_re_data(insts, re_path)
    out = str(workspace["ws"] / "finetune")
    rc = main(["finetune", "re",
               "--checkpoint", os.path.join(pretrained, "checkpoint-final.bin"),
               "--train", re_path, "--dev", re_path, "--out", out,
               "--word-vocab", os.path.join(pretrained, "word_vocab.txt"),
               "--entity-vocab", workspace["vocab"],
               "--variant", "entity", "--epochs", "2", "--lr", "0.005"])
    assert rc == EXIT_OK
    return {"out": out, "re": re_path}


def test_finetune_outputs(finetuned):
    ckpt = os.path.join(finetuned["out"], "checkpoint-finetuned.bin")
    assert os.path.exists(ckpt)
    from entlm.pretrain import load_checkpoint
    meta = load_checkpoint(ckpt).meta
    assert meta["task"] == "re"
    assert meta["variant"] == "entity-mask"
    assert sorted(meta["labels"]) == ["r1", "r2"]


def test_finetune_rerun_is_bit_identical(workspace, finetuned):
    out2 = str(workspace["ws"] / "finetune-rerun")
    rc = main(["rerun", os.path.join(finetuned["out"], "manifest.json"), "--out", out2])
    assert rc == EXIT_OK
    a = open(os.path.join(finetuned["out"], "checkpoint-finetuned.bin"), "rb").read()
    b = open(os.path.join(out2, "checkpoint-finetuned.bin"), "rb").read()
    assert a == b


def test_eval_reports_metrics(workspace, finetuned):
    out = str(workspace["ws"] / "re_eval.json")
    rc = main(["eval", "re",
               "--checkpoint", os.path.join(finetuned["out"], "checkpoint-finetuned.bin"),
               "--data", finetuned["re"], "--out", out,
               "--word-vocab", os.path.join(finetuned["out"], "word_vocab.txt"),
               "--entity-vocab", workspace["vocab"]])
    assert rc == EXIT_OK
    report = json.load(open(out))
    assert 0.0 <= report["macro_f1"] <= 1.0
    assert report["n"] == 12


def test_eval_task_mismatch_is_config_error(workspace, finetuned):
    rc = main(["eval", "qa",
               "--checkpoint", os.path.join(finetuned["out"], "checkpoint-finetuned.bin"),
               "--data", finetuned["re"], "--out", str(workspace["ws"] / "x.json"),
               "--word-vocab", os.path.join(finetuned["out"], "word_vocab.txt"),
               "--entity-vocab", workspace["vocab"]])
    assert rc == EXIT_CONFIG


def test_cloze_eval_runs(workspace, pretrained):
    queries = str(workspace["ws"] / "queries.jsonl")
    with open(queries, "w") as f:
        f.write(json.dumps({
            "lang": "en", "template": "[X] t0b_en [Y] .", "sub_surface": "t0a_en",
            "candidates": [{"surface": "ent0_en"}, {"surface": "ent1_en"}],
            "gold_index": 0}) + "\n")
    out = str(workspace["ws"] / "cloze.json")
    rc = main(["cloze-eval", "--checkpoint", os.path.join(pretrained, "checkpoint-final.bin"),
               "--queries", queries, "--mode", "entity-y", "--out", out,
               "--word-vocab", os.path.join(pretrained, "word_vocab.txt"),
               "--entity-vocab", workspace["vocab"]])
    assert rc == EXIT_OK
    report = json.load(open(out))
    assert report["mode"] == "entity-y"
    assert report["records"][0]["used_entity"] in (True, False)


def test_dump_features_and_analyze(workspace, pretrained):
    data = str(workspace["ws"] / "spans.jsonl")
    with open(data, "w") as f:
        for i, lang in enumerate(["en", "en", "de", "de"]):
            f.write(json.dumps({
                "id": f"s{i}", "lang": lang,
                "tokens": [f"t0a_{lang}", f"ent{i % 2}_{lang}", f"t0b_{lang}"],
                "span": [1, 2]}) + "\n")
    emb = str(workspace["ws"] / "emb.jsonl")
    rc = main(["dump-features", "--checkpoint", os.path.join(pretrained, "checkpoint-final.bin"),
               "--data", data, "--feature-spec", "span-mean", "--out", emb,
               "--word-vocab", os.path.join(pretrained, "word_vocab.txt"),
               "--entity-vocab", workspace["vocab"]])
    assert rc == EXIT_OK

    out = str(workspace["ws"] / "mod.json")
    rc = main(["analyze", "modularity", "--embeddings", emb, "--k", "1", "--out", out])
    assert rc == EXIT_OK
    report = json.load(open(out))
    assert report["n"] == 4 and -1.0 <= report["modularity"] <= 1.0

    gold = str(workspace["ws"] / "gold.json")
    with open(gold, "w") as f:
        json.dump({"s0": "s2", "s1": "s3"}, f)
    qf = str(workspace["ws"] / "q.jsonl")
    pf = str(workspace["ws"] / "p.jsonl")
    lines = open(emb).read().splitlines()
    open(qf, "w").write("\n".join(lines[:2]) + "\n")
    open(pf, "w").write("\n".join(lines[2:]) + "\n")
    out = str(workspace["ws"] / "cwr.json")
    rc = main(["analyze", "cwr", "--queries", qf, "--pool", pf, "--gold", gold, "--out", out])
    assert rc == EXIT_OK
    assert 0.0 < json.load(open(out))["mrr"] <= 1.0


def test_inspect_checkpoint(capsys, pretrained):
    rc = main(["inspect-checkpoint", "--checkpoint",
               os.path.join(pretrained, "checkpoint-final.bin")])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["step"] == 6
    assert "word_emb" in summary["tensors"]


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["pretrain"])  # missing required options
    assert exc.value.code == 2


def test_bad_config_key_exits_3(workspace):
    out = str(workspace["ws"] / "bad")
    rc = main(["pretrain", "--config", workspace["config"], "--out", out,
               "--set", "train.not_a_field=1"])
    assert rc == EXIT_CONFIG


def test_corrupt_checkpoint_exits_1(workspace):
    bad = str(workspace["ws"] / "bad.bin")
    with open(bad, "wb") as f:
        f.write(b"junk")
    rc = main(["inspect-checkpoint", "--checkpoint", bad])
    assert rc == EXIT_FAILURE
