"""Entity vocabulary: merging, ranking, specials, file round trips."""

import pytest

from entlm.corpus import AnnotatedDocument
from entlm.errors import ContractError
from entlm.vocab import (
    HEAD_ENTITY_ID,
    MASK_ENTITY_ID,
    PAD_ENTITY_ID,
    SPECIAL_ENTITIES,
    TAIL_ENTITY_ID,
    EntityVocab,
    InterLanguageLinks,
    MentionStats,
    build_entity_vocab,
    collect_mention_stats,
)


def doc(lang, tokens, anns, title="page"):
    return AnnotatedDocument(language=lang, title=title, tokens=tokens,
                             annotations=anns, sentence_breaks=None).validate()


@pytest.fixture
def links():
    il = InterLanguageLinks()
    for lang, title in [("en", "Tokyo"), ("ja", "東京"), ("de", "Tokio")]:
        il.add(lang, title, "tokyo")
    for lang, title in [("en", "Japan"), ("ja", "日本")]:
        il.add(lang, title, "japan")
    return il


@pytest.fixture
def corpus_docs():
    return [
        doc("en", ["Tokyo", "is", "in", "Japan"], [(0, 1, "Tokyo"), (3, 4, "Japan")]),
        doc("ja", ["東京", "は", "日本"], [(0, 1, "東京"), (2, 3, "日本")]),
        doc("de", ["Tokio", "liegt", "hier"], [(0, 1, "Tokio")]),
    ]


def test_special_ids_are_fixed():
    assert (PAD_ENTITY_ID, MASK_ENTITY_ID, HEAD_ENTITY_ID, TAIL_ENTITY_ID) == (0, 1, 2, 3)
    assert len(SPECIAL_ENTITIES) == 4


def test_build_filters_by_language_spread(corpus_docs, links):
    ev = build_entity_vocab(corpus_docs, links, min_languages=3)
    # only tokyo appears in >= 3 languages
    assert len(ev) == len(SPECIAL_ENTITIES) + 1
    assert ev.resolve("en", "Tokyo") == ev.resolve("ja", "東京") == ev.resolve("de", "Tokio")
    assert ev.resolve("en", "Japan") is None


def test_build_two_language_threshold(corpus_docs, links):
    ev = build_entity_vocab(corpus_docs, links, min_languages=2)
    assert len(ev) == len(SPECIAL_ENTITIES) + 2
    assert ev.resolve("ja", "日本") is not None


def test_ranking_by_count_then_key(links):
    docs = [
        doc("en", ["Tokyo", "Japan", "Japan"], [(0, 1, "Tokyo"), (1, 2, "Japan"), (2, 3, "Japan")]),
        doc("ja", ["東京", "日本"], [(0, 1, "東京"), (1, 2, "日本")]),
    ]
    ev = build_entity_vocab(docs, links, min_languages=2)
    # japan has 3 links, tokyo 2 -> japan gets the lower id
    assert ev.resolve_key("japan") < ev.resolve_key("tokyo")

    tie_docs = [
        doc("en", ["Tokyo", "Japan"], [(0, 1, "Tokyo"), (1, 2, "Japan")]),
        doc("ja", ["東京", "日本"], [(0, 1, "東京"), (1, 2, "日本")]),
    ]
    ev = build_entity_vocab(tie_docs, links, min_languages=2)
    assert ev.resolve_key("japan") < ev.resolve_key("tokyo")  # lexicographic tie-break


def test_top_k_truncation(corpus_docs, links):
    ev = build_entity_vocab(corpus_docs, links, min_languages=2, top_k=1)
    assert len(ev) == len(SPECIAL_ENTITIES) + 1


def test_corpus_order_invariance(corpus_docs, links):
    a = build_entity_vocab(corpus_docs, links, min_languages=2)
    b = build_entity_vocab(list(reversed(corpus_docs)), links, min_languages=2)
    assert [e.canonical_key for e in a.entries] == [e.canonical_key for e in b.entries]


def test_unaligned_title_gets_language_scoped_key(links):
    assert links.canonical_key("en", "Unlinked_Page") == "en:Unlinked_Page"


def test_vocab_file_round_trip(tmp_path, corpus_docs, links):
    ev = build_entity_vocab(corpus_docs, links, min_languages=2)
    path = str(tmp_path / "entities.tsv")
    ev.save(path)
    loaded = EntityVocab.load(path)
    assert len(loaded) == len(ev)
    for i, e in enumerate(ev.entries):
        assert loaded.entries[i].canonical_key == e.canonical_key
        assert loaded.entries[i].link_count == e.link_count
        assert loaded.entries[i].titles == e.titles


def test_vocab_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("not a vocab file\n")
    with pytest.raises(ContractError):
        EntityVocab.load(str(path))


def test_links_tsv_round_trip(tmp_path, links):
    path = str(tmp_path / "links.tsv")
    links.save_tsv(path)
    loaded = InterLanguageLinks.load_tsv(path)
    assert loaded.canonical_key("ja", "東京") == "tokyo"
    assert loaded.titles_for_key("tokyo") == links.titles_for_key("tokyo")


def test_link_probability():
    stats = MentionStats()
    stats.add("en", "Tokyo", hyperlink=5, total=100)
    assert stats.link_probability("en", "Tokyo") == pytest.approx(0.05)
    assert stats.link_probability("en", "unseen") is None


def test_collect_mention_stats_counts_unlinked_occurrences():
    d = doc("en", ["Tokyo", "loves", "Tokyo", "Tower"], [(0, 1, "Tokyo")])
    stats = collect_mention_stats([d])
    # surface "Tokyo" occurs twice, hyperlinked once
    assert stats.link_probability("en", "Tokyo") == pytest.approx(0.5)
