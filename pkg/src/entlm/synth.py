"""Synthetic bilingual fixture corpus for desk-scale experiments and tests.

Two languages share a set of entities through inter-language links; every
sequence is a short parallel-template sentence mentioning one entity by a
language-specific name word.  Small enough to pretrain in minutes, rich
enough for masked entity prediction and cross-lingual retrieval checks.
"""

from __future__ import annotations

import numpy as np

from .corpus import AnnotatedDocument
from .vocab import InterLanguageLinks

DEFAULT_LANGS = ("en", "de")


def entity_title(i, lang):
    return f"Ent{i}_{lang}"


def entity_name_word(i, lang):
    return f"ent{i}_{lang}"


def make_links(n_entities, langs=DEFAULT_LANGS):
    links = InterLanguageLinks()
    for i in range(n_entities):
        for lang in langs:
            links.add(lang, entity_title(i, lang), f"ent{i}")
    return links


def make_bilingual_corpus(n_entities=30, n_sequences=500, n_templates=5,
                          langs=DEFAULT_LANGS, seed=0):
    """Documents of single-sentence parallel-template text with one entity
    mention each.  Sentences look like

        t3a_en ent17_en t3b_en t3c_en .

    with a hyperlink annotation over the name word.  Returns (docs, links).
    """
    rng = np.random.default_rng(seed)
    links = make_links(n_entities, langs)
    docs = []
    per_lang = n_sequences // len(langs)
    for lang in langs:
        for j in range(per_lang):
            i = int(rng.integers(n_entities))
            k = int(rng.integers(n_templates))
            tokens = [f"t{k}a_{lang}", entity_name_word(i, lang), f"t{k}b_{lang}", f"t{k}c_{lang}", "."]
            docs.append(
                AnnotatedDocument(
                    language=lang,
                    title=f"page_{lang}_{j}",
                    tokens=tokens,
                    annotations=[(1, 2, entity_title(i, lang))],
                    sentence_breaks=[len(tokens)],
                ).validate()
            )
    return docs, links
