"""Cross-lingually merged entity vocabulary and mention statistics.

Wikipedia-style articles in different languages that share an entry in the
inter-language link table are one entity.  The vocabulary keeps the most
frequent entities (by hyperlink count) seen in at least `min_languages`
languages, with reserved special entries at the lowest ids.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .errors import ContractError

PAD_ENTITY = "[PAD]"
MASK_ENTITY = "[MASK]"
HEAD_ENTITY = "[HEAD]"
TAIL_ENTITY = "[TAIL]"
SPECIAL_ENTITIES = (PAD_ENTITY, MASK_ENTITY, HEAD_ENTITY, TAIL_ENTITY)

PAD_ENTITY_ID = 0
MASK_ENTITY_ID = 1
HEAD_ENTITY_ID = 2
TAIL_ENTITY_ID = 3

VOCAB_FILE_HEADER = "entlm-entity-vocab\tv1"
LINKS_FILE_COLUMNS = ("language", "title", "canonical_key")


class InterLanguageLinks:
    """(language, title) -> canonical entity key; each pair maps to one key."""

    def __init__(self, entries=()):
        self._map = {}
        for lang, title, key in entries:
            self.add(lang, title, key)

    def add(self, lang, title, key):
        existing = self._map.get((lang, title))
        if existing is not None and existing != key:
            raise ContractError(f"({lang}, {title}) already mapped to {existing}, cannot remap to {key}")
        self._map[(lang, title)] = key

    def canonical_key(self, lang, title):
        """Canonical key for a page; unaligned pages get a per-language key."""
        return self._map.get((lang, title), f"{lang}:{title}")

    def lookup(self, lang, title):
        return self._map.get((lang, title))

    def titles_for_key(self, key):
        return {(lang, title) for (lang, title), k in self._map.items() if k == key}

    def __len__(self):
        return len(self._map)

    @classmethod
    def load_tsv(cls, path):
        links = cls()
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                lang, title, key = line.split("\t")
                links.add(lang, title, key)
        return links

    def save_tsv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("#" + "\t".join(LINKS_FILE_COLUMNS) + "\n")
            for (lang, title), key in sorted(self._map.items()):
                f.write(f"{lang}\t{title}\t{key}\n")


@dataclass
class EntityEntry:
    canonical_key: str
    link_count: int = 0
    titles: set = field(default_factory=set)  # set of (lang, title)

    @property
    def languages(self):
        return {lang for lang, _ in self.titles}


class EntityVocab:
    """Dense-id entity vocabulary with specials at the lowest ids."""

    def __init__(self, entries):
        self.entries = list(entries)  # index == id; specials included
        self.key_to_id = {e.canonical_key: i for i, e in enumerate(self.entries)}
        self.title_to_id = {}
        for i, e in enumerate(self.entries):
            for lang, title in e.titles:
                self.title_to_id[(lang, title)] = i

    def __len__(self):
        return len(self.entries)

    @property
    def pad_id(self):
        return PAD_ENTITY_ID

    @property
    def mask_id(self):
        return MASK_ENTITY_ID

    @property
    def head_id(self):
        return HEAD_ENTITY_ID

    @property
    def tail_id(self):
        return TAIL_ENTITY_ID

    def resolve(self, language, title):
        """Entity id for a per-language title, or None if unknown."""
        return self.title_to_id.get((language, title))

    def resolve_key(self, canonical_key):
        return self.key_to_id.get(canonical_key)

    def titles_in_language(self, entity_id, language):
        return sorted(t for lang, t in self.entries[entity_id].titles if lang == language)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(VOCAB_FILE_HEADER + "\n")
            for i, e in enumerate(self.entries):
                pairs = ";".join(f"{lang}:{title}" for lang, title in sorted(e.titles))
                f.write(f"{i}\t{e.canonical_key}\t{len(e.languages)}\t{e.link_count}\t{pairs}\n")

    @classmethod
    def load(cls, path):
        entries = []
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != VOCAB_FILE_HEADER:
                raise ContractError(f"unrecognized vocab file header: {header!r}")
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                idx, key, _nlang, count, pairs = line.split("\t")
                titles = set()
                if pairs:
                    for pair in pairs.split(";"):
                        lang, _, title = pair.partition(":")
                        titles.add((lang, title))
                e = EntityEntry(canonical_key=key, link_count=int(count), titles=titles)
                if int(idx) != len(entries):
                    raise ContractError("vocab file ids are not dense from 0")
                entries.append(e)
        return cls(entries)


def _special_entries():
    return [EntityEntry(canonical_key=name) for name in SPECIAL_ENTITIES]


def build_entity_vocab(docs, links: InterLanguageLinks, min_languages=3, top_k=1_200_000):
    """Merge hyperlink counts across languages and keep the frequent entities.

    Ranking happens after the >= min_languages filter; ties on hyperlink
    count break lexicographically on the canonical key so builds are
    deterministic regardless of corpus order.
    """
    if min_languages < 1:
        raise ContractError("min_languages must be >= 1")
    if top_k < 1:
        raise ContractError("top_k must be >= 1")
    counts = defaultdict(int)
    titles = defaultdict(set)
    for doc in docs:
        for start, end, target_title in doc.annotations:
            key = links.canonical_key(doc.language, target_title)
            counts[key] += 1
            titles[key].add((doc.language, target_title))
    # a language counts toward the spread if the entity has a title there,
    # whether observed as a link target or recorded in the link table
    for key in counts:
        titles[key] |= links.titles_for_key(key)

    kept = [key for key in counts if len({lang for lang, _ in titles[key]}) >= min_languages]
    kept.sort(key=lambda k: (-counts[k], k))
    kept = kept[:top_k]

    entries = _special_entries()
    for key in kept:
        entries.append(EntityEntry(canonical_key=key, link_count=counts[key], titles=set(titles[key])))
    return EntityVocab(entries)


class MentionStats:
    """Per (language, surface) hyperlink and total occurrence counts."""

    def __init__(self):
        self.counts = {}  # (lang, surface) -> [hyperlink_count, total_count]

    def add(self, language, surface, hyperlink=0, total=0):
        c = self.counts.setdefault((language, surface), [0, 0])
        c[0] += hyperlink
        c[1] += total
        if c[0] > c[1]:
            raise ContractError(f"hyperlink count exceeds total count for {surface!r} in {language}")

    def link_probability(self, language, surface):
        """Hyperlink count / total count, or None for an unseen surface."""
        c = self.counts.get((language, surface))
        if c is None or c[1] == 0:
            return None
        return c[0] / c[1]


def _count_surface_occurrences(tokens, surface_tokens):
    n, k = len(tokens), len(surface_tokens)
    return sum(1 for i in range(n - k + 1) if tokens[i : i + k] == surface_tokens)


def collect_mention_stats(docs):
    """Count hyperlink vs total occurrences of every anchor surface, per language.

    Surfaces are exact token sequences; total counts are over matches on
    token boundaries in the same language's documents.
    """
    surfaces = defaultdict(set)  # lang -> set of surface token tuples
    hyperlink_counts = defaultdict(int)
    for doc in docs:
        for start, end, _target in doc.annotations:
            surf = tuple(doc.tokens[start:end])
            surfaces[doc.language].add(surf)
            hyperlink_counts[(doc.language, surf)] += 1

    stats = MentionStats()
    totals = defaultdict(int)
    for doc in docs:
        for surf in surfaces[doc.language]:
            totals[(doc.language, surf)] += _count_surface_occurrences(doc.tokens, list(surf))
    for (lang, surf), total in totals.items():
        stats.add(lang, " ".join(surf), hyperlink=hyperlink_counts[(lang, surf)], total=total)
    return stats
