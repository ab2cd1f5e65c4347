"""Triple-file ingestion, vocabularies and the indexed knowledge graph.

Triple files follow the FB15k-237 / WN18RR layout: UTF-8 text, one
``head<TAB>relation<TAB>tail`` triple per line.
"""

import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import DataError, MalformedLine

logger = logging.getLogger(__name__)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def parse_triple_line(line, line_number=None, path=None):
    """Split one triple-file line into ``(head, relation, tail)`` names.

    Trailing ``\\n`` / ``\\r\\n`` is accepted. Raises :class:`MalformedLine`
    if the line does not contain exactly three non-empty tab-separated fields.
    """
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != 3:
        raise MalformedLine(
            f"expected 3 tab-separated fields, got {len(fields)}", line_number, path
        )
    fields = [f.strip() for f in fields]
    if not all(fields):
        raise MalformedLine("empty field", line_number, path)
    return tuple(fields)


class Vocabulary:
    """Bijective maps between raw names and dense ids for entities and relations.

    Ids are assigned in first-occurrence order via :meth:`add_entity` /
    :meth:`add_relation`. Name lookups raise ``KeyError`` for unknown names.
    """

    def __init__(self, entity_names=(), relation_names=()):
        self.entity_names = []
        self.relation_names = []
        self.entity_by_name = {}
        self.relation_by_name = {}
        for name in entity_names:
            self.add_entity(name)
        for name in relation_names:
            self.add_relation(name)

    def add_entity(self, name):
        idx = self.entity_by_name.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self.entity_by_name[name] = idx
            self.entity_names.append(name)
        return idx

    def add_relation(self, name):
        idx = self.relation_by_name.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self.relation_by_name[name] = idx
            self.relation_names.append(name)
        return idx

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)

    def entity_id(self, name):
        return self.entity_by_name[name]

    def relation_id(self, name):
        return self.relation_by_name[name]

    def entity_name(self, idx):
        return self.entity_names[idx]

    def relation_name(self, idx):
        return self.relation_names[idx]

    def fingerprint(self):
        """64-bit hash of both name lists, in id order."""
        h = hashlib.blake2b(digest_size=8)
        for tag, names in ((b"E", self.entity_names), (b"R", self.relation_names)):
            h.update(tag)
            h.update(len(names).to_bytes(8, "little"))
            for name in names:
                raw = name.encode("utf-8")
                h.update(len(raw).to_bytes(8, "little"))
                h.update(raw)
        return int.from_bytes(h.digest(), "little")

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.entity_names == other.entity_names
            and self.relation_names == other.relation_names
        )

    def __repr__(self):
        return f"Vocabulary(n_entities={self.n_entities}, n_relations={self.n_relations})"


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable triple set with head and relation adjacency indexes.

    ``by_head[h]`` lists ``(relation, tail)`` pairs and ``by_relation[r]`` lists
    ``(head, tail)`` pairs, both sorted ascending. Heads or relations with no
    triples are absent from the index dicts; use :meth:`outgoing` /
    :meth:`relation_pairs` for total lookups.
    """

    triples: tuple
    by_head: dict
    by_relation: dict
    membership: frozenset
    n_duplicates_removed: int = 0
    _empty: tuple = field(default=(), repr=False)

    def __len__(self):
        return len(self.triples)

    def __contains__(self, triple):
        return tuple(triple) in self.membership

    def outgoing(self, head):
        return self.by_head.get(head, self._empty)

    def relation_pairs(self, relation):
        return self.by_relation.get(relation, self._empty)

    def as_array(self):
        if not self.triples:
            return np.zeros((0, 3), dtype=np.int64)
        return np.asarray(self.triples, dtype=np.int64)


def build_graph(triples):
    """Index ``triples`` into a :class:`KnowledgeGraph`.

    Duplicates are dropped (their count is kept on the result); the stored
    triple order is ascending ``(head, relation, tail)``.
    """
    unique = sorted({Triple(*map(int, t)) for t in triples})
    n_dup = len(triples) - len(unique)
    by_head = defaultdict(list)
    by_relation = defaultdict(list)
    for h, r, t in unique:
        by_head[h].append((r, t))
        by_relation[r].append((h, t))
    for pairs in by_relation.values():
        pairs.sort()
    # by_head lists are already in (relation, tail) order because ``unique``
    # is sorted by (head, relation, tail).
    return KnowledgeGraph(
        triples=tuple(unique),
        by_head={h: tuple(v) for h, v in by_head.items()},
        by_relation={r: tuple(v) for r, v in by_relation.items()},
        membership=frozenset(unique),
        n_duplicates_removed=n_dup,
    )


def contains_triple(graph, head, relation, tail):
    return (head, relation, tail) in graph.membership


def graph_stats(graph):
    """Counts of entities and relations that occur in ``graph``, plus N_T."""
    entities = set()
    for h, _, t in graph.triples:
        entities.add(h)
        entities.add(t)
    return {
        "num_entities": len(entities),
        "num_relations": len(graph.by_relation),
        "num_triples": len(graph.triples),
    }


def inverse_augmented(graph, n_relations):
    """Return ``graph`` plus ``(t, r + n_relations, h)`` for every triple."""
    extra = [Triple(t, r + n_relations, h) for h, r, t in graph.triples]
    return build_graph(list(graph.triples) + extra)


@dataclass
class DatasetSplits:
    train: list
    valid: list
    test: list
    duplicates_removed: dict = field(default_factory=dict)

    def all_triples(self):
        return self.train + self.valid + self.test

    def __iter__(self):
        return iter((self.train, self.valid, self.test))


def _read_names(path):
    path = Path(path)
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            rows.append(parse_triple_line(line, lineno, path))
    return rows


def ingest_splits(train_path, valid_path, test_path):
    """Read the three split files into a shared vocabulary and id triples.

    Ids follow first occurrence scanning train, then valid, then test, with
    head before relation before tail within a line. Duplicate lines within a
    split are dropped and counted.
    """
    vocab = Vocabulary()
    splits = {}
    dups = {}
    for name, path in (("train", train_path), ("valid", valid_path), ("test", test_path)):
        seen = set()
        out = []
        rows = _read_names(path)
        for h, r, t in rows:
            triple = Triple(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
            if triple in seen:
                continue
            seen.add(triple)
            out.append(triple)
        splits[name] = out
        dups[name] = len(rows) - len(out)
        if dups[name]:
            logger.info("%s: dropped %d duplicate triple(s)", name, dups[name])
    return vocab, DatasetSplits(
        splits["train"], splits["valid"], splits["test"], duplicates_removed=dups
    )


def write_triples(path, triples, vocab):
    """Write id triples back out in the tab-separated file format."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for h, r, t in triples:
            handle.write(
                f"{vocab.entity_name(h)}\t{vocab.relation_name(r)}\t{vocab.entity_name(t)}\n"
            )
