"""Head and relation context extraction over the training graph.

The head context of ``h`` is the id-sorted set of relations on its outgoing
edges followed by the id-sorted set of entities those edges reach (``h``
itself excluded). The relation context of ``r`` collects every entity that
appears as head or tail of an ``r`` triple, in index order, heads before
tails, first occurrence kept.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

UNLIMITED = None
DEFAULT_HEAD_BUDGET = 32
DEFAULT_RELATION_BUDGET = 32


class SymbolKind(IntEnum):
    ENTITY = 0
    RELATION = 1


class ContextSymbol(NamedTuple):
    kind: SymbolKind
    id: int

    def __repr__(self):
        return f"{'E' if self.kind == SymbolKind.ENTITY else 'R'}:{self.id}"


def entity(idx):
    return ContextSymbol(SymbolKind.ENTITY, int(idx))


def relation(idx):
    return ContextSymbol(SymbolKind.RELATION, int(idx))


@dataclass(frozen=True)
class ContextSet:
    symbols: tuple = ()
    truncated: bool = False

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __getitem__(self, item):
        return self.symbols[item]

    @property
    def entity_ids(self):
        return [s.id for s in self.symbols if s.kind == SymbolKind.ENTITY]

    @property
    def relation_ids(self):
        return [s.id for s in self.symbols if s.kind == SymbolKind.RELATION]


def truncate_context(ctx, budget):
    """Keep the first ``budget`` symbols; ``None`` means unlimited.

    The truncated flag is sticky so that re-truncating an already cut
    context keeps reporting the loss.
    """
    if budget is None:
        return ctx
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    if len(ctx.symbols) <= budget:
        return ctx
    return ContextSet(ctx.symbols[:budget], truncated=True)


def relations_of_head(graph, head):
    rels = sorted({r for r, _ in graph.outgoing(head)})
    return ContextSet(tuple(relation(r) for r in rels))


def neighbors_of_head(graph, head):
    ents = sorted({t for _, t in graph.outgoing(head) if t != head})
    return ContextSet(tuple(entity(e) for e in ents))


def head_context(graph, head, budget=DEFAULT_HEAD_BUDGET):
    full = ContextSet(
        relations_of_head(graph, head).symbols + neighbors_of_head(graph, head).symbols
    )
    return truncate_context(full, budget)


def relation_context(graph, rel, budget=DEFAULT_RELATION_BUDGET):
    seen = set()
    out = []
    for h, t in graph.relation_pairs(rel):
        for e in (h, t):
            if e not in seen:
                seen.add(e)
                out.append(entity(e))
            if budget is not None and len(out) > budget:
                return ContextSet(tuple(out[:budget]), truncated=True)
    return ContextSet(tuple(out))


class ContextCache:
    """Memoised head and relation contexts for one immutable graph."""

    def __init__(self, graph, head_budget=DEFAULT_HEAD_BUDGET,
                 relation_budget=DEFAULT_RELATION_BUDGET):
        self.graph = graph
        self.head_budget = head_budget
        self.relation_budget = relation_budget
        self._heads = {}
        self._relations = {}

    def head(self, h):
        ctx = self._heads.get(h)
        if ctx is None:
            ctx = self._heads[h] = head_context(self.graph, h, self.head_budget)
        return ctx

    def relation(self, r):
        ctx = self._relations.get(r)
        if ctx is None:
            ctx = self._relations[r] = relation_context(self.graph, r, self.relation_budget)
        return ctx
