"""Serialise ``(h, H_c, r, R_c)`` into fixed-length token-id sequences.

Token-id layout (layout version 1)::

    0                  [CLS]
    1                  [SEP]
    2                  [PAD]
    3 .. 3+|E|-1       entities, in vocabulary order
    3+|E| .. +|R|-1    relations, in vocabulary order

Segment index is 0 for ``[CLS] h H_c [SEP]`` and 1 for ``r R_c``; padding
positions use segment 0.
"""

from dataclasses import dataclass

import numpy as np

from .context import SymbolKind
from .exceptions import SequenceTooShort

CLS, SEP, PAD = 0, 1, 2
N_SPECIAL = 3
TOKEN_LAYOUT_VERSION = 1
DEFAULT_MAX_LEN = 72
MIN_LEN = 4

_SPECIAL_TEXT = {CLS: "[CLS]", SEP: "[SEP]", PAD: "[PAD]"}


class TokenLayout:
    """Maps entity/relation ids to token ids and back."""

    def __init__(self, n_entities, n_relations):
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)

    @property
    def vocab_size(self):
        return N_SPECIAL + self.n_entities + self.n_relations

    def entity_token(self, e):
        return N_SPECIAL + e

    def relation_token(self, r):
        return N_SPECIAL + self.n_entities + r

    def symbol_token(self, symbol):
        if symbol.kind == SymbolKind.ENTITY:
            return self.entity_token(symbol.id)
        return self.relation_token(symbol.id)

    def describe(self, token):
        """Return ``(kind, id)`` with kind in {"special", "entity", "relation"}."""
        if token < N_SPECIAL:
            return "special", token
        if token < N_SPECIAL + self.n_entities:
            return "entity", token - N_SPECIAL
        return "relation", token - N_SPECIAL - self.n_entities


@dataclass(frozen=True)
class InputSequence:
    tokens: np.ndarray
    segments: np.ndarray
    content_length: int

    @property
    def max_len(self):
        return len(self.tokens)

    @property
    def pad_mask(self):
        return self.tokens == PAD


def _shares(n_head, n_rel, available):
    """Split ``available`` slots between the two contexts.

    Each side is entitled to half (head side takes the odd slot); a side that
    needs less than its half hands the remainder to the other.
    """
    if n_head + n_rel <= available:
        return n_head, n_rel
    head_share = (available + 1) // 2
    rel_share = available - head_share
    if n_head < head_share:
        return n_head, available - n_head
    if n_rel < rel_share:
        return available - n_rel, n_rel
    return head_share, rel_share


def build_input_sequence(head, head_ctx, rel, rel_ctx, max_len, layout):
    """Lay out ``[CLS] h H_c [SEP] r R_c [PAD]...`` as token ids."""
    if max_len < MIN_LEN:
        raise SequenceTooShort(f"max_len must be >= {MIN_LEN}, got {max_len}")
    n_head, n_rel = _shares(len(head_ctx), len(rel_ctx), max_len - MIN_LEN)
    ids = [CLS, layout.entity_token(head)]
    ids.extend(layout.symbol_token(s) for s in head_ctx.symbols[:n_head])
    ids.append(SEP)
    first_segment = len(ids)
    ids.append(layout.relation_token(rel))
    ids.extend(layout.symbol_token(s) for s in rel_ctx.symbols[:n_rel])
    content_length = len(ids)

    tokens = np.full(max_len, PAD, dtype=np.int64)
    tokens[:content_length] = ids
    segments = np.zeros(max_len, dtype=np.int64)
    segments[first_segment:content_length] = 1
    return InputSequence(tokens, segments, content_length)


def build_batch(queries, cache, max_len, layout):
    """Token and segment matrices for an iterable of ``(head, relation)`` pairs."""
    queries = list(queries)
    tokens = np.empty((len(queries), max_len), dtype=np.int64)
    segments = np.empty((len(queries), max_len), dtype=np.int64)
    for i, (h, r) in enumerate(queries):
        seq = build_input_sequence(h, cache.head(h), r, cache.relation(r), max_len, layout)
        tokens[i] = seq.tokens
        segments[i] = seq.segments
    return tokens, segments


def render_sequence(seq, vocab, layout=None):
    """Human-readable token string; trailing padding is dropped.

    Names are emitted verbatim, so they must not contain whitespace for
    :func:`lex_sequence` to invert the rendering.
    """
    if layout is None:
        layout = TokenLayout(vocab.n_entities, vocab.n_relations)
    out = []
    in_head_relations = False
    for pos, tok in enumerate(seq.tokens[: seq.content_length]):
        kind, idx = layout.describe(int(tok))
        if kind == "special":
            out.append(_SPECIAL_TEXT[idx])
            in_head_relations = False
        elif kind == "entity":
            name = vocab.entity_name(idx)
            if in_head_relations and _is_relation_label(vocab, name):
                # first head-context entity would lex as a relation: escape it
                if _is_relation_label(vocab, ENTITY_ESCAPE + name):
                    raise ValueError(f"entity name {name!r} cannot be rendered unambiguously")
                name = ENTITY_ESCAPE + name
            out.append(name)
            in_head_relations = pos == 1
        else:
            out.append(_relation_label(vocab, idx))
    return " ".join(out)


INVERSE_SUFFIX = "^-1"
ENTITY_ESCAPE = "E:"


def _relation_label(vocab, idx):
    # ids past the vocabulary are inverse relations (see kg_store.inverse_augmented)
    if idx >= vocab.n_relations:
        return vocab.relation_name(idx - vocab.n_relations) + INVERSE_SUFFIX
    return vocab.relation_name(idx)


def _relation_lookup(vocab, label):
    if label.endswith(INVERSE_SUFFIX) and label not in vocab.relation_by_name:
        return vocab.relation_id(label[: -len(INVERSE_SUFFIX)]) + vocab.n_relations
    return vocab.relation_id(label)


def _is_relation_label(vocab, label):
    try:
        _relation_lookup(vocab, label)
    except KeyError:
        return False
    return True


def _is_escaped_entity(vocab, label):
    name = label[len(ENTITY_ESCAPE):]
    return (label.startswith(ENTITY_ESCAPE) and name in vocab.entity_by_name
            and _is_relation_label(vocab, name))


def lex_sequence(text, vocab, max_len, layout=None):
    """Parse :func:`render_sequence` output back into an :class:`InputSequence`.

    Kinds are recovered from position: the token after ``[CLS]`` is an
    entity, the one after ``[SEP]`` a relation, relation-context symbols are
    entities, and head-context symbols are relations until the first entity.
    A name found in both vocabularies inside the head context is resolved by
    that ordering rule unless the renderer escaped it with ``E:``.
    """
    if layout is None:
        layout = TokenLayout(vocab.n_entities, vocab.n_relations)
    parts = text.split()
    if len(parts) < MIN_LEN or parts[0] != "[CLS]" or parts.count("[SEP]") != 1:
        raise ValueError(f"not a rendered input sequence: {text!r}")
    sep = parts.index("[SEP]")
    ids = [CLS, layout.entity_token(vocab.entity_id(parts[1]))]
    in_relations = True
    for name in parts[2:sep]:
        if in_relations and _is_relation_label(vocab, name):
            ids.append(layout.relation_token(_relation_lookup(vocab, name)))
        elif in_relations and _is_escaped_entity(vocab, name):
            in_relations = False
            ids.append(layout.entity_token(vocab.entity_id(name[len(ENTITY_ESCAPE):])))
        else:
            in_relations = False
            ids.append(layout.entity_token(vocab.entity_id(name)))
    ids.append(SEP)
    ids.append(layout.relation_token(_relation_lookup(vocab, parts[sep + 1])))
    ids.extend(layout.entity_token(vocab.entity_id(n)) for n in parts[sep + 2:])
    if len(ids) > max_len:
        raise SequenceTooShort(f"{len(ids)} tokens do not fit max_len={max_len}")
    tokens = np.full(max_len, PAD, dtype=np.int64)
    tokens[: len(ids)] = ids
    segments = np.zeros(max_len, dtype=np.int64)
    segments[sep + 1: len(ids)] = 1
    return InputSequence(tokens, segments, len(ids))
