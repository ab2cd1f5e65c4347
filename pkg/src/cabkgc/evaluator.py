"""Tail ranking and MRR / Hits@k under the raw or filtered protocol."""

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyInput, FilteredTrueTail

PESSIMISTIC = "pessimistic"
OPTIMISTIC = "optimistic"
RAW = "raw"
FILTERED = "filtered"
DEFAULT_KS = (1, 3, 10)


def compute_rank(scores, true_tail, filter_out=(), tie_policy=PESSIMISTIC):
    """1-based rank of ``true_tail`` in descending score order.

    Candidates in ``filter_out`` are removed before counting. Under the
    pessimistic policy every other candidate tied with the true tail is
    ranked ahead of it; under the optimistic policy none are.
    """
    if tie_policy not in (PESSIMISTIC, OPTIMISTIC):
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    filter_out = set(filter_out)
    if true_tail in filter_out:
        raise FilteredTrueTail(f"true tail {true_tail} is in the filter set")
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(scores), dtype=bool)
    if filter_out:
        keep[list(filter_out)] = False
    keep[true_tail] = False
    target = scores[true_tail]
    others = scores[keep]
    rank = 1 + int(np.count_nonzero(others > target))
    if tie_policy == PESSIMISTIC:
        rank += int(np.count_nonzero(others == target))
    return rank


def batch_ranks(scores, true_tails, filter_masks=None, tie_policy=PESSIMISTIC):
    """Vectorised :func:`compute_rank` over rows of ``scores``.

    ``filter_masks`` is a boolean array of the same shape marking filtered
    candidates; the true tail must not be marked.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rows = np.arange(len(scores))
    target = scores[rows, true_tails][:, None]
    competing = np.ones(scores.shape, dtype=bool)
    if filter_masks is not None:
        if np.any(filter_masks[rows, true_tails]):
            raise FilteredTrueTail("a true tail is in its own filter set")
        competing &= ~filter_masks
    competing[rows, true_tails] = False
    rank = 1 + np.count_nonzero((scores > target) & competing, axis=1)
    if tie_policy == PESSIMISTIC:
        rank += np.count_nonzero((scores == target) & competing, axis=1)
    elif tie_policy != OPTIMISTIC:
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    return rank


def mrr(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EmptyInput("mrr of an empty rank list")
    return float(np.mean(1.0 / ranks))


def hits_at_k(ranks, k):
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EmptyInput("hits@k of an empty rank list")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return float(np.mean(ranks <= k))


@dataclass
class MetricsReport:
    mrr: float
    hits_at: dict
    n_evaluated: int
    protocol: str
    ranks: list = field(default=None, repr=False, compare=False)

    @classmethod
    def from_ranks(cls, ranks, protocol, ks=DEFAULT_KS):
        return cls(
            mrr=mrr(ranks),
            hits_at={int(k): hits_at_k(ranks, k) for k in sorted(ks)},
            n_evaluated=len(ranks),
            protocol=protocol,
            ranks=[int(r) for r in ranks],
        )

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "n_evaluated": self.n_evaluated,
            "mrr": self.mrr,
            "hits_at": {str(k): v for k, v in sorted(self.hits_at.items())},
        }

    def to_text(self):
        """Canonical ``key=value`` block, one metric per line."""
        lines = [
            f"protocol={self.protocol}",
            f"n_evaluated={self.n_evaluated}",
            f"mrr={self.mrr!r}",
        ]
        lines += [f"hits@{k}={v!r}" for k, v in sorted(self.hits_at.items())]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        ks = sorted(self.hits_at)
        header = ["MRR"] + [f"Hits@{k}" for k in ks]
        values = [self.mrr] + [self.hits_at[k] for k in ks]
        widths = [max(len(h), 6) for h in header]
        top = "  ".join(h.rjust(w) for h, w in zip(header, widths))
        row = "  ".join(f"{v:.4f}".rjust(w) for v, w in zip(values, widths))
        return f"{top}\n{row}\n"


def known_tails(*triple_lists):
    """Map ``(head, relation)`` to the set of tails seen in any of the lists."""
    index = defaultdict(set)
    for triples in triple_lists:
        for h, r, t in triples:
            index[(h, r)].add(t)
    return index


def filter_masks_for(triples, tail_index, n_entities):
    masks = np.zeros((len(triples), n_entities), dtype=bool)
    for i, (h, r, t) in enumerate(triples):
        others = tail_index.get((h, r))
        if others:
            masks[i, list(others)] = True
            masks[i, t] = False
    return masks


def rank_triples(score_fn, triples, n_entities, tail_index=None, protocol=FILTERED,
                 tie_policy=PESSIMISTIC, batch_size=256):
    """Ranks of the true tails of ``triples``.

    ``score_fn(heads, relations)`` returns an ``[n, n_entities]`` score
    array; ``tail_index`` (see :func:`known_tails`) is required for the
    filtered protocol.
    """
    if protocol not in (RAW, FILTERED):
        raise ValueError(f"unknown protocol {protocol!r}")
    if protocol == FILTERED and tail_index is None:
        raise ValueError("filtered protocol needs a tail index")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ranks = np.empty(len(triples), dtype=np.int64)
    for start in range(0, len(triples), batch_size):
        chunk = triples[start:start + batch_size]
        scores = score_fn(chunk[:, 0], chunk[:, 1])
        masks = None
        if protocol == FILTERED:
            masks = filter_masks_for(chunk, tail_index, n_entities)
        ranks[start:start + len(chunk)] = batch_ranks(scores, chunk[:, 2], masks, tie_policy)
    return ranks


def evaluate_split(score_fn, eval_triples, n_entities, all_splits=(), protocol=FILTERED,
                   ks=DEFAULT_KS, tie_policy=PESSIMISTIC, batch_size=256):
    """MRR and Hits@k of ``score_fn`` on ``eval_triples``.

    The filter set of a query ``(h, r, t)`` is every other tail known for
    ``(h, r)`` in any of ``all_splits``.
    """
    if len(eval_triples) == 0:
        raise EmptyInput("evaluation split is empty")
    tail_index = known_tails(*all_splits) if protocol == FILTERED else None
    ranks = rank_triples(score_fn, eval_triples, n_entities, tail_index, protocol,
                         tie_policy, batch_size)
    return MetricsReport.from_ranks(ranks, protocol, ks)
