import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cabkgc.evaluator import (
    MetricsReport,
    batch_ranks,
    compute_rank,
    evaluate_split,
    hits_at_k,
    known_tails,
    mrr,
)
from cabkgc.exceptions import EmptyInput, FilteredTrueTail


def sort_oracle(scores, true_tail, filter_out=(), tie_policy="pessimistic"):
    """Rank by sorting the surviving candidates; ties broken against/for the truth."""
    keep = [e for e in range(len(scores)) if e not in set(filter_out)]
    # secondary key places the true tail last (pessimistic) or first (optimistic) among equals
    sign = 1 if tie_policy == "pessimistic" else -1
    order = sorted(keep, key=lambda e: (-scores[e], sign * (e == true_tail)))
    return order.index(true_tail) + 1


class TestComputeRank:
    def test_examples(self):
        assert compute_rank(np.array([0.1, 0.9, 0.5]), 1) == 1
        assert compute_rank(np.array([0.5, 0.5, 0.1]), 0) == 2
        assert compute_rank(np.array([0.5, 0.5, 0.1]), 0, tie_policy="optimistic") == 1
        assert compute_rank(np.array([0.9, 0.8, 0.7]), 2, filter_out={0}) == 2

    def test_true_tail_filtered(self):
        with pytest.raises(FilteredTrueTail):
            compute_rank(np.array([0.1, 0.2]), 1, filter_out={1})

    def test_unknown_tie_policy(self):
        with pytest.raises(ValueError):
            compute_rank(np.array([0.1, 0.2]), 1, tie_policy="average")

    @pytest.mark.parametrize("policy", ["pessimistic", "optimistic"])
    def test_sort_oracle(self, policy):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            n = int(rng.integers(1, 30))
            # coarse integer scores make ties common
            scores = rng.integers(0, 5, size=n).astype(float)
            t = int(rng.integers(n))
            filt = {int(e) for e in rng.integers(0, n, size=rng.integers(0, n + 1))} - {t}
            assert compute_rank(scores, t, filt, policy) == sort_oracle(scores, t, filt, policy)

    def test_batch_agrees_with_single(self):
        rng = np.random.default_rng(5)
        scores = rng.integers(0, 4, size=(50, 12)).astype(float)
        tails = rng.integers(0, 12, size=50)
        masks = rng.random((50, 12)) < 0.3
        masks[np.arange(50), tails] = False
        for policy in ("pessimistic", "optimistic"):
            ranks = batch_ranks(scores, tails, masks, policy)
            single = [compute_rank(scores[i], tails[i], set(np.flatnonzero(masks[i])), policy)
                      for i in range(50)]
            assert ranks.tolist() == single

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-80, 80), min_size=1, max_size=30), st.data())
    def test_filtered_never_worse_and_monotone_invariant(self, scores, data):
        # an eighth-step grid keeps the monotone map strictly increasing in floats
        scores = np.array(scores) / 8.0
        t = data.draw(st.integers(0, len(scores) - 1))
        filt = set(data.draw(st.lists(st.integers(0, len(scores) - 1)))) - {t}
        raw = compute_rank(scores, t)
        assert 1 <= compute_rank(scores, t, filt) <= raw <= len(scores)
        assert compute_rank(np.exp(scores / 3) * 7 - 2, t) == raw


class TestMetrics:
    def test_mrr_examples(self):
        assert mrr([1, 1, 1]) == 1.0
        assert abs(mrr([1, 2, 4]) - 0.583333) <= 1e-6
        assert mrr([1, 2, 4]) == pytest.approx(1.75 / 3, abs=1e-12)
        assert mrr([10 ** 6]) < 1e-5

    def test_hits_examples(self):
        assert hits_at_k([1, 2, 4], 1) == pytest.approx(1 / 3)
        assert hits_at_k([1, 2, 4], 3) == pytest.approx(2 / 3)
        assert hits_at_k([3, 7, 7, 1], 7) == 1.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mrr([])
        with pytest.raises(EmptyInput):
            hits_at_k([], 1)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            hits_at_k([1], 0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 50), min_size=1, max_size=40), st.randoms())
    def test_permutation_invariance_and_bounds(self, ranks, rnd):
        shuffled = list(ranks)
        rnd.shuffle(shuffled)
        assert mrr(shuffled) == pytest.approx(mrr(ranks), abs=1e-12)
        assert 0 < mrr(ranks) <= 1
        hits = [hits_at_k(ranks, k) for k in range(1, 52)]
        assert all(a <= b for a, b in zip(hits, hits[1:])) and hits[-1] == 1.0

    def test_report_serialisation(self):
        report = MetricsReport.from_ranks([1, 2, 4, 20], "filtered")
        assert report.hits_at == {1: 0.25, 3: 0.5, 10: 0.75}
        assert report.n_evaluated == 4
        assert json.loads(report.to_json())["hits_at"]["10"] == 0.75
        text = report.to_text()
        assert "protocol=filtered\n" in text and "hits@3=0.5\n" in text
        assert "MRR" in report.table()


class TestEvaluateSplit:
    triples = [(0, 0, 1), (0, 0, 2), (1, 1, 3), (2, 0, 0)]

    def test_perfect_model(self):
        def oracle(h, r):
            out = np.zeros((len(h), 5))
            for i, (hh, rr) in enumerate(zip(h, r)):
                out[i, {(0, 0): 1, (1, 1): 3, (2, 0): 0}[(hh, rr)]] = 1.0
            return out
        report = evaluate_split(oracle, [(0, 0, 1), (1, 1, 3), (2, 0, 0)], 5, [self.triples])
        assert report.mrr == 1.0 and report.hits_at[1] == 1.0

    def test_filtered_removes_other_known_tails(self):
        # entity 1 outranks the true tail 2, but (0, 0, 1) is known
        def scores(h, r):
            return np.tile([0.0, 0.9, 0.5, 0.1, 0.2], (len(h), 1))
        raw = evaluate_split(scores, [(0, 0, 2)], 5, protocol="raw")
        filtered = evaluate_split(scores, [(0, 0, 2)], 5, [self.triples])
        assert raw.ranks == [2] and filtered.ranks == [1]

    def test_filtered_not_worse_than_raw(self):
        rng = np.random.default_rng(3)
        triples = [tuple(int(x) for x in row) for row in rng.integers(0, 8, size=(60, 3))]
        table = rng.normal(size=(8, 8, 8))

        def scores(h, r):
            return table[h, r]
        raw = evaluate_split(scores, triples, 8, protocol="raw")
        filtered = evaluate_split(scores, triples, 8, [triples])
        assert all(f <= r for f, r in zip(filtered.ranks, raw.ranks))

    def test_uniform_random_scores(self):
        n, queries = 20, 20000
        rng = np.random.default_rng(0)

        def scores(h, r):
            return rng.random((len(h), n))
        triples = np.stack([np.zeros(queries), np.zeros(queries),
                            rng.integers(0, n, queries)], axis=1).astype(int)
        report = evaluate_split(scores, triples, n, protocol="raw")
        expected = sum(1 / k for k in range(1, n + 1)) / n
        # standard error of the mean reciprocal rank is about 0.0016 here
        assert abs(report.mrr - expected) < 0.008

    def test_empty_split(self):
        with pytest.raises(EmptyInput):
            evaluate_split(lambda h, r: None, [], 3)

    def test_known_tails(self):
        index = known_tails(self.triples[:2], self.triples[2:])
        assert index[(0, 0)] == {1, 2} and index[(2, 0)] == {0}
