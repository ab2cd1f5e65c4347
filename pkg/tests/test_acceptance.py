"""Acceptance suite: one test per numbered acceptance criterion.

Each test prints a single ``PASS``/``FAIL`` line (shown even without ``-s``)
before asserting. The end-to-end runs (criteria 5-7 and 9) share trained
models through module-scoped fixtures and take several minutes.

FB15k-237 is read from ``$CABKGC_FB15K237_DIR`` (default ``data/FB15k-237``
next to the repository root), which must hold ``train.txt``, ``valid.txt``
and ``test.txt``.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from cabkgc.checkpoint import load_checkpoint
from cabkgc.context import head_context, neighbors_of_head, relation_context, relations_of_head
from cabkgc.encoder import ModelConfig, init_parameters, predict_proba_batch, softmax
from cabkgc.datasets import make_synthetic_kg
from cabkgc.estimator import CABKGCClassifier
from cabkgc.evaluator import compute_rank, hits_at_k, mrr
from cabkgc.exceptions import ChecksumMismatch, VocabularyMismatch
from cabkgc.kg_store import build_graph, ingest_splits
from cabkgc.sequencer import TokenLayout, build_batch
from cabkgc.context import ContextCache
from cabkgc.trainer import gradient_errors

from conftest import random_triples
from test_context import scan_head_context, scan_neighbors, scan_relation_context, scan_relations
from test_evaluator import sort_oracle

ROOT = Path(__file__).resolve().parents[1]
FB15K237_DIR = Path(os.environ.get("CABKGC_FB15K237_DIR", ROOT / "data" / "FB15k-237"))


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        return ok
    return emit


# ---------------------------------------------------------------- 1

def test_1_context_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        n_e, n_r = int(rng.integers(1, 101)), int(rng.integers(1, 11))
        triples = random_triples(rng, n_e, n_r, int(rng.integers(0, 501)))
        graph = build_graph(triples)
        for h in range(n_e):
            mismatches += list(relations_of_head(graph, h)) != scan_relations(triples, h)
            mismatches += list(neighbors_of_head(graph, h)) != scan_neighbors(triples, h)
            mismatches += list(head_context(graph, h, None)) != scan_head_context(triples, h)
        for r in range(n_r):
            mismatches += list(relation_context(graph, r, None)) != scan_relation_context(triples, r)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    verdict(1, ok, f"{mismatches} mismatches on 100 random graphs, {elapsed:.2f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------- 2

def test_2_metric_arithmetic(verdict):
    start = time.perf_counter()
    checks = {
        "mrr([1,2,4])": abs(mrr([1, 2, 4]) - 0.583333) <= 1e-6
        and abs(mrr([1, 2, 4]) - 1.75 / 3) <= 1e-9,
        "hits": hits_at_k([1, 2, 4], 1) == 1 / 3 and hits_at_k([1, 2, 4], 3) == 2 / 3
        and hits_at_k([1, 2, 4], 4) == 1.0 and hits_at_k([5, 5], 4) == 0.0,
    }
    rng = np.random.default_rng(7)
    oracle_mismatches = filtered_worse = 0
    for _ in range(10 ** 4):
        n = int(rng.integers(1, 40))
        scores = rng.integers(0, 6, size=n).astype(float)
        t = int(rng.integers(n))
        filt = {int(e) for e in rng.integers(0, n, size=rng.integers(0, n + 1))} - {t}
        for policy in ("pessimistic", "optimistic"):
            oracle_mismatches += compute_rank(scores, t, filt, policy) != sort_oracle(scores, t, filt, policy)
            filtered_worse += compute_rank(scores, t, filt, policy) > compute_rank(scores, t, (), policy)
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and oracle_mismatches == 0 and filtered_worse == 0 and elapsed < 10
    verdict(2, ok, f"examples {checks}, {oracle_mismatches} oracle mismatches, "
                   f"{filtered_worse} filtered>raw, {elapsed:.2f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------- 3

def test_3_gradient_check(verdict):
    cfg = ModelConfig(token_vocab_size=60, entity_count=40, d_model=16, n_layers=1, n_heads=2,
                      ff_dim=32, max_len=16, seed=0).validate()
    start = time.perf_counter()
    errors = gradient_errors(cfg, n_probes=210, step=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    covered = set(errors) == set(init_parameters(cfg))
    ok = worst < 1e-4 and covered and elapsed < 60
    verdict(3, ok, f"max relative error {worst:.2e} (< 1e-4) over 210 probes, "
                   f"{len(errors)} tensors covered, {elapsed:.2f}s (< 60s)")
    assert ok


# ---------------------------------------------------------------- 4

def test_4_distribution_invariants(verdict):
    rng = np.random.default_rng(3)
    worst_sum, negative = 0.0, 0
    for seed in range(10):
        graph = build_graph(random_triples(rng, 30, 4, 150))
        layout = TokenLayout(30, 4)
        cfg = ModelConfig(token_vocab_size=layout.vocab_size, entity_count=30, d_model=16,
                          n_layers=2, n_heads=2, ff_dim=32, max_len=40, seed=seed)
        params = init_parameters(cfg)
        params["classifier.weight"] *= 50.0  # sharp distributions too
        queries = [(int(h), int(r)) for h, r in zip(rng.integers(0, 30, 64), rng.integers(0, 4, 64))]
        tokens, segments = build_batch(queries, ContextCache(graph, 16, 16), 40, layout)
        probs = predict_proba_batch(params, cfg, tokens, segments)
        worst_sum = max(worst_sum, float(np.max(np.abs(probs.sum(axis=1) - 1))))
        negative += int(np.sum(probs < 0))
    shift = 0.0
    for _ in range(1000):
        x = rng.normal(0, 10, size=int(rng.integers(1, 60)))
        shift = max(shift, float(np.max(np.abs(softmax(x + rng.uniform(-1e4, 1e4)) - softmax(x)))))
    with np.errstate(over="raise", invalid="raise"):
        extreme = softmax(np.array([1e4, -1e4, 0.0, 1e4 - 1]))
    finite = bool(np.all(np.isfinite(extreme))) and abs(extreme.sum() - 1) <= 1e-6
    ok = worst_sum <= 1e-6 and negative == 0 and shift <= 1e-9 and finite
    verdict(4, ok, f"max |sum-1| {worst_sum:.1e}, {negative} negative entries, "
                   f"shift error {shift:.1e}, finite at +-1e4: {finite}")
    assert ok


# ---------------------------------------------------------------- 5-7, 9

SYNTHETIC_MODEL = dict(d_model=32, n_layers=2, n_heads=4, ff_dim=128)


def synthetic_run(tmp_dir, head_budget=32, relation_budget=32):
    vocab, splits = make_synthetic_kg(random_state=0)
    train, valid, test = (np.array(x) for x in (splits.train, splits.valid, splits.test))
    est = CABKGCClassifier(**SYNTHETIC_MODEL, head_budget=head_budget, relation_budget=relation_budget,
                           batch_size=16, learning_rate=5e-5, max_epochs=200,
                           stabilization_patience=3, random_state=0,
                           n_entities=vocab.n_entities, n_relations=vocab.n_relations)
    start = time.perf_counter()
    est.fit(train, X_valid=valid, X_test=test)
    elapsed = time.perf_counter() - start
    report = est.evaluate(test, known_triples=(valid,))
    path = Path(tmp_dir) / f"synthetic_{head_budget}_{relation_budget}.cabk"
    est.save(path, vocab.fingerprint())
    return {"est": est, "vocab": vocab, "splits": splits, "report": report,
            "elapsed": elapsed, "checkpoint": path}


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    return synthetic_run(tmp_path_factory.mktemp("full"))


@pytest.fixture(scope="module")
def ablated_run(tmp_path_factory):
    return synthetic_run(tmp_path_factory.mktemp("ablated"), head_budget=0, relation_budget=0)


@pytest.mark.slow
def test_5_synthetic_end_to_end(full_run, verdict):
    est, report = full_run["est"], full_run["report"]
    losses = est.train_report_.losses
    decreasing = losses[0] > losses[1] > losses[2]
    hits1 = report.hits_at[1]
    ok = (hits1 >= 0.90 and decreasing and full_run["elapsed"] < 600
          and full_run["vocab"].n_entities == 50 and full_run["vocab"].n_relations == 5)
    verdict(5, ok, f"held-out filtered Hits@1 {hits1:.3f} (>= 0.90) on {report.n_evaluated} queries, "
                   f"first losses {[round(x, 4) for x in losses[:3]]} strictly decreasing: {decreasing}, "
                   f"{len(losses)} epochs ({est.train_report_.stop_reason}), "
                   f"{full_run['elapsed']:.0f}s (< 600s)")
    assert ok


@pytest.mark.slow
def test_6_context_ablation(full_run, ablated_run, verdict):
    full, ablated = full_run["report"].hits_at[1], ablated_run["report"].hits_at[1]
    ok = full - ablated >= 0.15 and ablated_run["elapsed"] < 600
    verdict(6, ok, f"Hits@1 full {full:.3f} vs budgets 0/0 {ablated:.3f}, "
                   f"gap {full - ablated:.3f} (>= 0.15), ablated run {ablated_run['elapsed']:.0f}s")
    assert ok


@pytest.mark.slow
def test_7_determinism(full_run, tmp_path, verdict):
    again = synthetic_run(tmp_path)
    same_ckpt = full_run["checkpoint"].read_bytes() == again["checkpoint"].read_bytes()
    same_report = (full_run["report"].to_text() == again["report"].to_text()
                   and full_run["report"].ranks == again["report"].ranks)
    same_history = (full_run["est"].train_report_.to_dict(include_timing=False)
                    == again["est"].train_report_.to_dict(include_timing=False))
    ok = same_ckpt and same_report and same_history
    verdict(7, ok, f"checkpoints bit-identical: {same_ckpt}, MetricsReports identical: "
                   f"{same_report}, training histories identical: {same_history}")
    assert ok


def test_8_fb15k237_ingestion(verdict):
    paths = [FB15K237_DIR / f"{name}.txt" for name in ("train", "valid", "test")]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        verdict(8, False, f"FB15k-237 split files not found: {', '.join(missing)} "
                          "(set CABKGC_FB15K237_DIR)")
        pytest.fail(f"FB15k-237 split files not found under {FB15K237_DIR}")
    start = time.perf_counter()
    vocab, _ = ingest_splits(*paths)
    elapsed = time.perf_counter() - start
    ok = vocab.n_entities == 14541 and vocab.n_relations == 237 and elapsed < 30
    verdict(8, ok, f"|E| = {vocab.n_entities} (14541), |R| = {vocab.n_relations} (237), "
                   f"{elapsed:.1f}s (< 30s)")
    assert ok


@pytest.mark.slow
def test_9_checkpoint_round_trip(full_run, tmp_path, verdict):
    path, vocab, est = full_run["checkpoint"], full_run["vocab"], full_run["est"]
    params, cfg, _ = load_checkpoint(path, vocab.fingerprint())
    exact = (cfg == est.model_config_ and list(params) == list(est.params_)
             and all(params[k].tobytes() == est.params_[k].tobytes() for k in params))

    corrupted = tmp_path / "corrupted.cabk"
    data = bytearray(path.read_bytes())
    data[len(data) // 3] ^= 0x01
    corrupted.write_bytes(bytes(data))
    truncated = tmp_path / "truncated.cabk"
    truncated.write_bytes(path.read_bytes()[:-100])
    rejected = {}
    for name, target, expected_fp, exc in (
        ("corrupted", corrupted, None, ChecksumMismatch),
        ("truncated", truncated, None, ChecksumMismatch),
        ("cross-dataset", path, make_synthetic_kg(n_entities=48)[0].fingerprint(), VocabularyMismatch),
    ):
        try:
            load_checkpoint(target, expected_fp)
            rejected[name] = False
        except exc:
            rejected[name] = True
    ok = exact and all(rejected.values())
    verdict(9, ok, f"round trip bit-exact: {exact}, rejections {rejected}")
    assert ok
