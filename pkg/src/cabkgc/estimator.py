"""scikit-learn style estimators around the context/sequence/encoder pipeline.

Triples and queries are integer id arrays: ``(n, 3)`` for ``(head, relation,
tail)`` and ``(n, 2)`` for ``(head, relation)``; ``(n, 3)`` input is also
accepted wherever queries are expected (the tail column is ignored).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .context import ContextCache
from .encoder import ModelConfig, init_parameters, logits_batch, softmax
from .evaluator import DEFAULT_KS, FILTERED, MetricsReport, known_tails, rank_triples
from .kg_store import DatasetSplits, build_graph, inverse_augmented
from .sequencer import PAD, SEP, TokenLayout, build_batch, build_input_sequence
from .trainer import TrainConfig, train
from .validation import check_queries, check_triples


def segments_from_tokens(tokens):
    """Segment ids implied by a token matrix: 1 after ``[SEP]`` up to padding."""
    tokens = np.asarray(tokens)
    after_sep = np.cumsum(tokens == SEP, axis=-1) > 0
    return (after_sep & (tokens != SEP) & (tokens != PAD)).astype(np.int64)


class ContextSequencer(TransformerMixin, BaseEstimator):
    """Turn ``(head, relation)`` queries into ``[CLS] h H_c [SEP] r R_c`` token rows.

    ``fit`` indexes the training triples that contexts are drawn from;
    ``transform`` returns an ``(n, max_len)`` token-id matrix.

    Parameters
    ----------
    head_budget, relation_budget : int or None
        Maximum number of head-context / relation-context symbols (None for
        unlimited).
    max_len : int
        Sequence length including ``[CLS]``, head, ``[SEP]`` and relation.
    inverse_context : bool
        Add ``(t, r^-1, h)`` for every training triple before extracting
        contexts, so incoming edges count as neighbours.
    n_entities, n_relations : int, optional
        Vocabulary sizes; inferred from the largest id in ``X`` when omitted.
    """

    def __init__(self, head_budget=32, relation_budget=32, max_len=72,
                 inverse_context=False, n_entities=None, n_relations=None):
        self.head_budget = head_budget
        self.relation_budget = relation_budget
        self.max_len = max_len
        self.inverse_context = inverse_context
        self.n_entities = n_entities
        self.n_relations = n_relations

    def fit(self, X, y=None):
        X = check_triples(X, self.n_entities, self.n_relations)
        self.n_entities_ = self.n_entities or int(max(X[:, 0].max(), X[:, 2].max())) + 1
        self.n_relations_ = self.n_relations or int(X[:, 1].max()) + 1
        graph = build_graph(X)
        n_context_relations = self.n_relations_
        if self.inverse_context:
            graph = inverse_augmented(graph, self.n_relations_)
            n_context_relations *= 2
        self.graph_ = graph
        self.layout_ = TokenLayout(self.n_entities_, n_context_relations)
        self.cache_ = ContextCache(graph, self.head_budget, self.relation_budget)
        return self

    def transform(self, X):
        check_is_fitted(self, "cache_")
        queries = check_queries(X, self.n_entities_, self.n_relations_)
        tokens, _ = build_batch(map(tuple, queries), self.cache_, self.max_len, self.layout_)
        return tokens

    def sequence(self, head, relation):
        """The :class:`~cabkgc.sequencer.InputSequence` for one query."""
        check_is_fitted(self, "cache_")
        return build_input_sequence(head, self.cache_.head(head), relation,
                                    self.cache_.relation(relation), self.max_len, self.layout_)


class CABKGCClassifier(ClassifierMixin, BaseEstimator):
    """Tail-entity classifier over context sequences.

    ``fit`` takes training triples ``(n, 3)``; their tails are the class
    labels and the triples themselves are the context graph. Classes are
    the entity ids ``0 .. n_entities - 1``.
    """

    def __init__(self, d_model=64, n_layers=2, n_heads=4, ff_dim=256, dropout=0.0,
                 head_budget=32, relation_budget=32, max_len=72, inverse_context=False,
                 batch_size=16, learning_rate=5e-5, adam_beta1=0.9, adam_beta2=0.999,
                 adam_eps=1e-8, max_epochs=200, stabilization_patience=3,
                 stabilization_decimals=3, valid_subsample=0, random_state=0,
                 n_entities=None, n_relations=None):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.dropout = dropout
        self.head_budget = head_budget
        self.relation_budget = relation_budget
        self.max_len = max_len
        self.inverse_context = inverse_context
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.max_epochs = max_epochs
        self.stabilization_patience = stabilization_patience
        self.stabilization_decimals = stabilization_decimals
        self.valid_subsample = valid_subsample
        self.random_state = random_state
        self.n_entities = n_entities
        self.n_relations = n_relations

    def _model_config(self):
        layout = self.sequencer_.layout_
        return ModelConfig(
            token_vocab_size=layout.vocab_size,
            entity_count=self.sequencer_.n_entities_,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            ff_dim=self.ff_dim,
            max_len=self.max_len,
            dropout=self.dropout,
            seed=self.random_state,
        ).validate()

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            max_epochs=self.max_epochs,
            stabilization_patience=self.stabilization_patience,
            stabilization_decimals=self.stabilization_decimals,
            valid_subsample=self.valid_subsample,
            seed=self.random_state,
        ).validate()

    def _fit_sequencer(self, X):
        self.sequencer_ = ContextSequencer(
            self.head_budget, self.relation_budget, self.max_len, self.inverse_context,
            self.n_entities, self.n_relations,
        ).fit(X)
        self.classes_ = np.arange(self.sequencer_.n_entities_)
        self.n_entities_ = self.sequencer_.n_entities_
        self.n_relations_ = self.sequencer_.n_relations_

    def fit(self, X, y=None, X_valid=None, X_test=None, callback=None):
        """Train on triples ``X``.

        ``X_valid`` drives the stopping rule (the training triples are used
        when it is omitted). ``X_valid`` and ``X_test`` also join the filter
        set of the filtered validation metric.
        """
        X = check_triples(X, self.n_entities, self.n_relations)
        self._fit_sequencer(X)
        n_e, n_r = self.n_entities_, self.n_relations_
        valid = check_triples(X_valid, n_e, n_r, name="X_valid") if X_valid is not None else X
        test = (check_triples(X_test, n_e, n_r, allow_empty=True, name="X_test")
                if X_test is not None else np.zeros((0, 3), dtype=np.int64))
        splits = DatasetSplits(_as_tuples(X), _as_tuples(valid), _as_tuples(test))
        self.model_config_ = self._model_config()
        self.params_, self.train_report_ = train(
            self.model_config_, self._train_config(), self.sequencer_.graph_, splits,
            cache=self.sequencer_.cache_, callback=callback,
        )
        return self

    def init_untrained(self, X):
        """Set up contexts and seeded initial parameters without training."""
        X = check_triples(X, self.n_entities, self.n_relations)
        self._fit_sequencer(X)
        self.model_config_ = self._model_config()
        self.params_ = init_parameters(self.model_config_)
        self.train_report_ = None
        return self

    def decision_function(self, X, batch_size=256):
        """Logits ``(n, n_entities)`` for queries ``X``."""
        check_is_fitted(self, "params_")
        queries = check_queries(X, self.n_entities_, self.n_relations_)
        out = np.empty((len(queries), self.n_entities_))
        for lo in range(0, len(queries), batch_size):
            tokens = self.sequencer_.transform(queries[lo:lo + batch_size])
            out[lo:lo + batch_size] = logits_batch(
                self.params_, self.model_config_, tokens, segments_from_tokens(tokens)
            )
        return out

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def top_k(self, head, relation, k=10):
        """``[(entity_id, probability), ...]`` for the ``k`` most likely tails."""
        probs = self.predict_proba(np.array([[head, relation]]))[0]
        order = np.argsort(-probs, kind="stable")[:k]
        return [(int(e), float(probs[e])) for e in order]

    def evaluate(self, X, known_triples=(), protocol=FILTERED, ks=DEFAULT_KS,
                 tie_policy="pessimistic"):
        """:class:`~cabkgc.evaluator.MetricsReport` for triples ``X``.

        The filter set contains ``X`` itself, the training graph and
        ``known_triples``.
        """
        check_is_fitted(self, "params_")
        X = check_triples(X, self.n_entities_, self.n_relations_)
        index = None
        if protocol == FILTERED:
            index = known_tails(self.sequencer_.graph_.triples, *known_triples, X)
        ranks = rank_triples(
            lambda h, r: self.decision_function(np.stack([h, r], axis=1)),
            X, self.n_entities_, index, protocol, tie_policy,
        )
        return MetricsReport.from_ranks(ranks, protocol, ks)

    def score(self, X, y=None):
        """Filtered MRR of the tails of ``X``."""
        return self.evaluate(X).mrr

    def save(self, path, fingerprint, extra=None):
        check_is_fitted(self, "params_")
        header = {
            "head_budget": self.head_budget,
            "relation_budget": self.relation_budget,
            "inverse_context": int(bool(self.inverse_context)),
        }
        header.update(extra or {})
        checkpoint.save_checkpoint(path, self.params_, self.model_config_, fingerprint, header)

    @classmethod
    def load(cls, path, X_train, expected_fingerprint=None, n_entities=None, n_relations=None):
        """Rebuild a fitted classifier from a checkpoint and its training triples."""
        params, cfg, header = checkpoint.load_checkpoint(path, expected_fingerprint)
        budgets = {}
        for key in ("head_budget", "relation_budget"):
            value = header.get(f"extra.{key}", "32")
            budgets[key] = None if value == "None" else int(value)
        est = cls(
            d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
            ff_dim=cfg.ff_dim, dropout=cfg.dropout, max_len=cfg.max_len,
            inverse_context=bool(int(header.get("extra.inverse_context", "0"))),
            random_state=cfg.seed, n_entities=n_entities or cfg.entity_count,
            n_relations=n_relations, **budgets,
        )
        est._fit_sequencer(check_triples(X_train, est.n_entities, n_relations))
        expected = est._model_config()
        if expected != cfg:
            raise checkpoint.VocabularyMismatch(
                "checkpoint model config does not match the training data layout"
            )
        est.model_config_ = cfg
        est.params_ = params
        est.train_report_ = None
        return est


def _as_tuples(X):
    return [tuple(int(v) for v in row) for row in X]
