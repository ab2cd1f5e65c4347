"""Context-aware tail prediction for knowledge graphs.

A query ``(h, r, ?)`` is serialised together with the relations and
neighbours of ``h`` and the entities linked by ``r`` in the training graph,
encoded by a small transformer and classified over all entities.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .context import ContextCache, ContextSet, head_context, relation_context
from .datasets import make_synthetic_kg
from .encoder import ModelConfig, init_parameters, predict_tail_distribution, softmax
from .estimator import CABKGCClassifier, ContextSequencer
from .evaluator import MetricsReport, compute_rank, evaluate_split, hits_at_k, mrr
from .exceptions import CABKGCError
from .kg_store import DatasetSplits, KnowledgeGraph, Triple, Vocabulary, build_graph, ingest_splits
from .sequencer import InputSequence, TokenLayout, build_input_sequence, render_sequence
from .trainer import TrainConfig, TrainReport, check_gradients, train

__version__ = "0.1.0"

__all__ = [
    "CABKGCClassifier",
    "CABKGCError",
    "ContextCache",
    "ContextSequencer",
    "ContextSet",
    "DatasetSplits",
    "InputSequence",
    "KnowledgeGraph",
    "MetricsReport",
    "ModelConfig",
    "TokenLayout",
    "TrainConfig",
    "TrainReport",
    "Triple",
    "Vocabulary",
    "build_graph",
    "build_input_sequence",
    "check_gradients",
    "compute_rank",
    "evaluate_split",
    "head_context",
    "hits_at_k",
    "ingest_splits",
    "init_parameters",
    "load_checkpoint",
    "make_synthetic_kg",
    "mrr",
    "predict_tail_distribution",
    "relation_context",
    "render_sequence",
    "save_checkpoint",
    "softmax",
    "train",
]
