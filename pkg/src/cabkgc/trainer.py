"""Full-softmax cross-entropy training with Adam and metric-stabilisation stopping."""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .context import ContextCache
from .encoder import PROB_FLOOR, init_parameters, logits_batch, loss_and_gradients
from .evaluator import DEFAULT_KS, FILTERED, evaluate_split
from .exceptions import EmptySplit, IndexOutOfRange, InvalidConfig, ShapeMismatch
from .sequencer import N_SPECIAL, TokenLayout, build_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    stabilization_patience: int = 3
    stabilization_decimals: int = 3
    valid_subsample: int = 0
    seed: int = 0

    def validate(self):
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.max_epochs < 1:
            raise InvalidConfig(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.stabilization_patience < 1:
            raise InvalidConfig("stabilization_patience must be >= 1")
        return self


def cross_entropy_loss(probs, true_tail):
    """``-log p[true_tail]`` with the probability floored at 1e-12."""
    probs = np.asarray(probs)
    if not 0 <= true_tail < len(probs):
        raise IndexOutOfRange(f"true tail {true_tail} outside [0, {len(probs)})")
    return float(-np.log(max(probs[true_tail], PROB_FLOOR)))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ShapeMismatch("params, grads and optimizer state name different tensors")
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_eps
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


class StabilizationRule:
    """Stop once the rounded metric repeats ``patience`` times in a row."""

    def __init__(self, patience=3, decimals=3):
        self.patience = patience
        self.decimals = decimals
        self.previous = None
        self.repeats = 0

    def update(self, value):
        rounded = round(float(value), self.decimals)
        if rounded == self.previous:
            self.repeats += 1
        else:
            self.repeats = 0
        self.previous = rounded
        return self.repeats >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    valid_mrr: float
    valid_hits: dict
    wall_time: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    @property
    def losses(self):
        return [e.mean_loss for e in self.epochs]

    @property
    def valid_mrrs(self):
        return [e.valid_mrr for e in self.epochs]

    def to_dict(self, include_timing=True):
        epochs = []
        for e in self.epochs:
            d = asdict(e)
            d["valid_hits"] = {str(k): v for k, v in e.valid_hits.items()}
            if not include_timing:
                del d["wall_time"]
            epochs.append(d)
        return {"epochs": epochs, "stop_reason": self.stop_reason, "best_epoch": self.best_epoch}


def layout_for(model_cfg):
    return TokenLayout(
        model_cfg.entity_count, model_cfg.token_vocab_size - N_SPECIAL - model_cfg.entity_count
    )


def score_function(params, model_cfg, cache, layout=None):
    """``(heads, relations) -> logits`` closure used by the evaluator.

    Logits rank identically to the softmax probabilities and do not
    underflow into artificial ties.
    """
    layout = layout or layout_for(model_cfg)

    def score(heads, relations):
        tokens, segments = build_batch(zip(heads, relations), cache, model_cfg.max_len, layout)
        return logits_batch(params, model_cfg, tokens, segments)

    return score


def evaluate_model(params, model_cfg, cache, eval_triples, all_splits, protocol=FILTERED,
                   ks=DEFAULT_KS, **kwargs):
    return evaluate_split(
        score_function(params, model_cfg, cache), eval_triples, model_cfg.entity_count,
        all_splits, protocol, ks, **kwargs,
    )


def train(model_cfg, train_cfg, graph, splits, cache=None, params=None, callback=None):
    """Train on ``splits.train`` and stop on stabilised validation MRR.

    ``graph`` is the context graph (training triples). Returns the
    parameters from the epoch with the best validation MRR, and the report.
    """
    model_cfg.validate()
    train_cfg.validate()
    train_triples = np.asarray(splits.train, dtype=np.int64).reshape(-1, 3)
    if len(train_triples) == 0:
        raise EmptySplit("training split is empty")
    if len(splits.valid) == 0:
        raise EmptySplit("validation split is empty")
    cache = cache or ContextCache(graph)
    layout = layout_for(model_cfg)
    params = params if params is not None else init_parameters(model_cfg)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(train_cfg.seed)
    dropout_rng = rng if model_cfg.dropout > 0 else None

    # sequences depend only on (h, r) and the frozen graph
    all_tokens, all_segments = build_batch(
        ((h, r) for h, r, _ in train_triples), cache, model_cfg.max_len, layout
    )
    targets = train_triples[:, 2]

    valid = list(splits.valid)
    if train_cfg.valid_subsample and len(valid) > train_cfg.valid_subsample:
        pick = np.sort(
            np.random.default_rng(train_cfg.seed).choice(
                len(valid), train_cfg.valid_subsample, replace=False
            )
        )
        valid = [valid[i] for i in pick]
    known = (splits.train, splits.valid, splits.test)

    report = TrainReport()
    rule = StabilizationRule(train_cfg.stabilization_patience, train_cfg.stabilization_decimals)
    best_params, best_mrr = params, -1.0
    n = len(train_triples)
    for epoch in range(1, train_cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            loss, grads = loss_and_gradients(
                params, model_cfg, all_tokens[idx], all_segments[idx], targets[idx], dropout_rng
            )
            params, state = adam_step(params, grads, state, train_cfg)
            total += loss * len(idx)
        metrics = evaluate_model(params, model_cfg, cache, valid, known)
        record = EpochRecord(
            epoch, total / n, metrics.mrr, dict(metrics.hits_at), time.perf_counter() - start
        )
        report.epochs.append(record)
        logger.info(
            "epoch %d loss %.6f valid mrr %.4f hits@1 %.4f",
            epoch, record.mean_loss, metrics.mrr, metrics.hits_at.get(1, float("nan")),
        )
        if callback is not None:
            callback(record)
        if metrics.mrr > best_mrr:
            best_mrr, best_params, report.best_epoch = metrics.mrr, params, epoch
        if rule.update(metrics.mrr):
            report.stop_reason = "stabilized"
            break
    else:
        report.stop_reason = "max_epochs"
    return best_params, report


def relative_error(analytic, numeric, floor=1e-5):
    """``|a - n| / max(|a|, |n|, floor)``; the floor absorbs finite-difference
    noise on coordinates whose true gradient is zero."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_errors(model_cfg, n_probes, batch_size=4, step=1e-5, seed=0,
                    gradient_fn=loss_and_gradients, jitter=0.1):
    """Worst relative error per tensor between analytic and central-difference gradients.

    Probes are spread round-robin over every tensor on a random batch, so
    ``n_probes >= n_tensors`` touches each tensor at least once. The
    parameters are jittered away from their initial values so layer-norm
    scales and biases are not at degenerate points.
    """
    if n_probes <= 0:
        logger.warning("gradient check called with n_probes=%d; nothing checked", n_probes)
        return {}
    rng = np.random.default_rng(seed)
    params = init_parameters(model_cfg)
    params = {k: p + rng.normal(0.0, jitter, p.shape) for k, p in params.items()}
    tokens, segments, targets = _random_batch(model_cfg, batch_size, rng)
    _, grads = gradient_fn(params, model_cfg, tokens, segments, targets)

    def loss_at(name, idx, value):
        old = params[name][idx]
        params[name][idx] = value
        loss, _ = loss_and_gradients(params, model_cfg, tokens, segments, targets)
        params[name][idx] = old
        return loss

    names = list(params)
    worst = {}
    for i in range(n_probes):
        name = names[i % len(names)]
        idx = tuple(int(rng.integers(0, s)) for s in params[name].shape)
        base = params[name][idx]
        numeric = (loss_at(name, idx, base + step) - loss_at(name, idx, base - step)) / (2 * step)
        worst[name] = max(worst.get(name, 0.0), relative_error(grads[name][idx], numeric))
    return worst


def check_gradients(model_cfg, n_probes, batch_size=4, step=1e-5, seed=0,
                    gradient_fn=loss_and_gradients, jitter=0.1):
    """Worst relative error over all probes (0.0, with a warning, when ``n_probes <= 0``)."""
    errors = gradient_errors(model_cfg, n_probes, batch_size, step, seed, gradient_fn, jitter)
    return max(errors.values(), default=0.0)


def _random_batch(model_cfg, batch_size, rng):
    layout = layout_for(model_cfg)
    length = model_cfg.max_len
    tokens = rng.integers(N_SPECIAL, model_cfg.token_vocab_size, size=(batch_size, length))
    segments = np.zeros_like(tokens)
    for row in range(batch_size):
        content = int(rng.integers(4, length + 1))
        sep = int(rng.integers(2, content - 1))
        tokens[row, 0] = 0
        tokens[row, sep] = 1
        tokens[row, content:] = 2
        segments[row, sep + 1:content] = 1
    targets = rng.integers(0, layout.n_entities, size=batch_size)
    return tokens, segments, targets
