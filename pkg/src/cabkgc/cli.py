"""Command-line entry point: ``cabkgc <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import FIELD_TYPES, resolve
from .context import SymbolKind
from .estimator import CABKGCClassifier
from .exceptions import CABKGCError, CheckpointError, DataError, InvalidConfig
from .kg_store import build_graph, graph_stats, ingest_splits
from .sequencer import INVERSE_SUFFIX
from .trainer import check_gradients
from .encoder import ModelConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("ingest", "context", "train", "evaluate", "predict", "check-gradients")
GRADIENT_TOLERANCE = 1e-4

logger = logging.getLogger("cabkgc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(parser):
    # every RunConfig field doubles as a flag; unset flags stay None so the
    # config file and defaults can fill them
    for name, kind in FIELD_TYPES.items():
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, dest=name, default=None, nargs="?", const="true",
                                metavar="BOOL")
        else:
            parser.add_argument(flag, dest=name, default=None, metavar=name.upper())


def build_parser():
    parser = _Parser(prog="cabkgc", description="Context-aware tail prediction for knowledge graphs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", help="flat key = value config file")
        _add_config_flags(p)
        if command in ("context", "predict"):
            p.add_argument("--head", help="head entity name")
            p.add_argument("--relation", help="relation name")
        if command == "predict":
            p.add_argument("--top-k", type=int, default=10)
        if command == "check-gradients":
            p.add_argument("--probes", type=int, default=200)
    return parser


def _overrides(args):
    return {name: getattr(args, name) for name in FIELD_TYPES if getattr(args, name, None) is not None}


def _write_effective_config(cfg, command):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(f"# command = {command}\n" + cfg.to_text(),
                                               encoding="utf-8")
    return out


def _load_dataset(cfg):
    vocab, splits = ingest_splits(cfg.train, cfg.valid, cfg.test)
    return vocab, splits


def _estimator(cfg, vocab):
    return CABKGCClassifier(
        d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads, ff_dim=cfg.ff_dim,
        dropout=cfg.dropout, head_budget=cfg.head_budget, relation_budget=cfg.relation_budget,
        max_len=cfg.max_len, inverse_context=cfg.inverse_context, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps, max_epochs=cfg.max_epochs,
        stabilization_patience=cfg.stabilization_patience,
        stabilization_decimals=cfg.stabilization_decimals, valid_subsample=cfg.valid_subsample,
        random_state=cfg.seed, n_entities=vocab.n_entities, n_relations=vocab.n_relations,
    )


def _load_model(cfg, vocab, splits, required=True):
    if not cfg.checkpoint:
        if required:
            raise InvalidConfig("checkpoint: required")
        return None
    return CABKGCClassifier.load(
        cfg.checkpoint, splits.train, expected_fingerprint=vocab.fingerprint(),
        n_entities=vocab.n_entities, n_relations=vocab.n_relations,
    )


def _lookup(vocab, kind, name):
    table = vocab.entity_by_name if kind == "entity" else vocab.relation_by_name
    if name is None:
        raise InvalidConfig(f"--{'head' if kind == 'entity' else 'relation'}: required")
    if name not in table:
        raise DataError(f"unknown {kind} {name!r}")
    return table[name]


def cmd_ingest(cfg, args, out):
    vocab, splits = _load_dataset(cfg)
    stats = graph_stats(build_graph(splits.all_triples()))
    lines = [
        f"entities = {vocab.n_entities}",
        f"relations = {vocab.n_relations}",
        f"train_triples = {len(splits.train)}",
        f"valid_triples = {len(splits.valid)}",
        f"test_triples = {len(splits.test)}",
        f"num_triples = {stats['num_triples']}",
    ]
    for name, count in splits.duplicates_removed.items():
        lines.append(f"{name}_duplicates_removed = {count}")
    out.write("\n".join(lines) + "\n")


def _symbol_line(vocab, symbol):
    if symbol.kind == SymbolKind.ENTITY:
        return f"E:{vocab.entity_name(symbol.id)}"
    if symbol.id >= vocab.n_relations:
        return f"R:{vocab.relation_name(symbol.id - vocab.n_relations)}{INVERSE_SUFFIX}"
    return f"R:{vocab.relation_name(symbol.id)}"


def cmd_context(cfg, args, out):
    vocab, splits = _load_dataset(cfg)
    est = _estimator(cfg, vocab)
    est._fit_sequencer(np.asarray(splits.train, dtype=np.int64))
    cache = est.sequencer_.cache_
    if args.head is None and args.relation is None:
        raise InvalidConfig("--head or --relation: at least one is required")
    if args.head is not None:
        ctx = cache.head(_lookup(vocab, "entity", args.head))
        out.write(f"# head context of {args.head} ({len(ctx)} symbols"
                  f"{', truncated' if ctx.truncated else ''})\n")
        out.writelines(_symbol_line(vocab, s) + "\n" for s in ctx)
    if args.relation is not None:
        ctx = cache.relation(_lookup(vocab, "relation", args.relation))
        out.write(f"# relation context of {args.relation} ({len(ctx)} symbols"
                  f"{', truncated' if ctx.truncated else ''})\n")
        out.writelines(_symbol_line(vocab, s) + "\n" for s in ctx)


def cmd_train(cfg, args, out):
    vocab, splits = _load_dataset(cfg)
    est = _estimator(cfg, vocab)

    def progress(record):
        out.write(f"epoch {record.epoch:4d}  loss {record.mean_loss:.6f}  "
                  f"valid mrr {record.valid_mrr:.4f}\n")
        out.flush()

    est.fit(splits.train, X_valid=splits.valid, X_test=splits.test, callback=progress)
    run_dir = Path(cfg.output_dir)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else run_dir / "model.cabk"
    est.save(ckpt, vocab.fingerprint())
    (run_dir / "train_report.json").write_text(
        json.dumps(est.train_report_.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    report = est.train_report_
    out.write(f"stopped after {len(report.epochs)} epoch(s): {report.stop_reason}; "
              f"best epoch {report.best_epoch}\ncheckpoint = {ckpt}\n")


def cmd_evaluate(cfg, args, out):
    vocab, splits = _load_dataset(cfg)
    est = _load_model(cfg, vocab, splits)
    triples = splits.test if cfg.split == "test" else splits.valid
    report = est.evaluate(triples, known_triples=(splits.valid, splits.test),
                          protocol=cfg.protocol, tie_policy=cfg.tie_policy)
    run_dir = Path(cfg.output_dir)
    (run_dir / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    (run_dir / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    out.write(f"# {cfg.split} split, {report.protocol} protocol, {report.n_evaluated} queries\n")
    out.write(report.table())


def cmd_predict(cfg, args, out):
    vocab, splits = _load_dataset(cfg)
    head = _lookup(vocab, "entity", args.head)
    rel = _lookup(vocab, "relation", args.relation)
    est = _load_model(cfg, vocab, splits, required=False)
    if est is None:
        logger.warning("no checkpoint given; predicting with untrained seed-%d parameters", cfg.seed)
        est = _estimator(cfg, vocab).init_untrained(splits.train)
    for rank, (entity, prob) in enumerate(est.top_k(head, rel, args.top_k), start=1):
        out.write(f"{rank}\t{vocab.entity_name(entity)}\t{prob:.6f}\n")


def cmd_check_gradients(cfg, args, out):
    model_cfg = ModelConfig(
        token_vocab_size=40, entity_count=30, d_model=cfg.d_model, n_layers=cfg.n_layers,
        n_heads=cfg.n_heads, ff_dim=cfg.ff_dim, max_len=min(cfg.max_len, 16), seed=cfg.seed,
    ).validate()
    error = check_gradients(model_cfg, args.probes, seed=cfg.seed)
    verdict = "PASS" if error < GRADIENT_TOLERANCE else "FAIL"
    out.write(f"max_relative_error = {error:.3e}\n{verdict} (tolerance {GRADIENT_TOLERANCE:g})\n")
    return EXIT_OK if verdict == "PASS" else EXIT_RUNTIME


HANDLERS = {
    "ingest": (cmd_ingest, ("train", "valid", "test")),
    "context": (cmd_context, ("train", "valid", "test")),
    "train": (cmd_train, ("train", "valid", "test")),
    "evaluate": (cmd_evaluate, ("train", "valid", "test", "checkpoint")),
    "predict": (cmd_predict, ("train", "valid", "test")),
    "check-gradients": (cmd_check_gradients, ()),
}


def run(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    log_handler = logging.StreamHandler(err)
    log_handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(log_handler)
    try:
        return _run(argv, out, err)
    finally:
        logger.removeHandler(log_handler)


def _run(argv, out, err):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing command (one of {', '.join(COMMANDS)})")
        logger.setLevel(logging.WARNING - 10 * min(args.verbose, 2))
        handler, needed = HANDLERS[args.command]
        cfg = resolve(args.config, _overrides(args)).validate(needed)
        _write_effective_config(cfg, args.command)
        status = handler(cfg, args, out)
        return EXIT_OK if status is None else status
    except UsageError as exc:
        err.write(f"cabkgc: usage error: {exc}\n")
        return EXIT_USAGE
    except InvalidConfig as exc:
        err.write(f"cabkgc: invalid config: {exc}\n")
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        err.write(f"cabkgc: data error: {exc}\n")
        return EXIT_DATA
    except CABKGCError as exc:
        err.write(f"cabkgc: error: {exc}\n")
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic line
        err.write(f"cabkgc: runtime error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
