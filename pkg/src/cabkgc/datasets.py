"""Deterministic synthetic knowledge graphs for end-to-end checks."""

import numpy as np

from .kg_store import DatasetSplits, Triple, Vocabulary

SYNTHETIC_RELATIONS = ("has", "f1", "f2", "t1", "t2")
N_LABELS = 4
NULL = "null"


def synthetic_answer(pattern, relation):
    """Label index that ``(object with pattern, relation, ?)`` resolves to."""
    if relation == "t1":
        return pattern & 1
    if relation == "t2":
        return 2 + (pattern >> 1 & 1)
    raise ValueError(f"not a target relation: {relation!r}")


def make_synthetic_kg(n_entities=50, n_test_per_pattern=2, n_valid_per_pattern=3,
                      random_state=0):
    """A small graph whose target tails are a fixed function of head context.

    Entities are four labels, a ``null`` sink and ``n_entities - 5`` objects.
    Object ``i`` carries the feature pattern ``i % 4``: bit 0 adds the edge
    ``(o, f1, null)`` and bit 1 the edge ``(o, f2, null)``. The targets are
    ``(o, t1, label[bit0])`` and ``(o, t2, label[2 + bit1])``, so each one is
    decided by a single relation in the head context.

    Two kinds of background edges keep the context from giving the answer
    away. Every object links to every label through ``has``, so labels
    appear as neighbours of every object. Every object also has ``t1`` and
    ``t2`` edges to ``null``, so the target relations appear in every head
    context, including objects whose targets are held out. The filtered
    protocol removes ``null`` as a known tail.

    Per pattern, ``n_test_per_pattern`` objects move both targets to the
    test split and ``n_valid_per_pattern`` further objects to the validation
    split. The remaining objects keep both targets in training. Held-out
    objects therefore have no target edge in training, and only their
    context says which label is right.

    Returns
    -------
    vocab : Vocabulary
        Labels first (``label0``...), then ``null``, then objects (``obj0``...).
    splits : DatasetSplits
    """
    n_objects = n_entities - N_LABELS - 1
    per_pattern = n_objects // 4
    if n_test_per_pattern < 0 or n_valid_per_pattern < 0:
        raise ValueError("per-pattern split sizes must be non-negative")
    if n_test_per_pattern + n_valid_per_pattern >= per_pattern:
        raise ValueError(
            f"{n_entities} entities leave {per_pattern} objects per pattern; "
            "at least one must stay in training"
        )
    rng = np.random.default_rng(random_state)
    labels = [f"label{i}" for i in range(N_LABELS)]
    objects = [f"obj{i}" for i in range(n_objects)]

    background, targets = [], []
    for i, obj in enumerate(objects):
        pattern = i % 4
        background.extend((obj, "has", label) for label in labels)
        background.extend([(obj, "t1", NULL), (obj, "t2", NULL)])
        if pattern & 1:
            background.append((obj, "f1", NULL))
        if pattern & 2:
            background.append((obj, "f2", NULL))
        targets.append([(obj, r, labels[synthetic_answer(pattern, r)]) for r in ("t1", "t2")])

    train, valid, test = list(background), [], []
    n_held = n_test_per_pattern + n_valid_per_pattern
    for pattern in range(4):
        members = np.arange(pattern, n_objects, 4)
        members = members[rng.permutation(len(members))]
        for k, i in enumerate(members):
            if k < n_test_per_pattern:
                test.extend(targets[i])
            elif k < n_held:
                valid.extend(targets[i])
            else:
                train.extend(targets[i])

    vocab = Vocabulary()
    for name in labels + [NULL] + objects:
        vocab.add_entity(name)
    for name in SYNTHETIC_RELATIONS:
        vocab.add_relation(name)

    def encode(rows):
        return [Triple(vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t))
                for h, r, t in rows]

    return vocab, DatasetSplits(encode(train), encode(valid), encode(test))
