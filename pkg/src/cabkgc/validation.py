"""Input checks for triple and query arrays."""

import numpy as np


def check_triples(X, n_entities=None, n_relations=None, allow_empty=False, name="X"):
    """Coerce ``X`` to an ``int64`` array of shape ``(n, 3)`` and range-check ids."""
    X = np.asarray(X)
    if X.size == 0:
        if not allow_empty:
            raise ValueError(f"{name} contains no triples")
        return np.zeros((0, 3), dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {X.shape}")
    return _check_ids(X, n_entities, n_relations, (0, 2), name)


def check_queries(X, n_entities=None, n_relations=None, name="X"):
    """Accept ``(n, 2)`` queries or ``(n, 3)`` triples; return ``(n, 2)`` queries."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] not in (2, 3):
        raise ValueError(f"{name} must have shape (n, 2) or (n, 3), got {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} contains no queries")
    return _check_ids(X[:, :2], n_entities, n_relations, (0,), name)


def _check_ids(X, n_entities, n_relations, entity_cols, name):
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise ValueError(f"{name} must contain integer ids")
    X = X.astype(np.int64)
    if X.min() < 0:
        raise ValueError(f"{name} contains negative ids")
    if n_entities is not None and X[:, list(entity_cols)].max() >= n_entities:
        raise ValueError(f"{name} has entity ids >= n_entities={n_entities}")
    if n_relations is not None and X[:, 1].max() >= n_relations:
        raise ValueError(f"{name} has relation ids >= n_relations={n_relations}")
    return X
