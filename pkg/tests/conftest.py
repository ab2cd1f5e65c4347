import numpy as np
import pytest

from cabkgc.kg_store import Triple, build_graph

# Worked example used throughout the context and sequence tests:
# T = {(A,r1,B), (A,r2,C), (B,r1,C), (D,r1,A)}
A, B, C, D = 0, 1, 2, 3
R1, R2, R3 = 0, 1, 2


@pytest.fixture
def small_triples():
    return [Triple(A, R1, B), Triple(A, R2, C), Triple(B, R1, C), Triple(D, R1, A)]


@pytest.fixture
def small_graph(small_triples):
    return build_graph(small_triples)


def random_triples(rng, n_entities, n_relations, n_triples):
    raw = rng.integers(0, [n_entities, n_relations, n_entities], size=(n_triples, 3))
    return [Triple(*map(int, row)) for row in raw]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
