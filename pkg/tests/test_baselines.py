import numpy as np
import pytest

from dialpath.baselines import baseline_path, last_n
from dialpath.graph import GraphBuilder
from dialpath.oracle import enumerate_paths

from test_oracle import random_graph


def test_last_one():
    assert last_n(5, 1).turns == (5, 4)


def test_last_ten_clamps_at_first_turn():
    assert last_n(3, 10).turns == (3, 2, 1)
    assert last_n(1, 4).turns == (1,)


def test_n_out_of_range():
    with pytest.raises(ValueError):
        last_n(5, 0)
    with pytest.raises(ValueError):
        last_n(5, 11)


def test_random_draws_are_valid():
    rng = np.random.default_rng(0)
    for k in range(100):
        g = random_graph(np.random.default_rng(k), int(rng.integers(1, 11)))
        paths = enumerate_paths(g)
        for _ in range(100):
            turns = baseline_path("random", g, len(g.nodes), rng, paths=paths).turns
            assert turns[0] == len(g.nodes)
            assert all(a > b and g.has_edge(a, b) for a, b in zip(turns, turns[1:]))


def test_random_is_uniform_over_paths(fig1):
    g = GraphBuilder().build(fig1, 5)
    paths = enumerate_paths(g)
    rng = np.random.default_rng(1)
    counts = {p.turns: 0 for p in paths}
    for _ in range(8000):
        counts[baseline_path("random", g, 5, rng, paths=paths).turns] += 1
    assert all(abs(c / 8000 - 1 / len(paths)) < 0.02 for c in counts.values())


def test_oracle_and_unknown():
    assert baseline_path("oracle", None, 5, oracle=last_n(5, 1)).turns == (5, 4)
    with pytest.raises(ValueError):
        baseline_path("oracle", None, 5)
    with pytest.raises(ValueError):
        baseline_path("sideways", None, 5)
