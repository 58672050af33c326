"""Fixed path strategies the learned decoder is compared against."""
from __future__ import annotations

import numpy as np

from .graph import SemanticGraph
from .oracle import ReasoningPath, enumerate_paths

STRATEGIES = ("last_n", "random", "oracle")


def last_n(t: int, n: int) -> ReasoningPath:
    """t, t-1, ..., max(1, t-n): turn indices are 1-based, so the walk stops at turn 1."""
    if not 1 <= n <= 10:
        raise ValueError(f"n must lie in [1, 10], got {n}")
    return ReasoningPath(tuple(range(t, max(1, t - n) - 1, -1)))


def random_path(graph: SemanticGraph, rng: np.random.Generator, paths=None) -> ReasoningPath:
    """Uniform draw over every graph-valid strictly decreasing path from the current turn."""
    paths = paths if paths is not None else enumerate_paths(graph)
    return paths[int(rng.integers(len(paths)))]


def baseline_path(strategy: str, graph: SemanticGraph | None, t: int, rng: np.random.Generator | None = None,
                  n: int = 1, oracle: ReasoningPath | None = None, paths=None) -> ReasoningPath:
    if strategy == "last_n":
        return last_n(t, n)
    if strategy == "random":
        if graph is None and paths is None:
            raise ValueError("random paths need the graph")
        return random_path(graph, rng if rng is not None else np.random.default_rng(0), paths)
    if strategy == "oracle":
        if oracle is None:
            raise ValueError("oracle strategy needs the oracle path")
        return oracle
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
