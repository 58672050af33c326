"""Ground-truth reasoning paths: enumeration, answer coverage, and selection."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dialogue import MAX_TURNS
from .embeddings import cosine
from .graph import SemanticGraph
from .spans import LexicalSpan


@dataclass(frozen=True)
class ReasoningPath:
    turns: tuple[int, ...]
    terminated: bool = True

    def __post_init__(self):
        if not self.turns:
            raise ValueError("a reasoning path starts at the current turn and cannot be empty")

    @property
    def start(self) -> int:
        return self.turns[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.turns, self.turns[1:]))

    def __len__(self) -> int:
        return len(self.turns)

    def check(self, t: int | None = None, max_len: int = MAX_TURNS) -> "ReasoningPath":
        """Raise if the path breaks start/ordering/length invariants."""
        if t is not None and self.turns[0] != t:
            raise ValueError(f"path {self.turns} does not start at turn {t}")
        if any(b >= a for a, b in self.edges):
            raise ValueError(f"path {self.turns} is not strictly decreasing")
        if len(self.turns) > max_len:
            raise ValueError(f"path {self.turns} longer than {max_len}")
        return self

    def is_valid_in(self, graph: SemanticGraph) -> bool:
        return all(graph.has_edge(a, b) for a, b in self.edges)

    def to_list(self) -> list[int]:
        return list(self.turns)


def enumerate_paths(graph: SemanticGraph, t: int | None = None, temporal: bool = True) -> list[ReasoningPath]:
    """All simple walks from ``t`` along graph edges, breadth-first.

    With ``temporal`` (the default) each step must go to a strictly earlier
    turn.  The trivial path ``[t]`` is always included.
    """
    t = graph.current if t is None else t
    if t not in graph.nodes:
        raise ValueError(f"turn {t} is not a node of the graph")
    out: list[ReasoningPath] = []
    queue: deque[tuple[int, ...]] = deque([(t,)])
    while queue:
        path = queue.popleft()
        out.append(ReasoningPath(path))
        last = path[-1]
        for j in graph.neighbors(last):
            if j == last or j in path or (temporal and j >= last):
                continue
            queue.append(path + (j,))
    return out


def _similar(graph: SemanticGraph):
    return graph.similar or (lambda a, b: a.tokens == b.tokens)


def score_path(path: ReasoningPath, answer_spans: Sequence[LexicalSpan], graph: SemanticGraph) -> int:
    """Number of distinct answer spans matched by a span of some path turn other than the first."""
    similar = _similar(graph)
    past = [s for i in path.turns[1:] for s in graph.span_map.get(i, ())]
    covered = 0
    seen: set[tuple[str, ...]] = set()
    for a in answer_spans:
        if a.tokens in seen:
            continue
        seen.add(a.tokens)
        if any(similar(a, s) for s in past):
            covered += 1
    return covered


def ground_truth_candidates(paths: Sequence[ReasoningPath], answer_spans, graph) -> tuple[list[ReasoningPath], int]:
    """Paths with maximal coverage and, among those, minimal length."""
    if not paths:
        raise ValueError("no candidate paths")
    scored = [(score_path(p, answer_spans, graph), p) for p in paths]
    best = max(s for s, _ in scored)
    top = [p for s, p in scored if s == best]
    shortest = min(len(p) for p in top)
    return [p for p in top if len(p) == shortest], best


def _pick(cands: list[ReasoningPath], rng) -> ReasoningPath:
    if len(cands) == 1:
        return cands[0]
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return cands[int(rng.integers(len(cands)))]


def select_ground_truth(paths: Sequence[ReasoningPath], answer_spans, graph: SemanticGraph,
                        rng_seed: int | np.random.Generator | None = 0) -> ReasoningPath:
    """Maximal coverage, then shortest, then a uniform draw seeded by ``rng_seed``."""
    cands, _ = ground_truth_candidates(paths, answer_spans, graph)
    return _pick(cands, rng_seed)


def global_ground_truth_candidates(graph: SemanticGraph, answer_tokens: Sequence[str], table,
                                   tau: float | None = None) -> tuple[list[ReasoningPath], float]:
    """Shortest paths to the past turn whose mean vector is most similar to the answer.

    Used with global graphs, where turns are not decomposed into spans.  If no
    reachable turn reaches ``tau`` the trivial path is the only candidate.
    """
    tau = graph.config.tau if tau is None else tau
    paths = enumerate_paths(graph)
    content = [t for t in answer_tokens if any(ch.isalnum() for ch in t)]
    if not content:
        return [paths[0]], 0.0
    ans = table.mean_vector(content)
    ends = {p.turns[-1] for p in paths if len(p) > 1}
    scores = {}
    for i in ends:
        toks = [t for t in graph.turn_tokens[i] if any(ch.isalnum() for ch in t)]
        scores[i] = cosine(table.mean_vector(toks), ans) if toks else 0.0
    if not scores or max(scores.values()) < tau:
        return [paths[0]], 0.0
    best = max(scores.values())
    targets = {i for i, s in scores.items() if s == best}
    hits = [p for p in paths if p.turns[-1] in targets]
    shortest = min(len(p) for p in hits)
    return [p for p in hits if len(p) == shortest], best


class OracleSelector:
    """Computes tie sets once per example and resamples among ties on demand."""

    def __init__(self, candidates: list[ReasoningPath]):
        self.candidates = candidates

    def sample(self, rng: np.random.Generator) -> ReasoningPath:
        return _pick(self.candidates, rng)
