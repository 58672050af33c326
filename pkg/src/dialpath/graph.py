"""Turn-level semantic graphs of dialogue context.

Three construction modes share one output type:

* ``compositional``: turns are linked when any of their lexical spans are
  similar (token-identical, or span-mean cosine >= tau).
* ``global``: turns are linked when their whole-turn mean vectors are similar.
* ``fully_connected``: every pair of turns is linked.

Edge direction is ``BiDirect`` (both ways) or ``TODirect``.  TODirect edges
are stored from the later turn to the earlier one so that row ``i`` of the
adjacency lists the turns a backward walk may step to from ``i``; the
``todirect_orientation="forward"`` debug switch stores earlier -> later instead.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dialogue import Dialogue, DialogueContext, DialogueTurn, context_at
from .embeddings import DEFAULT_TAU, EmbeddingTable, SpanSimilarity
from .spans import ENTITY, LexicalSpan, RuleSpanExtractor, SpanExtractor

COMPOSITIONAL, GLOBAL, FULLY_CONNECTED = "compositional", "global", "fully_connected"
BIDIRECT, TODIRECT = "BiDirect", "TODirect"

Edge = tuple[int, int]


@dataclass(frozen=True)
class GraphConfig:
    semantics: str = COMPOSITIONAL
    direction: str = BIDIRECT
    tau: float = DEFAULT_TAU
    todirect_orientation: str = "backward"

    def __post_init__(self):
        if self.semantics not in (COMPOSITIONAL, GLOBAL, FULLY_CONNECTED):
            raise ValueError(f"unknown graph semantics {self.semantics!r}")
        if self.direction not in (BIDIRECT, TODIRECT):
            raise ValueError(f"unknown edge direction {self.direction!r}")
        if self.todirect_orientation not in ("backward", "forward"):
            raise ValueError(f"unknown TODirect orientation {self.todirect_orientation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SemanticGraph:
    current: int
    nodes: tuple[int, ...]
    edges: frozenset[Edge]
    span_map: dict[int, list[LexicalSpan]]
    turn_tokens: dict[int, tuple[str, ...]]
    provenance: dict[Edge, list[tuple[LexicalSpan, LexicalSpan]]] = field(default_factory=dict)
    config: GraphConfig = field(default_factory=GraphConfig)
    similar: Callable[[LexicalSpan, LexicalSpan], bool] | None = field(default=None, repr=False, compare=False)

    def neighbors(self, i: int) -> list[int]:
        return sorted((j for (a, j) in self.edges if a == i), reverse=True)

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.edges

    def __len__(self) -> int:
        return len(self.nodes)


def _add_edge(edges: set, prov: dict, i: int, j: int, pair=None) -> None:
    edges.add((i, j))
    if pair is not None:
        prov.setdefault((i, j), []).append(pair)


def _link(edges, prov, cfg: GraphConfig, i: int, j: int, pair=None) -> None:
    """Add the edge(s) between turns i < j according to the direction setting."""
    if cfg.direction == BIDIRECT:
        _add_edge(edges, prov, i, j, pair)
        _add_edge(edges, prov, j, i, None if pair is None else (pair[1], pair[0]))
    elif cfg.todirect_orientation == "backward":
        _add_edge(edges, prov, j, i, None if pair is None else (pair[1], pair[0]))
    else:
        _add_edge(edges, prov, i, j, pair)


def _prepare(context: DialogueContext, question: DialogueTurn, extractor: SpanExtractor):
    turns = list(context.turns) + [question.without_answer()]
    resolved = extractor.resolve(turns)
    span_map = {t.turn_index: extractor.extract(t) for t in resolved}
    tokens = {t.turn_index: t.tokens for t in resolved}
    return resolved, span_map, tokens


def build_graph(context: DialogueContext, question: DialogueTurn, cfg: GraphConfig | None = None,
                extractor: SpanExtractor | None = None, similar: SpanSimilarity | None = None) -> SemanticGraph:
    """Compositional graph: edges from similar lexical spans in different turns."""
    cfg = cfg or GraphConfig()
    extractor = extractor or RuleSpanExtractor()
    similar = similar or SpanSimilarity(EmbeddingTable(100), cfg.tau)
    resolved, span_map, tokens = _prepare(context, question, extractor)
    nodes = tuple(t.turn_index for t in resolved)
    edges: set[Edge] = {(i, i) for i in nodes}
    prov: dict = {}
    for a, i in enumerate(nodes):
        for j in nodes[a + 1:]:
            for s_i in span_map[i]:
                for s_j in span_map[j]:
                    if similar(s_i, s_j):
                        _link(edges, prov, cfg, i, j, (s_i, s_j))
    return SemanticGraph(question.turn_index, nodes, frozenset(edges), span_map, tokens, prov, cfg, similar)


def _turn_span(turn_index: int, tokens) -> LexicalSpan | None:
    content = tuple(t for t in tokens if any(ch.isalnum() for ch in t))
    return LexicalSpan(turn_index, content, ENTITY) if content else None


def build_global_graph(context: DialogueContext, question: DialogueTurn, cfg: GraphConfig | None = None,
                       extractor: SpanExtractor | None = None, similar: SpanSimilarity | None = None) -> SemanticGraph:
    """Global graph: edges from whole-turn mean-vector similarity."""
    cfg = cfg or GraphConfig(semantics=GLOBAL)
    extractor = extractor or RuleSpanExtractor()
    similar = similar or SpanSimilarity(EmbeddingTable(100), cfg.tau)
    resolved, span_map, tokens = _prepare(context, question, extractor)
    nodes = tuple(t.turn_index for t in resolved)
    whole = {i: _turn_span(i, tokens[i]) for i in nodes}
    edges: set[Edge] = {(i, i) for i in nodes}
    prov: dict = {}
    for a, i in enumerate(nodes):
        for j in nodes[a + 1:]:
            if whole[i] is not None and whole[j] is not None and similar(whole[i], whole[j]):
                _link(edges, prov, cfg, i, j, (whole[i], whole[j]))
    return SemanticGraph(question.turn_index, nodes, frozenset(edges), span_map, tokens, prov, cfg, similar)


def build_fully_connected(context: DialogueContext, question: DialogueTurn, cfg: GraphConfig | None = None,
                          extractor: SpanExtractor | None = None, similar: SpanSimilarity | None = None) -> SemanticGraph:
    """Every pair of distinct turns linked (per direction setting), plus self-loops."""
    cfg = cfg or GraphConfig(semantics=FULLY_CONNECTED)
    extractor = extractor or RuleSpanExtractor()
    similar = similar or SpanSimilarity(EmbeddingTable(100), cfg.tau)
    resolved, span_map, tokens = _prepare(context, question, extractor)
    nodes = tuple(t.turn_index for t in resolved)
    edges: set[Edge] = {(i, i) for i in nodes}
    for a, i in enumerate(nodes):
        for j in nodes[a + 1:]:
            _link(edges, {}, cfg, i, j)
    return SemanticGraph(question.turn_index, nodes, frozenset(edges), span_map, tokens, {}, cfg, similar)


_BUILDERS = {COMPOSITIONAL: build_graph, GLOBAL: build_global_graph, FULLY_CONNECTED: build_fully_connected}


class GraphBuilder:
    """Builds the graph of any (dialogue, turn) with a fixed config, extractor and similarity."""

    def __init__(self, cfg: GraphConfig | None = None, table: EmbeddingTable | None = None,
                 extractor: SpanExtractor | None = None):
        self.cfg = cfg or GraphConfig()
        self.table = table or EmbeddingTable(100)
        self.extractor = extractor or RuleSpanExtractor()
        self.similar = SpanSimilarity(self.table, self.cfg.tau)

    def build(self, dialogue: Dialogue, t: int) -> SemanticGraph:
        context, question = context_at(dialogue, t)
        return _BUILDERS[self.cfg.semantics](context, question, self.cfg, self.extractor, self.similar)

    def answer_spans(self, dialogue: Dialogue, t: int) -> list[LexicalSpan]:
        """Spans of turn t's gold answer, after coreference over turns 1..t."""
        resolved = self.extractor.resolve(dialogue.turns[:t])
        answer = resolved[-1].answer
        if not answer:
            return []
        return self.extractor.extract(DialogueTurn(t, answer))

    def answer_tokens(self, dialogue: Dialogue, t: int) -> tuple[str, ...]:
        return self.extractor.resolve(dialogue.turns[:t])[-1].answer


def adjacency(graph: SemanticGraph, size: int | None = None) -> np.ndarray:
    """0/1 matrix with A[i-1, j-1] = 1 iff <i, j> is an edge; padded to ``size`` if given."""
    n = size or max(graph.nodes)
    a = np.zeros((n, n), dtype=np.int8)
    for i, j in graph.edges:
        a[i - 1, j - 1] = 1
    return a


def graph_to_json(graph: SemanticGraph) -> dict:
    adj = adjacency(graph)
    return {
        "turn": graph.current,
        "nodes": list(graph.nodes),
        "edges": sorted([list(e) for e in graph.edges]),
        "adjacency": {str(i): [j for j in sorted(graph.nodes, reverse=True) if adj[i - 1, j - 1]] for i in graph.nodes},
        "spans": {str(i): [{"tokens": list(s.tokens), "kind": s.kind} for s in graph.span_map[i]] for i in graph.nodes},
        "provenance": [
            {"edge": list(e), "pairs": [[a.text, b.text] for a, b in pairs]}
            for e, pairs in sorted(graph.provenance.items())
        ],
        "config": graph.config.to_dict(),
    }


def graph_to_dot(graph: SemanticGraph) -> str:
    lines = [f"digraph turn{graph.current} {{"]
    for i in graph.nodes:
        label = "\\n".join(s.text for s in graph.span_map[i]) or "-"
        shape = "doublecircle" if i == graph.current else "circle"
        lines.append(f'  t{i} [shape={shape}, label="{i}\\n{label}"];')
    for i, j in sorted(graph.edges):
        if i == j:
            continue
        pairs = graph.provenance.get((i, j), [])
        attr = f' [label="{pairs[0][0].text}~{pairs[0][1].text}"]' if pairs else ""
        lines.append(f"  t{i} -> t{j}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_json_text(graph: SemanticGraph) -> str:
    return json.dumps(graph_to_json(graph), sort_keys=True)
