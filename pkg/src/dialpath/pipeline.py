"""Turning (dialogue, turn) pairs into model-ready examples."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dialogue import Dialogue, Vocabulary
from .graph import GLOBAL, GraphBuilder, adjacency
from .oracle import enumerate_paths, global_ground_truth_candidates, ground_truth_candidates


@dataclass
class Example:
    dialogue_id: str
    turn: int
    q_ids: np.ndarray
    c_ids: np.ndarray
    c_turns: np.ndarray
    node_ids: list[np.ndarray]
    adj: np.ndarray
    answer_ids: np.ndarray
    candidates: list[tuple[int, ...]]
    paths: list[tuple[int, ...]]
    oracle_score: float = 0.0
    gold: tuple[int, ...] | None = None
    hops: int | None = None
    video_ref: str | None = None
    answer_tokens: tuple[str, ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.turn

    @property
    def oracle(self) -> tuple[int, ...]:
        return self.candidates[0]


def make_example(dialogue: Dialogue, t: int, builder: GraphBuilder, vocab: Vocabulary, gold=None) -> Example:
    graph = builder.build(dialogue, t)
    paths = enumerate_paths(graph)
    if builder.cfg.semantics == GLOBAL:
        cands, score = global_ground_truth_candidates(graph, builder.answer_tokens(dialogue, t), builder.table)
    else:
        cands, score = ground_truth_candidates(paths, builder.answer_spans(dialogue, t), graph)
    c_ids = [vocab.bos_id]
    c_turns = [t]
    for i in range(1, t):
        ids = vocab.encode(graph.turn_tokens[i])
        c_ids.extend(ids)
        c_turns.extend([i] * len(ids))
    answer = dialogue.turn(t).answer
    return Example(
        dialogue_id=dialogue.id,
        turn=t,
        q_ids=np.array(vocab.encode(graph.turn_tokens[t]), dtype=np.int64),
        c_ids=np.array(c_ids, dtype=np.int64),
        c_turns=np.array(c_turns, dtype=np.int64),
        node_ids=[np.array(vocab.encode(graph.turn_tokens[i]) or [vocab.pad_id], dtype=np.int64) for i in graph.nodes],
        adj=adjacency(graph),
        answer_ids=np.array(vocab.encode(answer), dtype=np.int64),
        candidates=[p.turns for p in cands],
        paths=[p.turns for p in paths],
        oracle_score=float(score),
        gold=None if gold is None else tuple(gold.path),
        hops=None if gold is None else gold.hops,
        video_ref=dialogue.video_ref,
        answer_tokens=tuple(answer),
    )


def build_examples(dialogues: Iterable[Dialogue], builder: GraphBuilder, vocab: Vocabulary,
                   gold_index: dict | None = None, all_turns: bool = False) -> list[Example]:
    """One example per gold-annotated turn; every turn of every dialogue if
    ``all_turns`` or no gold annotation exists for the dialogue."""
    out = []
    for d in dialogues:
        turns: Sequence[int]
        gold_turns = [t for t in range(1, len(d) + 1) if gold_index and (d.id, t) in gold_index]
        turns = range(1, len(d) + 1) if all_turns or not gold_turns else gold_turns
        for t in turns:
            g = gold_index.get((d.id, t)) if gold_index else None
            out.append(make_example(d, t, builder, vocab, g))
    return out


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pad_stack(seqs: Sequence[np.ndarray], pad: int = 0, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad integer sequences; returns (padded, valid-mask)."""
    n = max(min_len, max((len(s) for s in seqs), default=0))
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    valid = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        valid[i, :len(s)] = True
    return out, valid
