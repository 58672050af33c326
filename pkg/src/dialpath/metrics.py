"""Path and answer metrics.

BLEU is corpus-level with clipped n-gram precision, uniform weights over
orders 1..n and the standard brevity penalty (reference length closest to
each candidate).  With ``smoothing="epsilon"`` a zero n-gram match count is
replaced by 0.1 before taking logs; the default ``"none"`` returns 0 for
any order with no match.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

EPSILON = 0.1


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
                max_n: int = 4, smoothing: str = "none") -> float:
    """BLEU-``max_n`` of tokenised candidates against one or more references each."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if smoothing not in ("none", "epsilon"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            total[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, total):
        if t == 0:
            return 0.0
        if m == 0:
            if smoothing == "none":
                return 0.0
            m = EPSILON
        log_p += math.log(m / t) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def edge_counts(pred: Sequence[int], gold: Sequence[int]) -> tuple[int, int, int]:
    """(true positives, predicted edges, gold edges) over consecutive-pair sets."""
    p = set(zip(pred, pred[1:]))
    g = set(zip(gold, gold[1:]))
    return len(p & g), len(p), len(g)


def _prf(tp: int, np_: int, ng: int) -> tuple[float, float, float]:
    # both sides empty means the (trivial) paths agree exactly
    prec = tp / np_ if np_ else (1.0 if ng == 0 else 0.0)
    rec = tp / ng if ng else (1.0 if np_ == 0 else 0.0)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


@dataclass
class Prediction:
    dialogue: str
    turn: int
    path: tuple[int, ...]
    answer: tuple[str, ...] | None = None
    answer_hits: int = 0
    answer_total: int = 0


@dataclass
class Reference:
    dialogue: str
    turn: int
    path: tuple[int, ...]
    answer: tuple[str, ...] = ()
    hops: int | None = None


@dataclass
class EvalReport:
    n: int
    path_exact_match: float
    edge_precision: float
    edge_recall: float
    edge_f1: float
    answer_token_accuracy: float | None = None
    answer_exact_match: float | None = None
    bleu: dict[str, float] = field(default_factory=dict)
    per_hop: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _summarise(preds: Sequence[Prediction], refs: Sequence[Reference], with_hops: bool = True) -> EvalReport:
    n = len(preds)
    em = sum(p.path == r.path for p, r in zip(preds, refs)) / n if n else 0.0
    tp = np_ = ng = 0
    for p, r in zip(preds, refs):
        a, b, c = edge_counts(p.path, r.path)
        tp, np_, ng = tp + a, np_ + b, ng + c
    prec, rec, f1 = _prf(tp, np_, ng)
    report = EvalReport(n, em, prec, rec, f1)
    total = sum(p.answer_total for p in preds)
    if total:
        report.answer_token_accuracy = sum(p.answer_hits for p in preds) / total
    answered = [(p, r) for p, r in zip(preds, refs) if p.answer is not None]
    if answered:
        report.answer_exact_match = sum(tuple(p.answer) == tuple(r.answer) for p, r in answered) / len(answered)
        cands = [list(p.answer) for p, _ in answered]
        rs = [[list(r.answer)] for _, r in answered]
        report.bleu = {f"bleu{k}": corpus_bleu(cands, rs, k) for k in range(1, 5)}
    if with_hops:
        hops = sorted({r.hops for r in refs if r.hops is not None})
        for h in hops:
            idx = [i for i, r in enumerate(refs) if r.hops == h]
            sub = _summarise([preds[i] for i in idx], [refs[i] for i in idx], with_hops=False)
            report.per_hop[str(h)] = {"n": sub.n, "path_exact_match": sub.path_exact_match, "edge_f1": sub.edge_f1,
                                      "answer_token_accuracy": sub.answer_token_accuracy}
    return report


def evaluate(predictions: Sequence[Prediction], references: Sequence[Reference]) -> EvalReport:
    """Aggregate path and answer metrics; predictions must align with references by (dialogue, turn)."""
    if len(predictions) != len(references):
        raise ValueError(f"{len(predictions)} predictions for {len(references)} references")
    for p, r in zip(predictions, references):
        if (p.dialogue, p.turn) != (r.dialogue, r.turn):
            raise ValueError(f"misaligned prediction {p.dialogue}/{p.turn} vs reference {r.dialogue}/{r.turn}")
    return _summarise(predictions, references)
