"""Word vectors, span embeddings and the span similarity test used for graph edges."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .spans import LexicalSpan

DEFAULT_TAU = 0.6
HASH_PROJECTION, ZERO = "hash_projection", "zero"


class EmbeddingError(ValueError):
    pass


def hash_vector(token: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector seeded by the token's UTF-8 bytes."""
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    oov: str = HASH_PROJECTION

    def __post_init__(self):
        if self.oov not in (HASH_PROJECTION, ZERO):
            raise EmbeddingError(f"unknown OOV strategy {self.oov!r}")
        for tok, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise EmbeddingError(f"vector for {tok!r} has shape {v.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(v)):
                raise EmbeddingError(f"vector for {tok!r} is not finite")
        self._cache: dict[str, np.ndarray] = {}

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def vector(self, token: str) -> np.ndarray:
        v = self.vectors.get(token)
        if v is not None:
            return v
        v = self._cache.get(token)
        if v is None:
            v = hash_vector(token, self.dim) if self.oov == HASH_PROJECTION else np.zeros(self.dim)
            self._cache[token] = v
        return v

    def mean_vector(self, tokens: Iterable[str]) -> np.ndarray:
        vs = [self.vector(t) for t in tokens]
        if not vs:
            return np.zeros(self.dim)
        return np.mean(vs, axis=0)


def load_vectors(path, oov: str = HASH_PROJECTION) -> EmbeddingTable:
    """Read ``token v1 ... vd`` lines.  A leading word2vec ``count dim`` header is skipped."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            try:
                vals = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric vector entry") from exc
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise EmbeddingError(f"{path}:{lineno}: empty vector")
            elif len(vals) != dim:
                raise EmbeddingError(f"{path}:{lineno}: expected {dim} values, found {len(vals)}")
            if not np.all(np.isfinite(vals)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite value")
            vectors[parts[0]] = vals
    if dim is None:
        raise EmbeddingError(f"{path}: no vectors found")
    return EmbeddingTable(dim, vectors, oov)


def embed_span(span: LexicalSpan | Sequence[str], table: EmbeddingTable) -> np.ndarray:
    tokens = span.tokens if isinstance(span, LexicalSpan) else span
    return table.mean_vector(tokens)


def cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def is_similar(s_i: LexicalSpan, s_j: LexicalSpan, table: EmbeddingTable, tau: float = DEFAULT_TAU) -> bool:
    if s_i.tokens == s_j.tokens:
        return True
    return cosine(embed_span(s_i, table), embed_span(s_j, table)) >= tau


class SpanSimilarity:
    """``is_similar`` bound to a table and threshold, with cached span vectors."""

    def __init__(self, table: EmbeddingTable, tau: float = DEFAULT_TAU):
        self.table = table
        self.tau = tau
        self._vec: dict[tuple[str, ...], np.ndarray] = {}

    def _embed(self, tokens):
        v = self._vec.get(tokens)
        if v is None:
            v = self._vec[tokens] = embed_span(tokens, self.table)
        return v

    def score(self, s_i: LexicalSpan, s_j: LexicalSpan) -> float:
        if s_i.tokens == s_j.tokens:
            return 1.0
        return cosine(self._embed(s_i.tokens), self._embed(s_j.tokens))

    def __call__(self, s_i: LexicalSpan, s_j: LexicalSpan) -> bool:
        return s_i.tokens == s_j.tokens or self.score(s_i, s_j) >= self.tau
