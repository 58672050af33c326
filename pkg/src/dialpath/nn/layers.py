"""Transformer building blocks on top of :mod:`dialpath.nn.tensor`."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

S_MASKED = -1e9

PAPER_WIDTHS = (128, 256)
PAPER_HEADS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class ModelParams:
    """Width, head count and dropout shared by every block of a model."""

    d: int = 128
    heads: int = 4
    dropout: float = 0.2
    ff_mult: int = 4

    def __post_init__(self):
        if self.d % 2:
            raise ValueError(f"model width must be even, got {self.d}")
        if self.d % self.heads:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def in_paper_ranges(self) -> bool:
        return self.d in PAPER_WIDTHS and self.heads in PAPER_HEADS and 0.1 <= self.dropout <= 0.5

    def to_dict(self) -> dict:
        return asdict(self)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Module:
    """Parameter container.  Parameters are ``Tensor`` attributes with
    ``requires_grad``; submodules may be attributes or lists of modules."""

    training = True

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        seen: set[int] = set()
        self._collect(prefix, out, seen)
        return out

    def _collect(self, prefix, out, seen):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                if id(val) not in seen:
                    seen.add(id(val))
                    out[full] = val
            elif isinstance(val, Module):
                val._collect(full + ".", out, seen)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect(f"{full}.{i}.", out, seen)

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def modules(self):
        yield self
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.named_parameters()
        missing = [k for k in params if prefix + k not in state]
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[prefix + k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = T.parameter(glorot_uniform(rng, d_in, d_out))
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.weight = T.parameter(glorot_uniform(rng, n, d))

    def __call__(self, ids) -> Tensor:
        return T.getitem(self.weight, np.asarray(ids, dtype=np.int64))


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(d))
        self.beta = T.parameter(np.zeros(d))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self._p = p
        self._rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self._p == 0.0:
            return x
        keep = (self._rng.random(x.shape) >= self._p) / (1.0 - self._p)
        return T.mul(x, keep)


class MLP(Module):
    """Two-layer perceptron with a ReLU between the layers."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


def pos_encode(length: int, d: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal position table: row p holds sin/cos pairs of p / base^(2i/d)."""
    if d % 2:
        raise ValueError(f"positional encoding needs an even width, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = base ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def masked_softmax(logits, mask, s_masked: float = S_MASKED, axis: int = -1):
    """Softmax where entries with ``mask == True`` are first replaced by ``s_masked``.

    Accepts a Tensor (differentiable) or a plain array.
    """
    mask = np.asarray(mask, dtype=bool)
    if np.any(np.all(np.broadcast_to(mask, np.shape(logits)), axis=axis)):
        raise ValueError("masked_softmax: every entry of a row is masked")
    if isinstance(logits, Tensor):
        return T.softmax(T.masked_fill(logits, mask, s_masked), axis=axis)
    z = np.where(mask, s_masked, np.asarray(logits, dtype=np.float64))
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy_with_label_smoothing(logits: Tensor, target, eps_ls: float = 0.0, weights=None) -> Tensor:
    """Mean smoothed negative log-likelihood over rows of ``logits`` (N x K).

    The smoothed target puts ``1 - eps_ls`` on the gold class and spreads
    ``eps_ls`` uniformly over all K classes.  ``weights`` (N,) zeroes out padding rows.
    """
    target = np.asarray(target, dtype=np.int64)
    n, k = logits.shape
    if target.shape != (n,):
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    if np.any((target < 0) | (target >= k)):
        raise ValueError(f"target index out of range [0, {k})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    denom = w.sum()
    if denom <= 0:
        raise ValueError("cross entropy over an empty set of targets")
    logp = T.log_softmax(logits, axis=-1)
    q = np.full((n, k), eps_ls / k)
    q[np.arange(n), target] += 1.0 - eps_ls
    q *= (w / denom)[:, None]
    return T.mul(T.tsum(T.mul(logp, q)), -1.0)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (B, L, d) inputs.

    ``mask`` is boolean, broadcastable to (B, Lq, Lk); True marks allowed keys.
    The last attention weights are kept in ``last_weights`` (B, h, Lq, Lk).
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self._d, self._h = d, heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self._last: np.ndarray | None = None

    @property
    def last_weights(self) -> np.ndarray | None:
        return self._last

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return T.transpose(T.reshape(x, (b, n, self._h, self._d // self._h)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask=None) -> Tensor:
        for name, x in (("query", query), ("key", key), ("value", value)):
            if x.ndim != 3 or x.shape[-1] != self._d:
                raise ValueError(f"{name} must have shape (B, L, {self._d}), got {x.shape}")
        if key.shape[1] != value.shape[1]:
            raise ValueError("key and value must have the same length")
        b, lq, _ = query.shape
        q = self._split(self.wq(query))
        k = self._split(self.wk(key))
        v = self._split(self.wv(value))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self._d // self._h))
        if mask is not None:
            blocked = ~np.broadcast_to(np.asarray(mask, dtype=bool), (b, lq, key.shape[1]))[:, None]
            scores = T.masked_fill(scores, blocked, S_MASKED)
        weights = T.softmax(scores, axis=-1)
        self._last = weights.data
        ctx = T.matmul(weights, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, lq, self._d))
        return self.wo(ctx)


class TransformerBlock(Module):
    """Post-norm block: attention + residual + norm, feed-forward + residual + norm."""

    def __init__(self, params: ModelParams, rng: np.random.Generator):
        d = params.d
        self.attn = MultiHeadAttention(d, params.heads, rng)
        self.norm1 = LayerNorm(d)
        self.ff = MLP(d, params.ff_mult * d, d, rng)
        self.norm2 = LayerNorm(d)
        self.drop = Dropout(params.dropout, rng)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask=None) -> Tensor:
        x = self.norm1(query + self.drop(self.attn(query, key, value, mask)))
        return self.norm2(x + self.drop(self.ff(x)))


class MultiSourceDecoderBlock(Module):
    """Causal self-attention followed by one cross-attention per memory, then feed-forward."""

    def __init__(self, params: ModelParams, n_sources: int, rng: np.random.Generator):
        d = params.d
        self.self_attn = MultiHeadAttention(d, params.heads, rng)
        self.self_norm = LayerNorm(d)
        self.cross = [MultiHeadAttention(d, params.heads, rng) for _ in range(n_sources)]
        self.cross_norms = [LayerNorm(d) for _ in range(n_sources)]
        self.ff = MLP(d, params.ff_mult * d, d, rng)
        self.ff_norm = LayerNorm(d)
        self.drop = Dropout(params.dropout, rng)

    def __call__(self, x: Tensor, self_mask, memories: list[tuple[Tensor, np.ndarray | None]]) -> Tensor:
        x = self.self_norm(x + self.drop(self.self_attn(x, x, x, self_mask)))
        for attn, norm, (mem, mmask) in zip(self.cross, self.cross_norms, memories):
            x = norm(x + self.drop(attn(x, mem, mem, mmask)))
        return self.ff_norm(x + self.drop(self.ff(x)))


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))
