"""Adam with a linear warm-up learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class WarmupSchedule:
    """Linear warm-up to ``peak_lr`` over ``warmup_steps``, then decay.

    ``decay="inverse_sqrt"`` scales by sqrt(warmup / step) after the peak;
    ``decay="constant"`` holds the peak.
    """

    peak_lr: float = 1e-3
    warmup_steps: int = 100
    decay: str = "inverse_sqrt"

    def __post_init__(self):
        if self.decay not in ("inverse_sqrt", "constant"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")

    def __call__(self, step: int) -> float:
        s = step + 1
        if s <= self.warmup_steps:
            return self.peak_lr * s / self.warmup_steps
        if self.decay == "constant":
            return self.peak_lr
        return self.peak_lr * math.sqrt(self.warmup_steps / s)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> dict[str, np.ndarray]:
    """One Adam update; returns new parameter arrays and advances ``state``."""
    t = state.step + 1
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step = t
    return out


class Adam:
    """Stateful wrapper over :func:`adam_step` for named parameter tensors."""

    def __init__(self, named_params: dict[str, Tensor], schedule: WarmupSchedule,
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params = named_params
        self.schedule = schedule
        self.betas = (beta1, beta2)
        self.eps = eps
        self.state = AdamState()

    @property
    def lr(self) -> float:
        return self.schedule(self.state.step)

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        current = {k: p.data for k, p in self.params.items()}
        new = adam_step(current, grads, self.state, self.schedule(self.state.step), *self.betas, self.eps)
        for k, p in self.params.items():
            p.data = new[k]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
