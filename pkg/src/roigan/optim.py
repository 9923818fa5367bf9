"""Adam with bias correction and per-parameter step counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class Adam:
    """Adaptive-moment optimizer over a fixed list of (name, parameter) pairs.

    Parameters whose ``grad`` is ``None`` are skipped by :meth:`step`, so one
    optimizer can serve networks that are updated at different times.
    """

    named_params: list[tuple[str, Parameter]]
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        unique, seen = [], set()
        for name, p in self.named_params:
            if id(p) not in seen:
                seen.add(id(p))
                unique.append((name, p))
        self.named_params = unique
        for name, p in self.named_params:
            self.state.setdefault(name, AdamState(np.zeros_like(p.data), np.zeros_like(p.data)))

    @property
    def params(self) -> list[Parameter]:
        return [p for _, p in self.named_params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.named_params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        for name, p in self.named_params:
            if p.grad is None:
                continue
            st = self.state[name]
            g = p.grad.astype(p.dtype, copy=False)
            st.step += 1
            st.m *= self.beta1
            st.m += (1 - self.beta1) * g
            st.v *= self.beta2
            st.v += (1 - self.beta2) * g * g
            mhat = st.m / (1 - self.beta1**st.step)
            vhat = st.v / (1 - self.beta2**st.step)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def adam_step(params, grads, state: dict, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Functional form: update each array in ``params`` in place from ``grads``."""
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {i}")
        st = state.setdefault(i, AdamState(np.zeros_like(p), np.zeros_like(p)))
        st.step += 1
        st.m = beta1 * st.m + (1 - beta1) * g
        st.v = beta2 * st.v + (1 - beta2) * g * g
        mhat = st.m / (1 - beta1**st.step)
        vhat = st.v / (1 - beta2**st.step)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
