"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr_scale: dict[str, float] | None = None) -> dict[str, np.ndarray]:
    """Return updated copies of ``params``; ``state`` advances by one step.

    ``lr_scale`` optionally multiplies the learning rate per parameter name.
    Parameters without a gradient entry are returned unchanged and keep their
    moments.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise FloatingPointError(
                f"non-finite gradient for parameter {name!r} ({bad} of {g.size} entries) "
                f"at Adam step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        lr = state.lr * (lr_scale.get(name, 1.0) if lr_scale else 1.0)
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


class Adam:
    """Stateful wrapper binding :func:`adam_step` to a set of named tensors."""

    def __init__(self, named: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, lr_scale: dict[str, float] | None = None):
        self.named = dict(named)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.lr_scale = lr_scale or {}

    def zero_grad(self) -> None:
        for p in self.named.values():
            p.grad = None

    def step(self) -> None:
        params = {n: p.data for n, p in self.named.items()}
        grads = {n: p.grad for n, p in self.named.items() if p.grad is not None}
        new = adam_step(params, grads, self.state, self.lr_scale)
        for n, p in self.named.items():
            p.data = new[n]
