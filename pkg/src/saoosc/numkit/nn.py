"""Small parameterised building blocks on top of :mod:`saoosc.numkit.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Container that discovers parameters and sub-modules from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{key}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=T.DTYPE)
            if value.shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(array: np.ndarray) -> Tensor:
    return Tensor(array, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 scale: float = 1.0):
        bound = scale / np.sqrt(n_in)
        self.weight = param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return T.affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = param(np.ones(dim))
        self.shift = param(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.weight = param(rng.uniform(-bound, bound, size=(c_out, c_in, kernel, kernel)))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        qkv = self.qkv(x).reshape(b, n, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        out = T.attention(q, k, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm block: ``x + MHSA(LN(x))`` then ``x + MLP(LN(x))``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 2):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(T.gelu(self.fc1(self.norm2(x))))
