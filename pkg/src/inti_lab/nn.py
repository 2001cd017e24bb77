"""Minimal parameter containers on top of :mod:`inti_lab.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ConfigError
from .tensor import Tensor, linear


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


class Module:
    """Parameters are ``Tensor`` attributes with ``requires_grad``; children are
    ``Module`` attributes or lists of modules. Iteration follows attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_state_dict(self, state: dict[str, Tensor]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            src = state[name].data if isinstance(state[name], Tensor) else np.asarray(state[name])
            if src.shape != p.shape:
                raise ConfigError(f"{name}: checkpoint shape {src.shape} != model shape {p.shape}")
            p.data = np.array(src, dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True,
                 zero: bool = False):
        std = 1.0 / np.sqrt(d_in)
        self.weight = param(np.zeros((d_in, d_out)) if zero else trunc_normal(rng, (d_in, d_out), std))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class Projector(Module):
    """LayerNorm, then a linear map ``d_in -> d_out``, then GELU."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.norm = LayerNorm(d_in)
        self.proj = Linear(rng, d_in, d_out)

    def __call__(self, x) -> Tensor:
        return F.gelu(self.proj(self.norm(x)))
