"""Neural building blocks: dense and permutation-equivariant layers, attention, layer norm."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import (DimensionError, Tensor, attention, concat, ensure_tensor,
                       layer_norm, parameter, sorted_pool)

ACTIVATIONS = ("none", "relu", "gelu", "sigmoid", "tanh")
POOLS = ("max", "mean", "sum", "abs_mean")


class ConfigurationError(ValueError):
    """A layer or model was configured inconsistently."""


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "none":
        return x
    if kind == "relu":
        return x.relu()
    if kind == "gelu":
        return x.gelu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    raise ConfigurationError(f"unknown activation {kind!r}")


class Module:
    """Minimal container; parameters are discovered by walking attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            yield from _walk(value, path)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def weight_matrices(self) -> list[Tensor]:
        """Parameters subject to the L1 weight penalty (dense/projection weights)."""
        return [p for name, p in self.named_parameters()
                if name.rsplit("/", 1)[-1].startswith("w")]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, path: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + "/")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}{i}")


def kaiming_uniform(rng: np.random.Generator, d_in: int, d_out: int, activation: str) -> np.ndarray:
    gain = np.sqrt(2.0) if activation in ("relu", "gelu") else 1.0
    bound = gain * np.sqrt(3.0 / d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out))


class Dense(Module):
    """``y = activation(x W + b)`` applied over the last axis."""

    def __init__(self, d_in: int, d_out: int, activation: str = "none",
                 rng: np.random.Generator | None = None, bias: bool = True):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in, self.d_out, self.activation = d_in, d_out, activation
        self.weights = parameter(kaiming_uniform(rng, d_in, d_out, activation))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def forward(self, x) -> Tensor:
        x = ensure_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Dense expects {self.d_in} input features, got {x.shape[-1]}")
        y = x @ self.weights
        if self.bias is not None:
            y = y + self.bias
        return activate(y, self.activation)


def forward_dense(layer: Dense, x) -> Tensor:
    return layer(x)


class MLP(Module):
    """Stack of dense layers; ``widths`` are the hidden sizes."""

    def __init__(self, d_in: int, widths: list[int], activation: str,
                 d_out: int | None = None, out_activation: str = "none",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        prev = d_in
        for w in widths:
            self.layers.append(Dense(prev, w, activation, rng))
            prev = w
        if d_out is not None:
            self.layers.append(Dense(prev, d_out, out_activation, rng))
            prev = d_out
        self.d_out = prev

    def forward(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return ensure_tensor(x)


class EquivariantLayer(Module):
    """Permutation-equivariant set layer ``act(lam * xW + gam * pool(xW) + b)``.

    Rows of the second-to-last axis are set elements.
    """

    def __init__(self, d_in: int, d_out: int, pool: str = "mean", activation: str = "relu",
                 rng: np.random.Generator | None = None):
        if pool not in POOLS:
            raise ConfigurationError(f"unknown pool {pool!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.pool, self.activation = pool, activation
        self.d_in, self.d_out = d_in, d_out
        self.weights = parameter(kaiming_uniform(rng, d_in, d_out, activation))
        self.bias = parameter(np.zeros(d_out))
        self.lam = parameter(np.ones(1))
        self.gam = parameter(np.full(1, -0.5))

    def forward(self, x) -> Tensor:
        x = ensure_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"EquivariantLayer expects {self.d_in} features, got {x.shape[-1]}")
        h = x @ self.weights
        pooled = sorted_pool(h, self.pool, axis=-2)
        pooled = pooled.reshape(pooled.shape[:-1] + (1, pooled.shape[-1]))
        return activate(h * self.lam + pooled * self.gam + self.bias, self.activation)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-10):
        self.eps = eps
        self.gain = parameter(np.ones(d))
        self.shift = parameter(np.zeros(d))

    def forward(self, x) -> Tensor:
        return layer_norm(ensure_tensor(x), self.gain, self.shift, self.eps)


class MultiHeadAttention(Module):
    """Multi-head attention with an explicit per-head width.

    With ``head_dim=None`` the model width is split evenly (``d // heads``) and
    must divide; an explicit ``head_dim`` lifts that restriction.
    """

    def __init__(self, d: int, heads: int, head_dim: int | None = None, bias: bool = True,
                 scaled: bool = False, rng: np.random.Generator | None = None,
                 init_std: float = 0.02):
        if heads < 1:
            raise ConfigurationError("heads must be >= 1")
        if head_dim is None:
            if d % heads:
                raise ConfigurationError(
                    f"model width {d} is not divisible by {heads} heads; pass head_dim explicitly")
            head_dim = d // heads
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.heads, self.head_dim, self.scaled = d, heads, head_dim, scaled
        inner = heads * head_dim
        self.w_q = parameter(rng.normal(0.0, init_std, (d, inner)))
        self.w_k = parameter(rng.normal(0.0, init_std, (d, inner)))
        self.w_v = parameter(rng.normal(0.0, init_std, (d, inner)))
        self.w_o = parameter(rng.normal(0.0, init_std, (inner, d)))
        if bias:
            self.b_q = parameter(np.zeros(inner))
            self.b_k = parameter(np.zeros(inner))
            self.b_v = parameter(np.zeros(inner))
            self.b_o = parameter(np.zeros(d))
        else:
            self.b_q = self.b_k = self.b_v = self.b_o = None

    def _project(self, x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
        y = x @ w
        if b is not None:
            y = y + b
        lead = y.shape[:-1]
        y = y.reshape(lead + (self.heads, self.head_dim))
        return y.swapaxes(-2, -3)  # (..., heads, rows, head_dim)

    def forward(self, q, k, v) -> Tensor:
        q, k, v = ensure_tensor(q), ensure_tensor(k), ensure_tensor(v)
        for t in (q, k, v):
            if t.shape[-1] != self.d:
                raise DimensionError(f"attention expects width {self.d}, got {t.shape[-1]}")
        qh = self._project(q, self.w_q, self.b_q)
        kh = self._project(k, self.w_k, self.b_k)
        vh = self._project(v, self.w_v, self.b_v)
        scale = 1.0 / np.sqrt(self.head_dim) if self.scaled else 1.0
        o = attention(qh, kh, vh, scale=scale)
        o = o.swapaxes(-2, -3)
        o = o.reshape(o.shape[:-2] + (self.heads * self.head_dim,))
        out = o @ self.w_o
        if self.b_o is not None:
            out = out + self.b_o
        return out


def multi_head(mha: MultiHeadAttention, q, k, v) -> Tensor:
    return mha(q, k, v)


class RowFF(Module):
    """Row-wise feed-forward block used inside attention blocks."""

    def __init__(self, d: int, layers: int = 1, activation: str = "none",
                 rng: np.random.Generator | None = None):
        self.mlp = MLP(d, [d] * layers, activation, rng=rng)

    def forward(self, x) -> Tensor:
        return self.mlp(x)


__all__ = [
    "ACTIVATIONS", "POOLS", "ConfigurationError", "Dense", "EquivariantLayer", "LayerNorm",
    "MLP", "Module", "MultiHeadAttention", "RowFF", "activate", "concat", "forward_dense",
    "multi_head",
]
