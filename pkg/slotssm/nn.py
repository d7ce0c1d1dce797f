"""Parameter containers and the building blocks shared by every layer."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import ops
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import Tensor, resolve_dtype

EMBED_STD = 0.02


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical across platforms for the same seed."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def normal_init(rng: np.random.Generator, shape: Tuple[int, ...], std: float = EMBED_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Parameter(Tensor):
    def __init__(self, data, dtype=None) -> None:
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Attribute-order parameter discovery over Parameters, Modules and lists of Modules."""

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{index}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{index}", item

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = OrderedDict(self.named_parameters())
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        if missing or unexpected:
            raise CheckpointError(f"parameter names differ: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} does not match model shape {param.shape}")
            param.data = value.astype(param.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        target = resolve_dtype(dtype)
        for param in self.parameters():
            param.data = param.data.astype(target)
            param.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, features: int) -> None:
        self.weight = Parameter(np.ones(features))
        self.bias = Parameter(np.zeros(features))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, std: float = EMBED_STD) -> None:
        self.weight = Parameter(normal_init(rng, (count, dim), std))

    def forward(self, ids) -> Tensor:
        return ops.embedding(self.weight, ids)


class MLP(Module):
    """Linear -> SiLU -> Linear with a 4x hidden width."""

    def __init__(self, dim: int, rng: np.random.Generator, hidden: Optional[int] = None, out_dim: Optional[int] = None) -> None:
        hidden = hidden or 4 * dim
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim or dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.silu(self.fc1(x)))


INVERTED_EPS = 1e-8
MASK_FILL = -1e9


def attention_weights(logits: Tensor, inverted: bool = False) -> Tensor:
    """Softmax over keys, or for inverted attention softmax over queries then renormalise each query row over keys."""
    if not inverted:
        return ops.softmax(logits, axis=-1)
    weights = ops.softmax(logits, axis=-2)
    return weights / (weights.sum(axis=-1, keepdims=True) + INVERTED_EPS)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the second-to-last axis.

    forward returns (output, weights) where weights is the head-averaged
    attention map [..., Q, M] as a plain array. With inverted=True the softmax
    runs over the query axis and each query row is then renormalised over keys.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, kv_dim: Optional[int] = None) -> None:
        if dim % heads:
            raise ConfigError(f"attention width {dim} is not divisible by {heads} heads")
        kv_dim = kv_dim or dim
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(kv_dim, dim, rng)
        self.v_proj = Linear(kv_dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        x = x.reshape(lead + (x.shape[-2], self.heads, self.head_dim))
        return ops.swapaxes(x, -2, -3)

    def forward(
        self,
        query: Tensor,
        key_value: Optional[Tensor] = None,
        mask: Optional[np.ndarray] = None,
        inverted: bool = False,
    ) -> Tuple[Tensor, np.ndarray]:
        key_value = query if key_value is None else key_value
        if key_value.shape[-2] == 0:
            raise ShapeError("attention", query.shape, key_value.shape, detail="no keys to attend to")
        q = self._split_heads(self.q_proj(query))
        k = self._split_heads(self.k_proj(key_value))
        v = self._split_heads(self.v_proj(key_value))
        logits = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            logits = ops.masked_fill(logits, mask, MASK_FILL)
        weights = attention_weights(logits, inverted)
        mixed = ops.swapaxes(ops.matmul(weights, v), -2, -3)
        mixed = mixed.reshape(mixed.shape[:-2] + (self.dim,))
        return self.out_proj(mixed), weights.data.mean(axis=-3)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator, stride: int = 1, padding: int = 0) -> None:
        self.stride = stride
        self.padding = padding
        fan_in = kernel * kernel * in_channels
        self.weight = Parameter(uniform_init(rng, (kernel, kernel, in_channels, out_channels), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        output_padding: int = 0,
    ) -> None:
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        fan_in = kernel * kernel * in_channels
        self.weight = Parameter(uniform_init(rng, (kernel, kernel, in_channels, out_channels), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)
