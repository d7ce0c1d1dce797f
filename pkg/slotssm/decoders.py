"""Decoding heads and their losses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import MLP, ConvTranspose2d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, normal_init
from .tensor import Tensor


class DecoderLayer(Module):
    def __init__(self, dim: int, slot_dim: int, heads: int, rng: np.random.Generator) -> None:
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_query = LayerNorm(dim)
        self.norm_slots = LayerNorm(slot_dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, kv_dim=slot_dim)
        self.norm_mlp = LayerNorm(dim)
        self.mlp = MLP(dim, rng)

    def forward(self, queries: Tensor, slots: Tensor) -> Tuple[Tensor, np.ndarray]:
        attended, _ = self.self_attn(self.norm_self(queries))
        queries = queries + attended
        attended, weights = self.cross_attn(self.norm_query(queries), self.norm_slots(slots))
        queries = queries + attended
        return queries + self.mlp(self.norm_mlp(queries)), weights


class TransformerDecoder(Module):
    """Learned patch-position queries attend to the slots; a linear head emits per-pixel logits.

    forward(slots [..., K, D_s]) returns (logits [..., H, W, C], attention [..., P, K])
    where P is the number of patch positions and attention is the last layer's
    head-averaged cross-attention map.
    """

    def __init__(self, slot_dim: int, image_size: int, patch: int, out_channels: int, rng: np.random.Generator, heads: int = 4, layers: int = 3) -> None:
        if image_size % patch:
            raise ConfigError(f"image size {image_size} is not divisible by decoder patch {patch}")
        self.image_size = image_size
        self.patch = patch
        self.out_channels = out_channels
        self.grid = image_size // patch
        self.pos = Parameter(normal_init(rng, (self.grid * self.grid, slot_dim)))
        self.blocks = [DecoderLayer(slot_dim, slot_dim, heads, rng) for _ in range(layers)]
        self.norm_out = LayerNorm(slot_dim)
        self.head = Linear(slot_dim, patch * patch * out_channels, rng)

    def forward(self, slots: Tensor) -> Tuple[Tensor, np.ndarray]:
        if slots.ndim < 2 or slots.shape[-1] != self.pos.shape[-1]:
            raise ShapeError("transformer_decode", slots.shape, self.pos.shape)
        lead = slots.shape[:-2]
        queries = ops.broadcast_to(self.pos, lead + self.pos.shape)
        weights = None
        for block in self.blocks:
            queries, weights = block(queries, slots)
        patches = self.head(self.norm_out(queries))
        return self.unpatchify(patches), weights

    def unpatchify(self, patches: Tensor) -> Tensor:
        lead = patches.shape[:-2]
        n, p, g, c = len(lead), self.patch, self.grid, self.out_channels
        grid = patches.reshape(lead + (g, g, p, p, c))
        perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
        return ops.transpose(grid, perm).reshape(lead + (self.image_size, self.image_size, c))

    def slot_assignment(self, attention: np.ndarray) -> np.ndarray:
        """Argmax over slots of the cross-attention map, expanded to pixels: [..., H, W]."""
        winners = np.argmax(attention, axis=-1)
        winners = winners.reshape(winners.shape[:-1] + (self.grid, self.grid))
        return np.repeat(np.repeat(winners, self.patch, axis=-2), self.patch, axis=-1)


@dataclass
class DecodedFrame:
    rgb: Tensor
    alpha_logits: Tensor
    weights: Tensor
    composite: Tensor
    assignment: np.ndarray


def broadcast_stages(resolution: int, grid: int = 8) -> int:
    """Number of stride-2 stages taking the broadcast grid to resolution."""
    stages = math.log2(resolution / grid) if resolution >= grid else -1.0
    if stages < 1 or stages != int(stages):
        raise ConfigError(f"resolution {resolution} is not {grid} * 2^s for s >= 1")
    return int(stages)


class SpatialBroadcastDecoder(Module):
    """Per slot: normalise, broadcast onto an 8x8 grid with a learned position embedding,
    upsample with 5x5 stride-2 transposed convs, and alpha-composite the slots."""

    def __init__(self, slot_dim: int, resolution: int, rng: np.random.Generator, hidden: int = 64, grid: int = 8) -> None:
        stages = broadcast_stages(resolution, grid)
        self.grid = grid
        self.resolution = resolution
        self.norm = LayerNorm(slot_dim)
        self.pos = Parameter(normal_init(rng, (grid, grid, slot_dim)))
        widths = [slot_dim] + [hidden] * (stages - 1) + [4]
        self.convs = [
            ConvTranspose2d(widths[i], widths[i + 1], 5, rng, stride=2, padding=2, output_padding=1)
            for i in range(stages)
        ]

    def forward(self, slots: Tensor) -> DecodedFrame:
        if slots.ndim < 2 or slots.shape[-1] != self.pos.shape[-1]:
            raise ShapeError("spatial_broadcast_decode", slots.shape, self.pos.shape)
        lead = slots.shape[:-1]
        dim = slots.shape[-1]
        flat = self.norm(slots).reshape((-1, 1, 1, dim))
        x = ops.broadcast_to(flat, (flat.shape[0], self.grid, self.grid, dim)) + self.pos
        for index, conv in enumerate(self.convs):
            x = conv(x)
            if index < len(self.convs) - 1:
                x = ops.relu(x)
        x = x.reshape(lead + x.shape[1:])
        rgb, alpha = ops.split(x, [3, 1], axis=-1)
        weights = ops.softmax(alpha, axis=-4)
        composite = (weights * rgb).sum(axis=-4)
        assignment = np.argmax(alpha.data, axis=-4)[..., 0]
        return DecodedFrame(rgb, alpha, weights, composite, assignment)


def reconstruction_loss(pred: Tensor, target) -> Tensor:
    return ops.mse(pred, target)


def video_bce_loss(logits: Tensor, target) -> Tensor:
    return ops.bce_with_logits(logits, target)


def color_ce_loss(logits: Tensor, classes) -> Tensor:
    return ops.cross_entropy(logits, classes)


LOSSES: Dict[str, Callable[[Tensor, object], Tensor]] = {
    "mse": reconstruction_loss,
    "bce": video_bce_loss,
    "ce": color_ce_loss,
}


def losses(kind: str, pred: Tensor, target) -> Tensor:
    if kind not in LOSSES:
        raise ConfigError(f"unknown loss {kind!r}; choose from {sorted(LOSSES)}")
    return LOSSES[kind](pred, target)
