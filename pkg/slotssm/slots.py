"""Slot-structured sequence layers.

Sequences of slots are laid out [..., T, K, D]: time on the third-to-last axis,
slots on the second-to-last. Token sets are [..., T, M, D_x].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, attention_weights, normal_init
from .ssm import MambaBlock, MambaState
from .tensor import Tensor, as_tensor

VARIANTS = ("slotssm", "oc_slotssm", "single_state", "single_state_split", "slot_transformer", "slot_rnn")
PLACEMENTS = ("first_layer_only", "every_layer")


@dataclass
class LayerStackConfig:
    layers: int = 2
    slots: List[int] = field(default_factory=lambda: [6, 6])
    slot_dim: int = 64
    token_dim: int = 64
    heads: int = 4
    variant: str = "slotssm"
    placement: str = "first_layer_only"
    encoder_layers: int = 3
    state_size: int = 16
    expand: float = 1.25
    conv_width: int = 4
    scan: str = "parallel"
    chunk: int = 256
    max_steps: int = 4096
    max_tokens: int = 8192

    def validate(self) -> "LayerStackConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown encoder placement {self.placement!r}")
        if self.layers < 1 or len(self.slots) != self.layers:
            raise ConfigError(f"need one slot count per layer: layers={self.layers} slots={self.slots}")
        if any(k < 1 for k in self.slots):
            raise ConfigError("slot counts must be positive")
        if self.variant == "single_state" and any(k != 1 for k in self.slots):
            raise ConfigError("single_state uses exactly one slot per layer")
        if self.variant in ("oc_slotssm", "single_state_split") and len(set(self.slots)) != 1:
            raise ConfigError(f"{self.variant} needs the same slot count in every layer")
        for name in ("slot_dim", "token_dim"):
            if getattr(self, name) % self.heads:
                raise ConfigError(f"{name}={getattr(self, name)} is not divisible by heads={self.heads}")
        if self.encoder_layers < 1 or self.state_size < 1 or self.conv_width < 1 or self.expand <= 0:
            raise ConfigError("encoder_layers, state_size, conv_width and expand must be positive")
        if self.scan not in ("sequential", "parallel"):
            raise ConfigError(f"unknown scan method {self.scan!r}")
        return self

    def encoder_at(self, layer: int) -> bool:
        """Slot encoder placement: first layer, wherever K changes, or every layer on request."""
        if layer == 0 or self.placement == "every_layer":
            return True
        return self.slots[layer] != self.slots[layer - 1]


class SlotEncoderLayer(Module):
    def __init__(self, width: int, token_dim: int, heads: int, rng: np.random.Generator) -> None:
        self.norm_self = LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, heads, rng)
        self.norm_query = LayerNorm(width)
        self.norm_tokens = LayerNorm(token_dim)
        self.cross_attn = MultiHeadAttention(width, heads, rng, kv_dim=token_dim)
        self.norm_mlp = LayerNorm(width)
        self.mlp = MLP(width, rng)

    def forward(self, queries: Tensor, tokens: Tensor) -> Tuple[Tensor, np.ndarray]:
        attended, _ = self.self_attn(self.norm_self(queries))
        queries = queries + attended
        attended, weights = self.cross_attn(self.norm_query(queries), self.norm_tokens(tokens))
        queries = queries + attended
        return queries + self.mlp(self.norm_mlp(queries)), weights


class SlotEncoder(Module):
    """CLS queries refined by self-attention, cross-attention to the tokens and an MLP, then projected to slots."""

    def __init__(self, token_dim: int, slot_dim: int, num_slots: int, rng: np.random.Generator, heads: int = 4, layers: int = 3, width: Optional[int] = None) -> None:
        width = width or token_dim
        self.num_slots = num_slots
        self.cls = Parameter(normal_init(rng, (num_slots, width)))
        self.blocks = [SlotEncoderLayer(width, token_dim, heads, rng) for _ in range(layers)]
        self.proj = Linear(width, slot_dim, rng)

    def forward(self, tokens: Tensor) -> Tuple[Tensor, np.ndarray]:
        if tokens.ndim < 2 or tokens.shape[-2] == 0:
            raise ShapeError("slot_encoder", tokens.shape, detail="need at least one token")
        queries = ops.broadcast_to(self.cls, tokens.shape[:-2] + self.cls.shape)
        weights = None
        for block in self.blocks:
            queries, weights = block(queries, tokens)
        return self.proj(queries), weights


def inverted_attention(queries, keys, values) -> Tuple[Tensor, Tensor]:
    """Single-head inverted attention without projections: returns (A·V, A)."""
    queries, keys, values = as_tensor(queries), as_tensor(keys), as_tensor(values)
    if queries.shape[-1] != keys.shape[-1] or keys.shape[-2] != values.shape[-2]:
        raise ShapeError("inverted_attention", queries.shape, keys.shape, values.shape)
    logits = ops.matmul(queries, ops.swapaxes(keys, -1, -2)) * (1.0 / math.sqrt(queries.shape[-1]))
    weights = attention_weights(logits, inverted=True)
    return ops.matmul(weights, values), weights


class InvertedAttention(Module):
    """Pre-norm multi-head inverted cross-attention from slots to tokens."""

    def __init__(self, slot_dim: int, token_dim: int, heads: int, rng: np.random.Generator) -> None:
        self.norm_query = LayerNorm(slot_dim)
        self.norm_tokens = LayerNorm(token_dim)
        self.attn = MultiHeadAttention(slot_dim, heads, rng, kv_dim=token_dim)

    def forward(self, queries: Tensor, tokens: Tensor) -> Tuple[Tensor, np.ndarray]:
        return self.attn(self.norm_query(queries), self.norm_tokens(tokens), inverted=True)


class SlotSSM(Module):
    """One Mamba block shared by every slot; slot k only ever sees its own series."""

    def __init__(self, slot_dim: int, rng: np.random.Generator, state_size: int = 16, expand: float = 1.25, conv_width: int = 4, scan: str = "parallel", chunk: int = 256) -> None:
        self.block = MambaBlock(slot_dim, rng, state_size=state_size, expand=expand, conv_width=conv_width, scan=scan, chunk=chunk)

    def init_state(self, batch_shape: Tuple[int, ...], num_slots: int) -> List[MambaState]:
        return [self.block.init_state(batch_shape) for _ in range(num_slots)]

    def forward(self, slots: Tensor, states: Optional[Sequence[MambaState]] = None) -> Tuple[Tensor, List[MambaState]]:
        if slots.ndim < 3:
            raise ShapeError("slot_ssm", slots.shape, detail="expected [..., T, K, D]")
        num_slots = slots.shape[-2]
        if states is not None and len(states) != num_slots:
            raise ShapeError("slot_ssm", (len(states),), (num_slots,), detail="one state per slot")
        outputs, carried = [], []
        for k in range(num_slots):
            y, state = self.block(slots[..., k, :], None if states is None else states[k])
            outputs.append(y)
            carried.append(state)
        return ops.stack(outputs, axis=-2), carried


class SplitStateSSM(Module):
    """Single monolithic state: the K slots are concatenated for the SSM and split back afterwards."""

    def __init__(self, slot_dim: int, num_slots: int, rng: np.random.Generator, state_size: int = 16, expand: float = 1.25, conv_width: int = 4, scan: str = "parallel", chunk: int = 256) -> None:
        self.slot_dim = slot_dim
        self.num_slots = num_slots
        self.block = MambaBlock(slot_dim * num_slots, rng, state_size=state_size, expand=expand, conv_width=conv_width, scan=scan, chunk=chunk)

    def init_state(self, batch_shape: Tuple[int, ...], num_slots: int) -> List[MambaState]:
        return [self.block.init_state(batch_shape)]

    def forward(self, slots: Tensor, states: Optional[Sequence[MambaState]] = None) -> Tuple[Tensor, List[MambaState]]:
        lead = slots.shape[:-2]
        merged = slots.reshape(lead + (self.num_slots * self.slot_dim,))
        y, state = self.block(merged, None if states is None else states[0])
        return y.reshape(lead + (self.num_slots, self.slot_dim)), [state]


class SlotMixer(Module):
    """Residual pre-norm self-attention across slots, then a residual per-slot MLP; no temporal mixing."""

    def __init__(self, slot_dim: int, heads: int, rng: np.random.Generator, mlp: bool = True) -> None:
        self.norm_attn = LayerNorm(slot_dim)
        self.attn = MultiHeadAttention(slot_dim, heads, rng)
        self.norm_mlp = LayerNorm(slot_dim) if mlp else None
        self.mlp = MLP(slot_dim, rng) if mlp else None

    def forward(self, y: Tensor) -> Tensor:
        attended, _ = self.attn(self.norm_attn(y))
        y = y + attended
        if self.mlp is not None:
            y = y + self.mlp(self.norm_mlp(y))
        return y


@dataclass
class StackState:
    """Per-layer list of per-slot Mamba carries."""

    layers: List[List[MambaState]]

    @property
    def t(self) -> int:
        return self.layers[0][0].ssm.t


class SlotStackLayer(Module):
    def __init__(self, cfg: LayerStackConfig, index: int, rng: np.random.Generator) -> None:
        num_slots = cfg.slots[index]
        self.num_slots = num_slots
        self.encoder = None
        if cfg.encoder_at(index):
            token_dim = cfg.token_dim if index == 0 else cfg.slot_dim
            self.encoder = SlotEncoder(token_dim, cfg.slot_dim, num_slots, rng, heads=cfg.heads, layers=cfg.encoder_layers, width=cfg.token_dim)
        ssm_kwargs = dict(state_size=cfg.state_size, expand=cfg.expand, conv_width=cfg.conv_width, scan=cfg.scan, chunk=cfg.chunk)
        if cfg.variant == "single_state_split":
            self.ssm = SplitStateSSM(cfg.slot_dim, num_slots, rng, **ssm_kwargs)
        else:
            self.ssm = SlotSSM(cfg.slot_dim, rng, **ssm_kwargs)
        self.mixer = SlotMixer(cfg.slot_dim, cfg.heads, rng)

    def forward(self, x: Tensor, states: Optional[List[MambaState]]) -> Tuple[Tensor, Tensor, List[MambaState]]:
        slots = self.encoder(x)[0] if self.encoder is not None else x
        y, carried = self.ssm(slots, states)
        return self.mixer(y), y, carried


class SlotStack(Module):
    """Encoder -> SlotSSM -> mixer per layer, for the slotssm, single_state and single_state_split variants.

    forward(tokens [..., T, M, D_x], state) returns (slots [..., T, K_L, D_s], StackState).
    Passing the returned state back in continues the sequence exactly where it stopped.
    """

    def __init__(self, cfg: LayerStackConfig, rng: np.random.Generator) -> None:
        cfg.validate()
        if cfg.variant not in ("slotssm", "single_state", "single_state_split"):
            raise ConfigError(f"SlotStack cannot build variant {cfg.variant!r}")
        self.cfg = cfg
        self.layers = [SlotStackLayer(cfg, index, rng) for index in range(cfg.layers)]
        self.last_ssm_outputs: List[Tensor] = []

    @property
    def num_slots(self) -> int:
        return self.cfg.slots[-1]

    def init_state(self, batch_shape: Tuple[int, ...] = ()) -> StackState:
        return StackState([layer.ssm.init_state(tuple(batch_shape), layer.num_slots) for layer in self.layers])

    def forward(self, tokens: Tensor, state: Optional[StackState] = None) -> Tuple[Tensor, StackState]:
        x = tokens
        carried: List[List[MambaState]] = []
        self.last_ssm_outputs = []
        for index, layer in enumerate(self.layers):
            x, y, layer_state = layer(x, None if state is None else state.layers[index])
            self.last_ssm_outputs.append(y)
            carried.append(layer_state)
        return x, StackState(carried)


class OCSlotStackLayer(Module):
    def __init__(self, cfg: LayerStackConfig, rng: np.random.Generator) -> None:
        self.attn = InvertedAttention(cfg.slot_dim, cfg.token_dim, cfg.heads, rng)
        self.ssm = SlotSSM(cfg.slot_dim, rng, state_size=cfg.state_size, expand=cfg.expand, conv_width=cfg.conv_width, scan=cfg.scan, chunk=cfg.chunk)
        self.mixer = SlotMixer(cfg.slot_dim, cfg.heads, rng)


class OCSlotStack(Module):
    """Object-centric stack: each layer refines the previous slots by inverted attention over the layer-0 tokens.

    kv_hook, when set, is called as kv_hook(layer_index, keys_values) before every
    inverted attention; last_attention keeps each layer's head-averaged weights.
    """

    def __init__(self, cfg: LayerStackConfig, rng: np.random.Generator) -> None:
        cfg.validate()
        if cfg.variant != "oc_slotssm":
            raise ConfigError(f"OCSlotStack cannot build variant {cfg.variant!r}")
        self.cfg = cfg
        self.cls = Parameter(normal_init(rng, (cfg.slots[0], cfg.slot_dim)))
        self.layers = [OCSlotStackLayer(cfg, rng) for _ in range(cfg.layers)]
        self.kv_hook: Optional[Callable[[int, Tensor], None]] = None
        self.last_attention: List[np.ndarray] = []
        self.last_ssm_outputs: List[Tensor] = []

    @property
    def num_slots(self) -> int:
        return self.cfg.slots[-1]

    def init_state(self, batch_shape: Tuple[int, ...] = ()) -> StackState:
        return StackState([layer.ssm.init_state(tuple(batch_shape), self.num_slots) for layer in self.layers])

    def forward(self, tokens: Tensor, state: Optional[StackState] = None) -> Tuple[Tensor, StackState]:
        x = ops.broadcast_to(self.cls, tokens.shape[:-2] + self.cls.shape)
        carried: List[List[MambaState]] = []
        self.last_attention = []
        self.last_ssm_outputs = []
        for index, layer in enumerate(self.layers):
            if self.kv_hook is not None:
                self.kv_hook(index, tokens)
            slots, weights = layer.attn(x, tokens)
            y, layer_state = layer.ssm(slots, None if state is None else state.layers[index])
            x = layer.mixer(y)
            self.last_attention.append(weights)
            self.last_ssm_outputs.append(y)
            carried.append(layer_state)
        return x, StackState(carried)
