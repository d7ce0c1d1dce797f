"""Slot baselines: a block-causal SlotTransformer and a GRU-based SlotRNN."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, SequenceTooLongError
from .nn import MLP, Embedding, LayerNorm, Linear, Module, MultiHeadAttention
from .slots import LayerStackConfig, SlotEncoder, SlotMixer
from .tensor import Tensor


def block_causal_mask(steps: int, num_slots: int) -> np.ndarray:
    """Boolean [T*K, T*K] mask, True where (t, k) must not attend to (t', k') because t' > t."""
    times = np.repeat(np.arange(steps), num_slots)
    return times[None, :] > times[:, None]


class CausalTransformerBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        self.norm_attn = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm_mlp = LayerNorm(dim)
        self.mlp = MLP(dim, rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
        attended, _ = self.attn(self.norm_attn(x), mask=mask)
        x = x + attended
        return x + self.mlp(self.norm_mlp(x))


def _layer_encoder(cfg: LayerStackConfig, index: int, rng: np.random.Generator) -> Optional[SlotEncoder]:
    if not cfg.encoder_at(index):
        return None
    token_dim = cfg.token_dim if index == 0 else cfg.slot_dim
    return SlotEncoder(token_dim, cfg.slot_dim, cfg.slots[index], rng, heads=cfg.heads, layers=cfg.encoder_layers, width=cfg.token_dim)


class SlotTransformerLayer(Module):
    def __init__(self, cfg: LayerStackConfig, index: int, rng: np.random.Generator) -> None:
        self.encoder = _layer_encoder(cfg, index, rng)
        self.time_embed = Embedding(cfg.max_steps, cfg.slot_dim, rng)
        self.block = CausalTransformerBlock(cfg.slot_dim, cfg.heads, rng)


class SlotTransformer(Module):
    """Slots of every step flattened into one T*K sequence under a block-causal mask.

    Attention cost grows with (T*K)^2, so sequences longer than cfg.max_tokens
    slot tokens are refused with SequenceTooLongError. With one slot per layer
    this is the plain causal Transformer baseline.
    """

    def __init__(self, cfg: LayerStackConfig, rng: np.random.Generator) -> None:
        cfg.validate()
        if cfg.variant != "slot_transformer":
            raise ConfigError(f"SlotTransformer cannot build variant {cfg.variant!r}")
        self.cfg = cfg
        self.layers = [SlotTransformerLayer(cfg, index, rng) for index in range(cfg.layers)]

    @property
    def num_slots(self) -> int:
        return self.cfg.slots[-1]

    def check_length(self, steps: int) -> None:
        widest = max(self.cfg.slots)
        if steps * widest > self.cfg.max_tokens:
            raise SequenceTooLongError(steps * widest, self.cfg.max_tokens)
        if steps > self.cfg.max_steps:
            raise SequenceTooLongError(steps, self.cfg.max_steps)

    def forward(self, tokens: Tensor, state=None) -> Tuple[Tensor, None]:
        steps = tokens.shape[-3]
        self.check_length(steps)
        x = tokens
        for layer in self.layers:
            slots = layer.encoder(x)[0] if layer.encoder is not None else x
            lead = slots.shape[:-3]
            num_slots, dim = slots.shape[-2:]
            times = layer.time_embed(np.arange(steps)).reshape((steps, 1, dim))
            flat = (slots + times).reshape(lead + (steps * num_slots, dim))
            flat = layer.block(flat, block_causal_mask(steps, num_slots))
            x = flat.reshape(lead + (steps, num_slots, dim))
        return x, None


class GRUCell(Module):
    """h' = (1 - z) * h + z * n with r, z = sigmoid(.), n = tanh(W_n x + r * (U_n h))."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> None:
        self.hidden_dim = hidden_dim
        self.input_proj = Linear(input_dim, 3 * hidden_dim, rng)
        self.hidden_proj = Linear(hidden_dim, 3 * hidden_dim, rng)

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        size = self.hidden_dim
        xr, xz, xn = ops.split(self.input_proj(x), [size, size, size], axis=-1)
        hr, hz, hn = ops.split(self.hidden_proj(h), [size, size, size], axis=-1)
        r = ops.sigmoid(xr + hr)
        z = ops.sigmoid(xz + hz)
        n = ops.tanh(xn + r * hn)
        return (1.0 - z) * h + z * n


@dataclass
class RNNState:
    hidden: List[Tensor]
    t: int = 0


class SlotRNNLayer(Module):
    def __init__(self, cfg: LayerStackConfig, index: int, rng: np.random.Generator) -> None:
        self.num_slots = cfg.slots[index]
        self.encoder = _layer_encoder(cfg, index, rng)
        self.gru = GRUCell(cfg.slot_dim, cfg.slot_dim, rng)
        self.mixer = SlotMixer(cfg.slot_dim, cfg.heads, rng, mlp=False)


class SlotRNN(Module):
    """Shared GRU run per slot over time, followed by self-attention across slots at every step.

    The recurrent state is the GRU output before mixing; the mixed slots feed the next layer.
    """

    def __init__(self, cfg: LayerStackConfig, rng: np.random.Generator) -> None:
        cfg.validate()
        if cfg.variant != "slot_rnn":
            raise ConfigError(f"SlotRNN cannot build variant {cfg.variant!r}")
        self.cfg = cfg
        self.layers = [SlotRNNLayer(cfg, index, rng) for index in range(cfg.layers)]
        self.last_gru_outputs: List[Tensor] = []

    @property
    def num_slots(self) -> int:
        return self.cfg.slots[-1]

    def init_state(self, batch_shape: Tuple[int, ...] = ()) -> RNNState:
        dtype = self.layers[0].gru.input_proj.weight.dtype
        return RNNState([Tensor(np.zeros(tuple(batch_shape) + (layer.num_slots, self.cfg.slot_dim)), dtype=dtype) for layer in self.layers])

    def forward(self, tokens: Tensor, state: Optional[RNNState] = None) -> Tuple[Tensor, RNNState]:
        steps = tokens.shape[-3]
        state = state or self.init_state(tokens.shape[:-3])
        x = tokens
        carried: List[Tensor] = []
        self.last_gru_outputs = []
        for layer, h in zip(self.layers, state.hidden):
            slots = layer.encoder(x)[0] if layer.encoder is not None else x
            hidden_seq, mixed_seq = [], []
            for t in range(steps):
                h = layer.gru(slots[..., t, :, :], h)
                hidden_seq.append(h)
                mixed_seq.append(layer.mixer(h))
            self.last_gru_outputs.append(ops.stack(hidden_seq, axis=-3))
            x = ops.stack(mixed_seq, axis=-3)
            carried.append(h.detach())
        return x, RNNState(carried, state.t + steps)
