"""Task models: tokenizer -> slot stack -> decoder, with their training losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import ops
from .baselines import SlotRNN, SlotTransformer
from .config import ExperimentConfig
from .decoders import DecodedFrame, SpatialBroadcastDecoder, TransformerDecoder, color_ce_loss, reconstruction_loss, video_bce_loss
from .errors import ConfigError
from .nn import Module
from .palette import NUM_CLASSES, quantize_colors
from .slots import LayerStackConfig, OCSlotStack, SlotStack
from .synth import patchify
from .tensor import Tensor
from .tokenizers import CNNTokenizer, LongSequenceTokenizer, PatchTokenizer

Stack = Union[SlotStack, OCSlotStack, SlotTransformer, SlotRNN]


def build_stack(cfg: LayerStackConfig, rng: np.random.Generator) -> Stack:
    cfg.validate()
    if cfg.variant in ("slotssm", "single_state", "single_state_split"):
        return SlotStack(cfg, rng)
    if cfg.variant == "oc_slotssm":
        return OCSlotStack(cfg, rng)
    if cfg.variant == "slot_transformer":
        return SlotTransformer(cfg, rng)
    if cfg.variant == "slot_rnn":
        return SlotRNN(cfg, rng)
    raise ConfigError(f"no stack for variant {cfg.variant!r}")  # pragma: no cover - validate() guards


def is_recurrent(stack: Stack) -> bool:
    return hasattr(stack, "init_state")


@dataclass
class Batch:
    """frames u8 [B, T, H, W, 3]; masks u8 [B, T, H, W]; finals [B, n] target colors for blinking."""

    frames: np.ndarray
    masks: np.ndarray
    finals: Optional[np.ndarray] = None


def to_unit(frames: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(frames, dtype=np.float64) / 255.0, dtype=dtype)


def gray(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames, dtype=np.float64).mean(axis=-1) / 255.0


class VideoPredictionModel(Module):
    """Next-frame prediction with one Bernoulli logit per pixel of the gray frame."""

    task = "video"

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator) -> None:

        self.tokenizer = PatchTokenizer(cfg.image_size, cfg.patch, cfg.hidden, rng)
        self.stack = build_stack(cfg.stack_config(), rng)
        self.decoder = TransformerDecoder(cfg.hidden, cfg.image_size, cfg.decoder_patch, 1, rng, heads=cfg.heads, layers=cfg.decoder_layers)
        self.last_attention: Optional[np.ndarray] = None

    @property
    def dtype(self):
        return self.decoder.pos.dtype

    def forward(self, frames: Tensor, state=None) -> Tuple[Tensor, object]:
        """frames [B, T, H, W, 3] in [0, 1] -> logits [B, T, H, W] for the frame after each input."""
        slots, state = self.stack(self.tokenizer(frames), state)
        logits, self.last_attention = self.decoder(slots)
        return logits.reshape(logits.shape[:-1]), state

    def loss(self, batch: Batch) -> Tensor:
        inputs = to_unit(batch.frames[:, :-1], self.dtype)
        target = Tensor(gray(batch.frames[:, 1:]), dtype=self.dtype)
        logits, _ = self.forward(inputs)
        return video_bce_loss(logits, target)


class BlinkingModel(Module):
    """Patchified context as a long sequence; the last step's slots decode the 7-class target frame."""

    task = "blinking"

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator) -> None:

        self.grid = cfg.grid
        self.tokenizer = LongSequenceTokenizer(cfg.image_size // cfg.grid, cfg.grid, cfg.blink_steps - 1, cfg.hidden, rng)
        self.stack = build_stack(cfg.stack_config(), rng)
        self.decoder = TransformerDecoder(cfg.hidden, cfg.image_size, cfg.decoder_patch, NUM_CLASSES, rng, heads=cfg.heads, layers=cfg.decoder_layers)
        self.last_attention: Optional[np.ndarray] = None

    @property
    def dtype(self):
        return self.decoder.pos.dtype

    def sequence(self, context: np.ndarray) -> Tensor:
        """context u8 [B, T-1, H, W, 3] -> patches in [0, 1] of shape [B, L, s, s, 3]."""
        patches = np.stack([patchify(ctx, self.grid)[0] for ctx in context])
        return to_unit(patches, self.dtype)

    def forward(self, patches: Tensor, state=None) -> Tuple[Tensor, object]:
        slots, state = self.stack(self.tokenizer(patches), state)
        logits, self.last_attention = self.decoder(slots[..., -1, :, :])
        return logits, state

    def loss(self, batch: Batch) -> Tensor:
        logits, _ = self.forward(self.sequence(batch.frames[:, :-1]))
        return color_ce_loss(logits, quantize_colors(batch.frames[:, -1]))


class OCModel(Module):
    """CNN tokens, object-centric slot stack and spatial broadcast decoding, trained to reconstruct frames."""

    task = "oc"

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator) -> None:

        self.tokenizer = CNNTokenizer(cfg.image_size, cfg.hidden, rng)
        self.stack = build_stack(cfg.stack_config(), rng)
        self.decoder = SpatialBroadcastDecoder(cfg.hidden, cfg.image_size, rng, hidden=cfg.sbd_hidden)
        self.last_decoded: Optional[DecodedFrame] = None

    @property
    def dtype(self):
        return self.decoder.pos.dtype

    def forward(self, frames: Tensor, state=None) -> Tuple[DecodedFrame, object]:
        slots, state = self.stack(self.tokenizer(frames), state)
        self.last_decoded = self.decoder(slots)
        return self.last_decoded, state

    def loss(self, batch: Batch) -> Tensor:
        frames = to_unit(batch.frames, self.dtype)
        decoded, _ = self.forward(frames)
        return reconstruction_loss(decoded.composite, frames)


Model = Union[VideoPredictionModel, BlinkingModel, OCModel]
MODELS = {"video": VideoPredictionModel, "blinking": BlinkingModel, "oc": OCModel}


def build_model(cfg: ExperimentConfig, rng: np.random.Generator) -> Model:
    cfg.validate()
    return MODELS[cfg.task](cfg, rng)


def sigmoid_frames(logits: Tensor) -> np.ndarray:
    """Bernoulli logits [..., H, W] -> RGB frames in [0, 1] with the gray value on every channel."""
    probs = ops.sigmoid(logits).data
    return np.repeat(probs[..., None], 3, axis=-1)
