"""Frame tokenizers producing token sets [..., M, D_x] for the slot encoders."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import MLP, Conv2d, Embedding, Linear, Module, Parameter, normal_init
from .tensor import Tensor, as_tensor


def image_patches(x: Tensor, patch: int) -> Tensor:
    """[..., H, W, C] -> [..., (H/p)*(W/p), p*p*C], patches in row-major order."""
    *lead, height, width, channels = x.shape
    if height % patch or width % patch:
        raise ShapeError("image_patches", x.shape, (patch, patch), detail="image side not divisible by patch")
    lead = tuple(lead)
    rows, cols = height // patch, width // patch
    n = len(lead)
    grid = x.reshape(lead + (rows, patch, cols, patch, channels))
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    return ops.transpose(grid, perm).reshape(lead + (rows * cols, patch * patch * channels))


class PatchTokenizer(Module):
    """Linear patch embedding plus a learned spatial embedding, then an MLP."""

    def __init__(self, image_size: int, patch: int, token_dim: int, rng: np.random.Generator, channels: int = 3) -> None:
        if image_size % patch:
            raise ConfigError(f"image size {image_size} is not divisible by patch {patch}")
        self.patch = patch
        self.num_tokens = (image_size // patch) ** 2
        self.proj = Linear(patch * patch * channels, token_dim, rng)
        self.pos = Parameter(normal_init(rng, (self.num_tokens, token_dim)))
        self.mlp = MLP(token_dim, rng)

    def forward(self, frames: Tensor) -> Tensor:
        return self.mlp(self.proj(image_patches(as_tensor(frames), self.patch)) + self.pos)


class LongSequenceTokenizer(Module):
    """Tokens for patchified long sequences: each step is one patch of a context frame.

    The patch is split into sub-patches of side min(4, patch side). Each sub-patch
    token gets a sub-patch position, the patch's cell in its frame and the frame
    index, then goes through an MLP.
    """

    def __init__(self, patch_side: int, grid: int, frames: int, token_dim: int, rng: np.random.Generator, channels: int = 3) -> None:
        self.sub = min(4, patch_side)
        if patch_side % self.sub:
            raise ConfigError(f"patch side {patch_side} is not divisible by sub-patch {self.sub}")
        self.cells = grid * grid
        self.num_tokens = (patch_side // self.sub) ** 2
        self.proj = Linear(self.sub * self.sub * channels, token_dim, rng)
        self.sub_pos = Parameter(normal_init(rng, (self.num_tokens, token_dim)))
        self.cell_embed = Embedding(self.cells, token_dim, rng)
        self.frame_embed = Embedding(frames, token_dim, rng)
        self.mlp = MLP(token_dim, rng)

    def forward(self, patches: Tensor, offset: int = 0) -> Tensor:
        """patches [..., L, s, s, C]; offset is the index of the first step when streaming."""
        patches = as_tensor(patches)
        steps = patches.shape[-4]
        index = np.arange(offset, offset + steps)
        dim = self.sub_pos.shape[-1]
        cell = self.cell_embed(index % self.cells).reshape((steps, 1, dim))
        frame = self.frame_embed(index // self.cells).reshape((steps, 1, dim))
        tokens = self.proj(image_patches(patches, self.sub)) + self.sub_pos + cell + frame
        return self.mlp(tokens)


class CNNTokenizer(Module):
    """5x5 conv stack (first stride 2, ReLU between layers) and a learned embedding per feature-map cell."""

    def __init__(self, image_size: int, token_dim: int, rng: np.random.Generator, channels: int = 3, layers: int = 4) -> None:
        if image_size % 2:
            raise ConfigError(f"image size {image_size} must be even for the stride-2 stem")
        self.convs = [Conv2d(channels, token_dim, 5, rng, stride=2, padding=2)]
        self.convs += [Conv2d(token_dim, token_dim, 5, rng, stride=1, padding=2) for _ in range(layers - 1)]
        self.side = image_size // 2
        self.pos = Parameter(normal_init(rng, (self.side * self.side, token_dim)))

    @property
    def num_tokens(self) -> int:
        return self.side * self.side

    def forward(self, frames: Tensor) -> Tensor:
        frames = as_tensor(frames)
        lead: Tuple[int, ...] = frames.shape[:-3]
        x = frames.reshape((-1,) + frames.shape[-3:])
        for index, conv in enumerate(self.convs):
            x = conv(x)
            if index < len(self.convs) - 1:
                x = ops.relu(x)
        dim = x.shape[-1]
        return x.reshape(lead + (self.num_tokens, dim)) + self.pos
