"""Experiment configuration: defaults, then a key=value file, then CLI overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from .errors import ConfigError
from .slots import PLACEMENTS, VARIANTS, LayerStackConfig
from .synth import BLINK_VARIANTS
from .util import load_key_values

TASKS = ("video", "blinking", "oc")
TASK_VARIANTS = {
    "video": ("slotssm", "single_state", "single_state_split", "slot_transformer", "slot_rnn"),
    "blinking": ("slotssm", "single_state", "single_state_split", "slot_transformer", "slot_rnn"),
    "oc": ("oc_slotssm",),
}
ELEMENT_TYPES = ("float32", "float64")


@dataclass
class ExperimentConfig:
    task: str = "video"
    variant: str = "slotssm"
    layers: int = 2
    num_slots: int = 6
    layer_slots: str = ""
    hidden: int = 64
    heads: int = 4
    encoder_layers: int = 3
    placement: str = "first_layer_only"
    state_size: int = 16
    expand: float = 1.25
    conv_width: int = 4
    scan: str = "parallel"
    chunk: int = 256
    max_tokens: int = 8192
    image_size: int = 32
    num_balls: int = 3
    episode_steps: int = 20
    blink_steps: int = 6
    grid: int = 4
    blink_variant: str = "earliest"
    patch: int = 4
    decoder_patch: int = 4
    decoder_layers: int = 3
    sbd_hidden: int = 64
    dataset: str = ""
    batch_size: int = 16
    steps: int = 5000
    lr: float = 8e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    eval_every: int = 250
    eval_episodes: int = 8
    context: int = 10
    horizon: int = 20
    dtype: str = "float32"
    prefetch: int = 4
    out_dir: str = "runs/default"

    # ------------------------------------------------------------------ io

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def apply(self, values: Mapping[str, object]) -> "ExperimentConfig":
        """Override fields from strings or typed values; unknown keys are an error."""
        known = set(self.field_names())
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(self, key)
            try:
                if isinstance(current, bool):
                    value = str(raw).lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    value = int(raw)
                elif isinstance(current, float):
                    value = float(raw)
                else:
                    value = str(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
            setattr(self, key, value)
        return self

    @classmethod
    def load(cls, path: Optional[Path] = None, overrides: Optional[Mapping[str, object]] = None) -> "ExperimentConfig":
        cfg = cls()
        if path is not None:
            try:
                cfg.apply(load_key_values(Path(path)))
            except (FileNotFoundError, ValueError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
        if overrides:
            cfg.apply(overrides)
        return cfg.validate()

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values: Dict[str, str] = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls().apply(values).validate()

    def to_text(self) -> str:
        data = asdict(self)
        return "".join(f"{key}={data[key]}\n" for key in sorted(data))

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    # ------------------------------------------------------------ derived

    def slot_counts(self) -> List[int]:
        if self.variant == "single_state":
            return [1] * self.layers
        if self.layer_slots:
            return [int(v) for v in self.layer_slots.split(",") if v.strip()]
        return [self.num_slots] * self.layers

    def stack_config(self) -> LayerStackConfig:
        max_steps = self.episode_steps
        if self.task == "blinking":
            max_steps = (self.blink_steps - 1) * self.grid * self.grid
        return LayerStackConfig(
            layers=self.layers,
            slots=self.slot_counts(),
            slot_dim=self.hidden,
            token_dim=self.hidden,
            heads=self.heads,
            variant=self.variant,
            placement=self.placement,
            encoder_layers=self.encoder_layers,
            state_size=self.state_size,
            expand=self.expand,
            conv_width=self.conv_width,
            scan=self.scan,
            chunk=self.chunk,
            max_steps=max(max_steps, self.context + self.horizon),
            max_tokens=self.max_tokens,
        )

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant not in TASK_VARIANTS[self.task]:
            raise ConfigError(f"variant {self.variant!r} is not available for task {self.task!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.blink_variant not in BLINK_VARIANTS:
            raise ConfigError(f"unknown blinking variant {self.blink_variant!r}")
        if self.dtype not in ELEMENT_TYPES:
            raise ConfigError(f"dtype must be one of {ELEMENT_TYPES}")
        positive = ("layers", "num_slots", "hidden", "heads", "batch_size", "steps", "eval_every", "eval_episodes", "image_size", "num_balls", "prefetch")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0 or self.weight_decay < 0 or self.grad_clip <= 0:
            raise ConfigError("lr and grad_clip must be positive, weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.image_size % self.patch or self.image_size % self.decoder_patch:
            raise ConfigError(f"image size {self.image_size} must be divisible by patch {self.patch} and decoder_patch {self.decoder_patch}")
        if self.task == "video" and self.episode_steps < 2:
            raise ConfigError("video episodes need at least two frames")
        if self.context < 1 or self.horizon < 1:
            raise ConfigError("rollout context and horizon must be at least one frame")
        if self.task == "blinking" and self.image_size % self.grid:
            raise ConfigError(f"image size {self.image_size} is not divisible by grid {self.grid}")
        self.stack_config().validate()
        return self
