from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from slotssm.config import ExperimentConfig  # noqa: E402
from slotssm.nn import make_rng  # noqa: E402
from slotssm.tensor import precision  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234)


@pytest.fixture
def float64():
    with precision("float64"):
        yield


def tiny_config(**overrides) -> ExperimentConfig:
    """Smallest config that still exercises every component of a task."""
    values = dict(
        hidden=8,
        heads=2,
        num_slots=2,
        layers=1,
        encoder_layers=1,
        decoder_layers=1,
        state_size=2,
        conv_width=2,
        image_size=16,
        num_balls=2,
        episode_steps=4,
        context=2,
        horizon=2,
        patch=4,
        decoder_patch=4,
        sbd_hidden=4,
        batch_size=2,
        steps=2,
        eval_every=1,
        eval_episodes=2,
        prefetch=2,
    )
    values.update(overrides)
    return ExperimentConfig().apply(values).validate()


@pytest.fixture
def tiny():
    return tiny_config
