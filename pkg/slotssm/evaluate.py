"""Evaluation protocols: autoregressive rollout, Blinking Balls color scoring, OC segmentation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .errors import ConfigError, ShapeError
from .metrics import color_accuracy, geometry_iou, rollout_mse_curve, segmentation_scores, white_baseline_accuracy
from .models import Batch, BlinkingModel, OCModel, VideoPredictionModel, is_recurrent, sigmoid_frames, to_unit
from .ops import cross_entropy, mse
from .palette import quantize_colors
from .tensor import Tensor, no_grad

# (context frames u8 [B, C, H, W, 3], horizon) -> predicted frames in [0, 1], [B, horizon, H, W, 3]
Predictor = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class RolloutResult:
    curve: np.ndarray
    predictions: np.ndarray
    targets: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.curve.mean())


def model_predictor(model: VideoPredictionModel) -> Predictor:
    """Feed the model's own sigmoid outputs back as inputs, one frame at a time.

    Recurrent stacks carry their state between steps; the SlotTransformer re-reads the
    whole prefix each step.
    """

    def predict(context: np.ndarray, horizon: int) -> np.ndarray:
        outputs = []
        with no_grad():
            inputs = to_unit(context, model.dtype)
            if is_recurrent(model.stack):
                logits, state = model(inputs)
                for _ in range(horizon):
                    frame = sigmoid_frames(logits[:, -1:])
                    outputs.append(frame)
                    logits, state = model(Tensor(frame, dtype=model.dtype), state)
            else:
                history = inputs.data
                for _ in range(horizon):
                    logits, _ = model(Tensor(history, dtype=model.dtype))
                    frame = sigmoid_frames(logits[:, -1:])
                    outputs.append(frame)
                    history = np.concatenate([history, frame.astype(history.dtype)], axis=1)
        return np.concatenate(outputs, axis=1)

    return predict


def rollout_eval(predict: Predictor, frames: np.ndarray, context: int, horizon: int) -> RolloutResult:
    """Per-step MSE of predicted frames against frames[:, context:context + horizon] in [0, 1]."""
    frames = np.asarray(frames)
    if frames.ndim != 5:
        raise ShapeError("rollout_eval", frames.shape, detail="expected [B, T, H, W, 3]")
    if context < 1 or horizon < 1 or context + horizon > frames.shape[1]:
        raise ConfigError(f"context {context} + horizon {horizon} exceeds the {frames.shape[1]}-frame episodes")
    targets = frames[:, context:context + horizon].astype(np.float64) / 255.0
    predictions = np.asarray(predict(frames[:, :context], horizon), dtype=np.float64)
    return RolloutResult(rollout_mse_curve(predictions, targets), predictions, targets)


def evaluate_video(model: VideoPredictionModel, batch: Batch, context: int, horizon: int) -> Dict[str, float]:
    with no_grad():
        loss = model.loss(Batch(batch.frames[:, :context + 1], batch.masks[:, :context + 1])).item()
    result = rollout_eval(model_predictor(model), batch.frames, context, horizon)
    return {"eval_bce": loss, "rollout_mse": result.mean}


def evaluate_blinking(model: BlinkingModel, batch: Batch) -> Dict[str, float]:
    if batch.finals is None:
        raise ConfigError("blinking evaluation needs the final ball colors")
    with no_grad():
        logits, _ = model(model.sequence(batch.frames[:, :-1]))
        ce = cross_entropy(logits, quantize_colors(batch.frames[:, -1])).item()
    classes = np.argmax(logits.data, axis=-1)
    target_masks = batch.masks[:, -1]
    return {
        "eval_ce": ce,
        "color_acc": color_accuracy(classes, target_masks, batch.finals),
        "white_acc": white_baseline_accuracy(target_masks, batch.finals),
        "geometry_iou": geometry_iou(classes, target_masks),
    }


def oc_masks(model: OCModel, batch: Batch) -> np.ndarray:
    """Alpha-argmax slot maps [B, T, H, W]."""
    with no_grad():
        decoded, _ = model(to_unit(batch.frames, model.dtype))
    return decoded.assignment


def evaluate_oc(model: OCModel, batch: Batch) -> Dict[str, float]:
    with no_grad():
        frames = to_unit(batch.frames, model.dtype)
        decoded, _ = model(frames)
        recon = mse(decoded.composite, frames).item()
    scores = segmentation_scores(decoded.assignment, batch.masks)
    return {"eval_mse": recon, **scores}


def evaluate(model, batch: Batch, context: int = 10, horizon: int = 20) -> Dict[str, float]:
    if isinstance(model, VideoPredictionModel):
        return evaluate_video(model, batch, context, horizon)
    if isinstance(model, BlinkingModel):
        return evaluate_blinking(model, batch)
    if isinstance(model, OCModel):
        return evaluate_oc(model, batch)
    raise ConfigError(f"no evaluation protocol for {type(model).__name__}")
