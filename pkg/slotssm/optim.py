from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 8e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1
    step: int = 0
    exp_avg: List[np.ndarray] = field(default_factory=list)
    exp_avg_sq: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamWState":
        state = cls(**hyper)
        state.exp_avg = [np.zeros_like(p.data) for p in params]
        state.exp_avg_sq = [np.zeros_like(p.data) for p in params]
        return state


def adamw_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamWState) -> AdamWState:
    """One decoupled-weight-decay Adam update, in place on params and state.

    A missing gradient is treated as zero so every moment decays on every step.
    """
    if len(params) != len(state.exp_avg) or len(grads) != len(params):
        raise ShapeError("adamw_step", (len(params),), (len(grads),), (len(state.exp_avg),), detail="parameter, gradient and moment counts")
    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        if grad.shape != param.shape or state.exp_avg[index].shape != param.shape:
            raise ShapeError("adamw_step", param.shape, grad.shape, state.exp_avg[index].shape)
        if not np.isfinite(grad).all():
            raise NonFiniteError("adamw_step", "gradient")

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for index, (param, grad) in enumerate(zip(params, grads)):
        g = np.zeros_like(param.data) if grad is None else grad.astype(param.dtype, copy=False)
        m = state.exp_avg[index] = state.beta1 * state.exp_avg[index] + (1.0 - state.beta1) * g
        v = state.exp_avg_sq[index] = state.beta2 * state.exp_avg_sq[index] + (1.0 - state.beta2) * g * g
        decayed = param.data * (1.0 - state.lr * state.weight_decay)
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        param.data = (decayed - update).astype(param.dtype, copy=False)
    return state


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most max_norm; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if not np.isfinite(total):
        raise NonFiniteError("clip_grad_norm", "gradient")
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.dtype, copy=False)
    return total


class AdamW:
    """Optimizer bound to a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 8e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.1) -> None:
        self.params = list(params)
        self.state = AdamWState.for_params(self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
