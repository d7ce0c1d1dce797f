from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import ops
from .baselines import SlotRNN, SlotTransformer
from .decoders import SpatialBroadcastDecoder, TransformerDecoder
from .errors import DomainError, NonDeterministicError
from .nn import Conv2d, ConvTranspose2d, MultiHeadAttention, make_rng
from .slots import LayerStackConfig, OCSlotStack, SlotStack
from .ssm import MambaBlock
from .tensor import Tensor, backward, no_grad, precision

GRADCHECK_EPS = 1e-5
GRADCHECK_TOL = 1e-4


def finite_diff_gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = GRADCHECK_EPS,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|).

    f takes no arguments and reads the current values of params. Coordinates are
    perturbed one at a time; with max_coords set, each parameter is checked on a
    seeded random subset of at most that many coordinates.
    """
    for param in params:
        if param.dtype != np.float64:
            raise DomainError(f"gradcheck needs float64 parameters, got {param.dtype}")

    with no_grad():
        first = f().item()
        second = f().item()
    if first != second:
        raise NonDeterministicError(f"function returned {first!r} then {second!r} for identical inputs")

    for param in params:
        param.grad = None
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = make_rng(seed)
    worst = 0.0
    with no_grad():
        for param, grad in zip(params, analytic):
            param.data = np.ascontiguousarray(param.data)
            flat = param.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for coord in coords:
                original = flat[coord]
                flat[coord] = original + eps
                plus = f().item()
                flat[coord] = original - eps
                minus = f().item()
                flat[coord] = original
                numeric = (plus - minus) / (2.0 * eps)
                err = abs(grad.reshape(-1)[coord] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, float(err))
    return worst


def _weighted_sum(out: Tensor, seed: int) -> Tensor:
    """Scalar that weights every output entry differently, so no gradient cancels by symmetry."""
    return ops.sum(out * Tensor(make_rng(seed).normal(size=out.shape)))


def _toy_stack_config(variant: str) -> LayerStackConfig:
    slots = [1] if variant == "single_state" else [2]
    return LayerStackConfig(layers=1, slots=slots, slot_dim=8, token_dim=8, heads=2, variant=variant, encoder_layers=1, state_size=2, conv_width=2, max_steps=8)


_UNARY = {
    "op.exp": ops.exp,
    "op.expm1": ops.expm1,
    "op.log": ops.log,
    "op.sigmoid": ops.sigmoid,
    "op.tanh": ops.tanh,
    "op.silu": ops.silu,
    "op.softplus": ops.softplus,
    "op.relu": ops.relu,
}


def _op_component(name: str, rng: np.random.Generator, leaf: Callable[..., Tensor], mix: int):
    if name in _UNARY:
        # away from zero: relu has its kink there and log is undefined
        magnitude = rng.uniform(0.1, 2.0, size=(3, 4))
        sign = np.ones_like(magnitude) if name == "op.log" else rng.choice([-1.0, 1.0], size=magnitude.shape)
        x = Tensor(sign * magnitude, requires_grad=True)
        return (lambda: _weighted_sum(_UNARY[name](x), mix)), [x]
    if name == "op.arithmetic":
        x, y = leaf(3, 4), leaf(4)
        p = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)

        def arithmetic() -> Tensor:
            ratio = ops.div(ops.mul(ops.add(x, y), ops.sub(x, ops.neg(y))), ops.add(ops.square(y), 1.0))
            return _weighted_sum(ops.add(ratio, ops.power(p, 1.5)), mix)

        return arithmetic, [x, y, p]
    if name == "op.reductions":
        x = leaf(2, 3, 4)
        return (lambda: _weighted_sum(ops.mean(x, axis=1, keepdims=True) + ops.sum(ops.log_softmax(x, axis=0), axis=(0, 2), keepdims=True), mix)), [x]
    if name == "op.reshape_transpose":
        x, b = leaf(2, 3, 4), leaf(1, 4)
        return (lambda: _weighted_sum(ops.swapaxes(ops.transpose(ops.reshape(x, (6, 4)) + ops.broadcast_to(b, (6, 4))), 0, 1), mix)), [x, b]
    if name == "op.concat_split_stack":
        x, y = leaf(3, 2), leaf(3, 3)

        def joined() -> Tensor:
            left, right = ops.split(ops.concat([x, y], axis=-1), [1, 4], axis=-1)
            return _weighted_sum(ops.stack([ops.square(left), right[:, :1]], axis=0), mix)

        return joined, [x, y]
    if name == "op.getitem":
        x = leaf(4, 3)
        rows = rng.integers(0, 4, size=5)
        return (lambda: _weighted_sum(ops.getitem(x, (rows, slice(1, None))), mix)), [x]
    if name == "op.masked_fill":
        x = leaf(3, 4)
        mask = rng.random(size=(3, 4)) < 0.4
        return (lambda: _weighted_sum(ops.softmax(ops.masked_fill(x, mask, -1e9), axis=-1), mix)), [x]
    if name == "op.matmul_linear":
        a, b, w, bias = leaf(2, 3, 4), leaf(4, 5), leaf(5, 2), leaf(2)
        return (lambda: _weighted_sum(ops.linear(ops.matmul(a, b), w, bias), mix)), [a, b, w, bias]
    if name == "op.embedding":
        w = leaf(5, 3)
        ids = rng.integers(0, 5, size=(2, 4))
        return (lambda: _weighted_sum(ops.embedding(w, ids), mix)), [w]
    if name == "op.mse":
        pred, target = leaf(2, 5), leaf(2, 5)
        return (lambda: ops.mse(pred, target)), [pred, target]
    if name == "op.bce_with_logits":
        logits = leaf(2, 5)
        target = Tensor(rng.uniform(0.0, 1.0, size=(2, 5)), requires_grad=True)
        return (lambda: ops.bce_with_logits(logits, target)), [logits, target]
    if name == "op.conv2d":
        x, w, bias = leaf(1, 5, 5, 2), leaf(3, 3, 2, 3), leaf(3)
        return (lambda: _weighted_sum(ops.conv2d(x, w, bias, stride=2, padding=1), mix)), [x, w, bias]
    if name == "op.conv_transpose2d":
        x, w, bias = leaf(1, 3, 3, 2), leaf(3, 3, 2, 3), leaf(3)
        return (lambda: _weighted_sum(ops.conv_transpose2d(x, w, bias, stride=2, padding=1, output_padding=1), mix)), [x, w, bias]
    if name == "op.linear_recurrence":
        a, b, h0 = Tensor(rng.uniform(0.2, 0.9, size=(5, 2, 2)), requires_grad=True), leaf(5, 2, 2), leaf(2, 2)
        return (lambda: _weighted_sum(ops.linear_recurrence(a, b, h0), mix)), [a, b, h0]
    if name == "op.layer_norm_softmax":
        x, w = leaf(3, 4), leaf(4)
        return (lambda: _weighted_sum(ops.softmax(ops.layer_norm(x, w), axis=-1), mix)), [x, w]
    if name == "op.causal_conv1d":
        x, w, h = leaf(4, 3), leaf(3, 3), leaf(2, 3)
        return (lambda: _weighted_sum(ops.causal_conv1d(x, w, history=h), mix)), [x, w, h]
    if name == "op.cross_entropy":
        x = leaf(2, 3, 7)
        labels = rng.integers(0, 7, size=(2, 3))
        return (lambda: ops.cross_entropy(x, labels)), [x]
    raise KeyError(name)


def _component(name: str, rng: np.random.Generator):
    """(loss closure, parameters) for one named component at toy shapes."""
    mix = int(rng.integers(2**31))

    def leaf(*shape) -> Tensor:
        return Tensor(rng.normal(size=shape), requires_grad=True)

    if name.startswith("op."):
        return _op_component(name, rng, leaf, mix)
    if name == "nn.attention":
        attn = MultiHeadAttention(4, 2, rng)
        x = leaf(3, 4)
        return (lambda: _weighted_sum(attn(x)[0], mix)), attn.parameters() + [x]
    if name == "nn.conv":
        conv, up = Conv2d(2, 3, 3, rng, stride=2, padding=1), ConvTranspose2d(3, 2, 5, rng, stride=2, padding=2, output_padding=1)
        x = leaf(1, 4, 4, 2)
        return (lambda: _weighted_sum(up(conv(x)), mix)), conv.parameters() + up.parameters() + [x]
    if name == "mamba_block":
        block = MambaBlock(4, rng, state_size=2, conv_width=2)
        x = leaf(5, 4)
        return (lambda: _weighted_sum(block(x)[0], mix)), block.parameters() + [x]
    if name.startswith("stack."):
        variant = name.split(".", 1)[1]
        cfg = _toy_stack_config(variant)
        builders = {"oc_slotssm": OCSlotStack, "slot_transformer": SlotTransformer, "slot_rnn": SlotRNN}
        stack = builders.get(variant, SlotStack)(cfg, rng)
        tokens = leaf(3, 3, 8)
        return (lambda: _weighted_sum(stack(tokens)[0], mix)), stack.parameters() + [tokens]
    if name == "decoder.transformer":
        decoder = TransformerDecoder(8, 4, 2, 3, rng, heads=2, layers=1)
        slots = leaf(2, 8)
        return (lambda: _weighted_sum(decoder(slots)[0], mix)), decoder.parameters() + [slots]
    if name == "decoder.spatial_broadcast":
        decoder = SpatialBroadcastDecoder(4, 8, rng, hidden=4, grid=4)
        slots = leaf(2, 4)
        return (lambda: _weighted_sum(decoder(slots).composite, mix)), decoder.parameters() + [slots]
    raise KeyError(name)


OP_COMPONENTS = (
    *_UNARY,
    "op.arithmetic",
    "op.reductions",
    "op.reshape_transpose",
    "op.concat_split_stack",
    "op.getitem",
    "op.masked_fill",
    "op.matmul_linear",
    "op.embedding",
    "op.mse",
    "op.bce_with_logits",
    "op.conv2d",
    "op.conv_transpose2d",
    "op.linear_recurrence",
    "op.layer_norm_softmax",
    "op.causal_conv1d",
    "op.cross_entropy",
)

COMPONENTS = OP_COMPONENTS + (
    "nn.attention",
    "nn.conv",
    "mamba_block",
    "stack.slotssm",
    "stack.single_state",
    "stack.single_state_split",
    "stack.oc_slotssm",
    "stack.slot_transformer",
    "stack.slot_rnn",
    "decoder.transformer",
    "decoder.spatial_broadcast",
)


def gradcheck_suite(names: Sequence[str] = COMPONENTS, seed: int = 0, max_coords: Optional[int] = 8) -> Dict[str, float]:
    """Worst relative error per component, each built at toy shapes in float64."""
    results: Dict[str, float] = {}
    for name in names:
        with precision("float64"):
            f, params = _component(name, make_rng(seed))
            results[name] = finite_diff_gradcheck(f, params, max_coords=max_coords, seed=seed)
    return results
