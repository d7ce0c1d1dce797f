"""Differentiable operators over Tensor.

Every op computes its forward result with numpy, checks it is finite and records
a backward closure on the active graph. Binary elementwise ops broadcast with
trailing-dimension alignment; `unbroadcast` in the backward pass sums gradients
back to each input's shape.
"""
from __future__ import annotations

import builtins
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DomainError, LabelRangeError, ShapeError
from .tensor import Tensor, apply_op, as_tensor

Axis = Union[None, int, Tuple[int, ...]]


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_reduced(grad: np.ndarray, axes: Tuple[int, ...], keepdims: bool) -> np.ndarray:
    if keepdims:
        return grad
    for ax in axes:
        grad = np.expand_dims(grad, ax)
    return grad


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    return apply_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)
    return apply_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return apply_op("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("div: division by zero")
    return apply_op("div", ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(x: Tensor) -> Tensor:
    return apply_op("neg", -x.data, (x,), lambda g: (-g,))


def power(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    out = xd ** exponent
    return apply_op("power", out, (x,), lambda g: (g * exponent * xd ** (exponent - 1),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply_op("exp", out, (x,), lambda g: (g * out,))


def expm1(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("expm1", np.expm1(xd), (x,), lambda g: (g * np.exp(xd),))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log: input must be strictly positive")
    return apply_op("log", np.log(xd), (x,), lambda g: (g / xd,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return apply_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return apply_op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = expit(xd)
    return apply_op("silu", xd * sig, (x,), lambda g: (g * sig * (1.0 + xd * (1.0 - sig)),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("softplus", np.logaddexp(0.0, xd).astype(xd.dtype), (x,), lambda g: (g * expit(xd),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return apply_op("relu", np.where(mask, xd, 0.0).astype(xd.dtype), (x,), lambda g: (g * mask,))


# ----------------------------------------------------------------------------
# reductions and normalisation


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _axes(axis, x.ndim)
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims), shape),)

    return apply_op("sum", out, (x,), backward)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    shape = x.shape
    count = int(np.prod([shape[ax] for ax in axes])) if axes else 1
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims))

    def backward(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims) / count, shape),)

    return apply_op("mean", out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply_op("softmax", out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return apply_op("log_softmax", out, (x,), backward)


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, weight: Optional[Tensor] = None, bias: Optional[Tensor] = None, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    xd = x.data
    features = xd.shape[-1]
    for name, param in (("weight", weight), ("bias", bias)):
        if param is not None and param.shape != (features,):
            raise ShapeError("layer_norm", xd.shape, param.shape, detail=f"{name} must match the last axis")
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * rstd
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    inputs: List[Tensor] = [x]
    if weight is not None:
        inputs.append(weight)
    if bias is not None:
        inputs.append(bias)

    def backward(g):
        dxhat = g * weight.data if weight is not None else g
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if weight is not None:
            grads.append((g * xhat).reshape(-1, features).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, features).sum(axis=0))
        return grads

    return apply_op("layer_norm", out.astype(xd.dtype, copy=False), tuple(inputs), backward)


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", original, tuple(shape)) from None
    return apply_op("reshape", out, (x,), lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(perm))
    return apply_op("transpose", np.transpose(x.data, perm), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    perm = list(range(x.ndim))
    perm[a], perm[b] = perm[b], perm[a]
    return transpose(x, perm)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = np.broadcast_to(x.data, tuple(shape)).copy()
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, tuple(shape)) from None
    return apply_op("broadcast_to", out, (x,), lambda g: (g,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return apply_op("concat", out, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in tensors]) from None

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return apply_op("stack", out, tuple(tensors), backward)


def getitem(x: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    shape, dtype = x.shape, x.dtype
    out = np.array(x.data[index], copy=True)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return apply_op("getitem", out, (x,), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> List[Tensor]:
    axis = axis % x.ndim
    if builtins.sum(sizes) != x.shape[axis]:
        raise ShapeError("split", x.shape, tuple(sizes), detail="sizes must add up to the split axis")
    parts: List[Tensor] = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        parts.append(getitem(x, tuple(index)))
        start += size
    return parts


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, value, x.data).astype(x.dtype)
    except ValueError:
        raise ShapeError("masked_fill", x.shape, mask.shape) from None
    keep = ~mask
    return apply_op("masked_fill", out, (x,), lambda g: (g * keep,))


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading dimensions broadcast, inputs must be at least 2-D."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def backward(g):
        return (np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g))

    return apply_op("matmul", out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x[..., in] @ weight[in, out] + bias[out], computed on a 2-D view."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError("linear", x.shape, weight.shape)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, weight.shape[0])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))
    wd = weight.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        grads = [(g2 @ wd.T).reshape(lead + (wd.shape[0],)), x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return apply_op("linear", out, inputs, backward)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise LabelRangeError(f"embedding: ids must lie in [0, {weight.shape[0]}), got range [{ids.min()}, {ids.max()}]")
    shape, dtype = weight.shape, weight.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return apply_op("embedding", weight.data[ids], (weight,), backward)


# ----------------------------------------------------------------------------
# convolutions


def causal_conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, history: Optional[Tensor] = None) -> Tensor:
    """Depthwise causal convolution along time.

    x is [..., T, C], weight is [W, C] with weight[0] applied to the current step,
    history holds the W-1 inputs preceding x ([..., W-1, C], zeros when omitted).
    out[t] = sum_j weight[j] * x[t - j].
    """
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError("causal_conv1d", x.shape, weight.shape)
    width, channels = weight.shape
    steps = x.shape[-2]
    lead = x.shape[:-2]
    pad_shape = lead + (width - 1, channels)
    if history is not None and history.shape != pad_shape:
        raise ShapeError("causal_conv1d", history.shape, pad_shape, detail="history must hold width-1 steps")
    past = history.data if history is not None else np.zeros(pad_shape, dtype=x.dtype)
    xpad = np.concatenate([past, x.data], axis=-2)
    wd = weight.data
    out = np.zeros(x.shape, dtype=x.dtype)
    for j in range(width):
        out += wd[j] * xpad[..., width - 1 - j : width - 1 - j + steps, :]
    if bias is not None:
        out = out + bias.data
    inputs: List[Tensor] = [x, weight]
    if bias is not None:
        inputs.append(bias)
    if history is not None:
        inputs.append(history)

    def backward(g):
        gpad = np.zeros(xpad.shape, dtype=xpad.dtype)
        gw = np.zeros(wd.shape, dtype=wd.dtype)
        for j in range(width):
            window = slice(width - 1 - j, width - 1 - j + steps)
            gpad[..., window, :] += g * wd[j]
            gw[j] = (g * xpad[..., window, :]).reshape(-1, channels).sum(axis=0)
        grads = [gpad[..., width - 1 :, :], gw]
        if bias is not None:
            grads.append(g.reshape(-1, channels).sum(axis=0))
        if history is not None:
            grads.append(gpad[..., : width - 1, :])
        return grads

    return apply_op("causal_conv1d", out, tuple(inputs), backward)


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 2-D convolution: x [B, H, W, Cin], weight [kh, kw, Cin, Cout]."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    kh, kw, cin, cout = weight.shape
    batch, height, width, _ = x.shape
    out_h = _conv_out(height, kh, stride, padding)
    out_w = _conv_out(width, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="kernel larger than padded input")
    xpad = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    wd = weight.data
    out = np.zeros((batch, out_h, out_w, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            window = xpad[:, i : i + stride * out_h : stride, j : j + stride * out_w : stride, :]
            out += window @ wd[i, j]
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gpad = np.zeros(xpad.shape, dtype=xpad.dtype)
        gw = np.zeros(wd.shape, dtype=wd.dtype)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + stride * out_h, stride)
                cols = slice(j, j + stride * out_w, stride)
                gpad[:, rows, cols, :] += g @ wd[i, j].T
                gw[i, j] = np.tensordot(xpad[:, rows, cols, :], g, axes=([0, 1, 2], [0, 1, 2]))
        gx = gpad[:, padding : padding + height, padding : padding + width, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return grads

    return apply_op("conv2d", out, inputs, backward)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Channels-last transposed convolution: x [B, H, W, Cin], weight [kh, kw, Cin, Cout].

    Output extent is (H - 1) * stride - 2 * padding + kh + output_padding.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape)
    kh, kw, cin, cout = weight.shape
    batch, height, width, _ = x.shape
    full_h = (height - 1) * stride + kh + output_padding
    full_w = (width - 1) * stride + kw + output_padding
    out_h = full_h - 2 * padding
    out_w = full_w - 2 * padding
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape, detail="padding removes the whole output")
    xd, wd = x.data, weight.data
    full = np.zeros((batch, full_h, full_w, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i : i + stride * height : stride, j : j + stride * width : stride, :] += xd @ wd[i, j]
    out = full[:, padding : padding + out_h, padding : padding + out_w, :].copy()
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gfull = np.zeros(full.shape, dtype=full.dtype)
        gfull[:, padding : padding + out_h, padding : padding + out_w, :] = g
        gx = np.zeros(xd.shape, dtype=xd.dtype)
        gw = np.zeros(wd.shape, dtype=wd.dtype)
        for i in range(kh):
            for j in range(kw):
                window = gfull[:, i : i + stride * height : stride, j : j + stride * width : stride, :]
                gx += window @ wd[i, j].T
                gw[i, j] = np.tensordot(xd, window, axes=([0, 1, 2], [0, 1, 2]))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return grads

    return apply_op("conv_transpose2d", out, inputs, backward)


# ----------------------------------------------------------------------------
# linear recurrence h_t = a_t * h_{t-1} + b_t


def _time_first(arr: np.ndarray) -> np.ndarray:
    return np.moveaxis(arr, -3, 0)


def scan_sequential_np(a: np.ndarray, b: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Reference recurrence with time on axis 0; returns every h_t."""
    out = np.empty_like(b)
    h = h0
    for t in range(a.shape[0]):
        h = a[t] * h + b[t]
        out[t] = h
    return out


def _blelloch_prefix(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inclusive prefix of (a, b) pairs under (a2 * a1, a2 * b1 + b2) with a fixed up/down-sweep tree.

    Returns (A, B) such that h_t = A_t * h_in + B_t for the chunk.
    """
    n = a.shape[0]
    size = 1 << max(n - 1, 0).bit_length()
    rest = a.shape[1:]
    acc_a = np.ones((size,) + rest, dtype=a.dtype)
    acc_b = np.zeros((size,) + rest, dtype=b.dtype)
    acc_a[:n] = a
    acc_b[:n] = b

    stride = 1
    while stride < size:
        right = np.arange(2 * stride - 1, size, 2 * stride)
        left = right - stride
        acc_b[right] = acc_a[right] * acc_b[left] + acc_b[right]
        acc_a[right] = acc_a[right] * acc_a[left]
        stride *= 2

    acc_a[size - 1] = 1
    acc_b[size - 1] = 0
    stride = size // 2
    while stride >= 1:
        right = np.arange(2 * stride - 1, size, 2 * stride)
        left = right - stride
        seg_a = acc_a[left].copy()
        seg_b = acc_b[left].copy()
        prefix_a = acc_a[right].copy()
        prefix_b = acc_b[right].copy()
        acc_a[left] = prefix_a
        acc_b[left] = prefix_b
        acc_a[right] = seg_a * prefix_a
        acc_b[right] = seg_a * prefix_b + seg_b
        stride //= 2

    # exclusive -> inclusive
    inc_a = a * acc_a[:n]
    inc_b = a * acc_b[:n] + b
    return inc_a, inc_b


def scan_parallel_np(a: np.ndarray, b: np.ndarray, h0: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Chunked associative scan with time on axis 0; the carry crosses chunk boundaries."""
    if chunk < 1:
        raise ConfigError("chunk must be positive")
    out = np.empty_like(b)
    h = h0
    for start in range(0, a.shape[0], chunk):
        stop = min(start + chunk, a.shape[0])
        inc_a, inc_b = _blelloch_prefix(a[start:stop], b[start:stop])
        out[start:stop] = inc_a * h + inc_b
        h = out[stop - 1]
    return out


def _run_scan(a, b, h0, method: str, chunk: int) -> np.ndarray:
    if method == "sequential":
        return scan_sequential_np(a, b, h0)
    if method == "parallel":
        return scan_parallel_np(a, b, h0, chunk)
    raise ConfigError(f"unknown scan method {method!r}")


def linear_recurrence(a: Tensor, b: Tensor, h0: Tensor, method: str = "parallel", chunk: int = 256) -> Tensor:
    """All states of h_t = a_t * h_{t-1} + b_t.

    a and b are [..., T, E, N] and h0 is [..., E, N]. The backward pass is the
    reverse recurrence lam_t = g_t + a_{t+1} * lam_{t+1}, evaluated with the same
    scan method.
    """
    if a.shape != b.shape or a.ndim < 3 or h0.shape != a.shape[:-3] + a.shape[-2:]:
        raise ShapeError("linear_recurrence", a.shape, b.shape, h0.shape)
    at = _time_first(a.data)
    bt = _time_first(b.data)
    hs = _run_scan(at, bt, h0.data, method, chunk)
    out = np.moveaxis(hs, 0, -3)

    def backward(g):
        gt = _time_first(g)
        shifted = np.concatenate([at[1:], np.zeros_like(at[:1])], axis=0)
        lam = _run_scan(shifted[::-1], gt[::-1], np.zeros_like(h0.data), method, chunk)[::-1]
        previous = np.concatenate([h0.data[None], hs[:-1]], axis=0)
        grad_a = np.moveaxis(lam * previous, 0, -3)
        grad_b = np.moveaxis(lam, 0, -3)
        grad_h0 = at[0] * lam[0]
        return grad_a, grad_b, grad_h0

    return apply_op("linear_recurrence", out, (a, b, h0), backward)


# ----------------------------------------------------------------------------
# losses


def mse(pred: Tensor, target) -> Tensor:
    pred, target = _pair(pred, target)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    return apply_op("mse", out, (pred, target), lambda g: (2.0 * g * diff / count, -2.0 * g * diff / count))


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; targets are probabilities in [0, 1]."""
    logits, target = _pair(logits, target)
    if logits.shape != target.shape:
        raise ShapeError("bce_with_logits", logits.shape, target.shape)
    x, y = logits.data, target.data
    count = x.size
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(per.mean(), dtype=logits.dtype)

    def backward(g):
        return g * (expit(x) - y) / count, -g * x / count

    return apply_op("bce_with_logits", out, (logits, target), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy; logits [..., C], integer labels [...]."""
    labels = np.asarray(labels, dtype=np.int64)
    classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelRangeError(f"cross_entropy: labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    xd = logits.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    count = max(labels.size, 1)
    out = np.asarray(-picked.mean(), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (g * grad / count,)

    return apply_op("cross_entropy", out, (logits,), backward)
