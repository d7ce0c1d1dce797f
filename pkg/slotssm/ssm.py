"""Selective state space recurrence and the Mamba block.

Layouts use trailing axes with arbitrary leading batch dimensions:
delta [..., T, E], A [E, N], B and C [..., T, N], discrete Ā and B̄ [..., T, E, N],
hidden state [..., E, N].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, DomainError, ShapeError
from .nn import LayerNorm, Linear, Module, Parameter, make_rng, uniform_init
from .tensor import Tensor, as_tensor, no_grad

SCAN_METHODS = ("sequential", "parallel")
DT_MIN = 0.001
DT_MAX = 0.1
SCAN_TOLERANCE = {"float32": 1e-5, "float64": 1e-10}


@dataclass
class DiscreteSystem:
    a_bar: Tensor
    b_bar: Tensor
    c: Optional[Tensor] = None

    @property
    def steps(self) -> int:
        return self.a_bar.shape[-3]


@dataclass
class ScanState:
    h: Tensor
    t: int = 0


@dataclass
class MambaState:
    """Carry for chunked inference: the last width-1 conv inputs and the SSM hidden state."""

    conv: Tensor
    ssm: ScanState


def zoh_discretize(delta, A, B, C=None) -> DiscreteSystem:
    """Exact diagonal zero-order hold: Ā = exp(ΔA), B̄ = (Ā - 1) / A · B."""
    delta, A, B = as_tensor(delta), as_tensor(A), as_tensor(B)
    if np.any(delta.data <= 0):
        raise DomainError("zoh_discretize: delta must be strictly positive")
    if np.any(A.data == 0):
        raise DomainError("zoh_discretize: A has a zero entry")
    if A.ndim != 2 or delta.shape[-1] != A.shape[0] or B.shape[-1] != A.shape[1] or B.shape[:-1] != delta.shape[:-1]:
        raise ShapeError("zoh_discretize", delta.shape, A.shape, B.shape)
    state = A.shape[1]
    scaled = delta.reshape(delta.shape + (1,)) * A
    a_bar = ops.exp(scaled)
    b_bar = ops.expm1(scaled) / A * B.reshape(B.shape[:-1] + (1, state))
    return DiscreteSystem(a_bar, b_bar, None if C is None else as_tensor(C))


def _selective_scan(sys: DiscreteSystem, u, h0, method: str, chunk: int) -> Tuple[Tensor, Tensor]:
    u = as_tensor(u)
    a_bar, b_bar, c = sys.a_bar, sys.b_bar, sys.c
    if c is None:
        raise ShapeError("selective_scan", a_bar.shape, (), detail="system has no output map C")
    channels, state = a_bar.shape[-2:]
    if b_bar.shape != a_bar.shape or u.shape != a_bar.shape[:-1] or c.shape != a_bar.shape[:-2] + (state,):
        raise ShapeError("selective_scan", a_bar.shape, b_bar.shape, u.shape, c.shape)
    h_shape = a_bar.shape[:-3] + (channels, state)
    h0 = Tensor(np.zeros(h_shape), dtype=a_bar.dtype) if h0 is None else as_tensor(h0)
    if h0.shape != h_shape:
        raise ShapeError("selective_scan", h0.shape, h_shape, detail="initial state")
    drive = b_bar * u.reshape(u.shape + (1,))
    hidden = ops.linear_recurrence(a_bar, drive, h0, method=method, chunk=chunk)
    y = (hidden * c.reshape(c.shape[:-1] + (1, state))).sum(axis=-1)
    return y, hidden[..., -1, :, :]


def selective_scan_sequential(sys: DiscreteSystem, u, h0=None) -> Tuple[Tensor, Tensor]:
    """h_t = Ā_t ⊙ h_{t-1} + B̄_t u_t, y_t = Σ_n C_t[n] h_t[:, n]; returns (y, h_T)."""
    return _selective_scan(sys, u, h0, "sequential", 1)


def selective_scan_parallel(sys: DiscreteSystem, u, h0=None, chunk: int = 256) -> Tuple[Tensor, Tensor]:
    """Same contract as the sequential scan, evaluated with the chunked up/down-sweep tree."""
    return _selective_scan(sys, u, h0, "parallel", chunk)


def selective_scan(sys: DiscreteSystem, u, h0=None, method: str = "parallel", chunk: int = 256) -> Tuple[Tensor, Tensor]:
    if method not in SCAN_METHODS:
        raise ConfigError(f"unknown scan method {method!r}")
    return _selective_scan(sys, u, h0, method, chunk)


def inverse_softplus(value: np.ndarray) -> np.ndarray:
    return value + np.log(-np.expm1(-value))


class SSMParams(Module):
    """Input-dependent parameter generators S_B, S_C, low-rank S_Δ plus Δ bias, and A = -exp(A_log)."""

    def __init__(self, channels: int, state_size: int, rng: np.random.Generator, dt_rank: Optional[int] = None) -> None:
        self.channels = channels
        self.state_size = state_size
        self.dt_rank = dt_rank or max(1, math.ceil(channels / 16))
        ramp = np.arange(1, state_size + 1, dtype=np.float64)
        self.A_log = Parameter(np.log(np.tile(ramp, (channels, 1))))
        self.s_b = Linear(channels, state_size, rng, bias=False)
        self.s_c = Linear(channels, state_size, rng, bias=False)
        self.dt_down = Linear(channels, self.dt_rank, rng, bias=False)
        self.dt_up = Linear(self.dt_rank, channels, rng, bias=False)
        self.dt_bias = Parameter(inverse_softplus(rng.uniform(DT_MIN, DT_MAX, size=channels)))

    def A(self) -> Tensor:
        return -ops.exp(self.A_log)

    def discretize(self, x: Tensor) -> DiscreteSystem:
        B = self.s_b(x)
        C = self.s_c(x)
        delta = ops.softplus(self.dt_up(self.dt_down(x)) + self.dt_bias)
        return zoh_discretize(delta, self.A(), B, C)


class MambaBlock(Module):
    """Pre-norm Mamba block over [..., T, D] sequences.

    Linear1 splits into a stream and a residual gate, the stream runs through a
    depthwise causal conv and SiLU, the selective SSM, the SiLU(residual) gate and
    Linear2. There is no skip connection around the block.
    """

    def __init__(
        self,
        dim: int,
        rng: np.random.Generator,
        state_size: int = 16,
        expand: float = 1.25,
        conv_width: int = 4,
        dt_rank: Optional[int] = None,
        scan: str = "parallel",
        chunk: int = 256,
    ) -> None:
        if scan not in SCAN_METHODS:
            raise ConfigError(f"unknown scan method {scan!r}")
        self.dim = dim
        self.inner = int(round(expand * dim))
        self.conv_width = conv_width
        self.scan = scan
        self.chunk = chunk
        self.norm = LayerNorm(dim)
        self.in_proj = Linear(dim, 2 * self.inner, rng)
        self.conv_weight = Parameter(uniform_init(rng, (conv_width, self.inner), conv_width))
        self.conv_bias = Parameter(np.zeros(self.inner))
        self.ssm = SSMParams(self.inner, state_size, rng, dt_rank)
        self.out_proj = Linear(self.inner, dim, rng)

    @property
    def state_size(self) -> int:
        return self.ssm.state_size

    def init_state(self, batch_shape: Tuple[int, ...] = ()) -> MambaState:
        dtype = self.conv_weight.dtype
        conv = Tensor(np.zeros(tuple(batch_shape) + (self.conv_width - 1, self.inner)), dtype=dtype)
        h = Tensor(np.zeros(tuple(batch_shape) + (self.inner, self.state_size)), dtype=dtype)
        return MambaState(conv, ScanState(h, 0))

    def forward(self, s: Tensor, state: Optional[MambaState] = None) -> Tuple[Tensor, MambaState]:
        if s.shape[-1] != self.dim or s.ndim < 2 or s.shape[-2] < 1:
            raise ShapeError("mamba_block", s.shape, (self.dim,))
        steps = s.shape[-2]
        xz = self.in_proj(self.norm(s))
        stream, res = ops.split(xz, [self.inner, self.inner], axis=-1)
        history = state.conv if state is not None else None
        conv_out = ops.causal_conv1d(stream, self.conv_weight, self.conv_bias, history)
        x = ops.silu(conv_out)
        sys = self.ssm.discretize(x)
        h0 = state.ssm.h if state is not None else None
        y, h_last = selective_scan(sys, x, h0, method=self.scan, chunk=self.chunk)
        out = self.out_proj(y * ops.silu(res))

        past = history.data if history is not None else np.zeros(stream.shape[:-2] + (self.conv_width - 1, self.inner), dtype=stream.dtype)
        tail = np.concatenate([past, stream.data], axis=-2)[..., steps:, :]
        t0 = state.ssm.t if state is not None else 0
        carry = MambaState(Tensor(tail, dtype=stream.dtype), ScanState(h_last.detach(), t0 + steps))
        return out, carry

    def step(self, s_t: Tensor, state: MambaState) -> Tuple[Tensor, MambaState]:
        """One recurrent step on [..., D]; cost is independent of how many steps came before."""
        out, carry = self.forward(s_t.reshape(s_t.shape[:-1] + (1, self.dim)), state)
        return out.reshape(s_t.shape), carry


def random_system(seed: int, steps: int, channels: int, state: int, dtype=np.float64) -> Tuple[DiscreteSystem, Tensor]:
    """Stable random DiscreteSystem and input, used by scan-check and the scan tests."""
    rng = make_rng(seed)
    with no_grad():
        delta = rng.uniform(DT_MIN, 1.0, size=(steps, channels))
        A = -rng.uniform(0.5, 2.0, size=(channels, state))
        B = rng.normal(size=(steps, state))
        C = rng.normal(size=(steps, state))
        u = rng.normal(size=(steps, channels))
        sys = zoh_discretize(Tensor(delta, dtype=dtype), Tensor(A, dtype=dtype), Tensor(B, dtype=dtype), Tensor(C, dtype=dtype))
    return sys, Tensor(u, dtype=dtype)


def scan_agreement(lengths, dtypes=("float32", "float64"), trials: int = 1, channels: int = 4, state: int = 4, chunk: int = 256, seed: int = 0):
    """Max |parallel - sequential| over random systems, one row per (dtype, length)."""
    rows = []
    for dtype in dtypes:
        for length in lengths:
            worst = 0.0
            for trial in range(trials):
                sys, u = random_system(seed + trial, int(length), channels, state, dtype=np.dtype(dtype))
                with no_grad():
                    y_seq, h_seq = selective_scan_sequential(sys, u)
                    y_par, h_par = selective_scan_parallel(sys, u, chunk=chunk)
                worst = max(worst, float(np.max(np.abs(y_seq.data - y_par.data))), float(np.max(np.abs(h_seq.data - h_par.data))))
            rows.append({"dtype": dtype, "length": int(length), "max_abs_diff": worst})
    return rows
