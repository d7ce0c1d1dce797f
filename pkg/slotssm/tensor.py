"""Dense tensors and the tape that records them for reverse-mode differentiation.

A Graph is an append-only list of Nodes. Every op whose inputs require grad
appends one Node holding the inputs and a closure mapping the output gradient
to input gradients; append order is a valid topological order. A graph may be
consumed by exactly one backward pass.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, GraphError, NonFiniteError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

DTYPES: Dict[str, np.dtype] = {"float32": np.dtype(np.float32), "float64": np.dtype(np.float64)}

_local = threading.local()


def _thread_state():
    if not hasattr(_local, "dtype"):
        _local.dtype = DTYPES["float32"]
        _local.grad_enabled = True
        _local.graph_stack = []
        _local.default_graph = None
    return _local


def resolve_dtype(name: Union[str, np.dtype, type]) -> np.dtype:
    if isinstance(name, str):
        if name not in DTYPES:
            raise ConfigError(f"unsupported element type {name!r}; choose from {sorted(DTYPES)}")
        return DTYPES[name]
    dtype = np.dtype(name)
    if dtype not in DTYPES.values():
        raise ConfigError(f"unsupported element type {dtype}")
    return dtype


def get_default_dtype() -> np.dtype:
    return _thread_state().dtype


@contextlib.contextmanager
def precision(name: Union[str, np.dtype, type]) -> Iterator[None]:
    """Temporarily change the element type used for new tensors and parameters."""
    state = _thread_state()
    previous = state.dtype
    state.dtype = resolve_dtype(name)
    try:
        yield
    finally:
        state.dtype = previous


def is_grad_enabled() -> bool:
    return _thread_state().grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    state = _thread_state()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


class Node:
    __slots__ = ("op", "inputs", "backward_fn", "index", "graph")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn, index: int, graph: "Graph") -> None:
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.index = index
        self.graph = graph


class Graph:
    """Append-only tape. Use as a context manager to scope recording to one step."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.consumed = False

    def record(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn) -> Node:
        if self.consumed:
            raise GraphError(f"{op}: cannot record on a graph that was already consumed by backward")
        node = Node(op, inputs, backward_fn, len(self.nodes), self)
        self.nodes.append(node)
        return node

    def release(self) -> None:
        # saved activations live in the closures
        for node in self.nodes:
            node.inputs = ()
            node.backward_fn = _released
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Graph":
        _thread_state().graph_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _thread_state().graph_stack
        if stack and stack[-1] is self:
            stack.pop()


def _released(grad: np.ndarray):
    raise GraphError("graph was released after backward; re-run the forward pass")


def current_graph() -> Graph:
    state = _thread_state()
    if state.graph_stack:
        return state.graph_stack[-1]
    if state.default_graph is None or state.default_graph.consumed:
        state.default_graph = Graph()
    return state.default_graph


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        target = resolve_dtype(dtype) if dtype is not None else get_default_dtype()
        self.data: np.ndarray = np.ascontiguousarray(np.asarray(data, dtype=target))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out._node = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def op(self) -> Optional[str]:
        return self._node.op if self._node is not None else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __rtruediv__(self, other):
        return ops.div(other, self)

    def __neg__(self):
        return ops.neg(self)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __pow__(self, exponent: float):
        return ops.power(self, exponent)

    def __getitem__(self, index):
        return ops.getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return ops.exp(self)

    def log(self):
        return ops.log(self)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches shape (trailing-dimension alignment)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def apply_op(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap a forward result and record it on the active graph when any input requires grad."""
    if not np.isfinite(out).all():
        raise NonFiniteError(op, "forward")
    result = Tensor._wrap(out)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result._node = current_graph().record(op, tuple(inputs), backward_fn)
    return result


def _accumulate_leaf(leaf: Tensor, grad: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.array(grad, dtype=leaf.dtype, copy=True)
    else:
        leaf.grad = leaf.grad + grad


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad leaf that `loss` depends on; consumes the graph."""
    if loss.size != 1:
        raise GraphError(f"backward: loss must be a scalar, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    node = loss._node
    if node is None:
        if not loss.requires_grad:
            raise GraphError("backward: loss does not depend on any tensor that requires grad")
        _accumulate_leaf(loss, seed)
        return
    graph = node.graph
    if graph.consumed:
        raise GraphError("backward: graph already consumed; re-run the forward pass to record a new one")

    grads: Dict[int, np.ndarray] = {node.index: seed}
    for current in reversed(graph.nodes[: node.index + 1]):
        grad_out = grads.pop(current.index, None)
        if grad_out is None:
            continue
        input_grads = current.backward_fn(grad_out)
        for inp, grad in zip(current.inputs, input_grads):
            if grad is None or not inp.requires_grad:
                continue
            grad = unbroadcast(np.asarray(grad, dtype=inp.dtype), inp.shape)
            if not np.isfinite(grad).all():
                raise NonFiniteError(current.op, "backward")
            parent = inp._node
            if parent is not None and parent.graph is graph:
                previous = grads.get(parent.index)
                grads[parent.index] = grad if previous is None else previous + grad
            else:
                _accumulate_leaf(inp, grad)
    graph.consumed = True
    graph.release()


from . import ops  # noqa: E402  (ops needs Tensor defined first)
