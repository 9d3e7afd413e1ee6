"""Dense tensors and a tape-based reverse-mode autodiff engine.

Every differentiable operation evaluates eagerly on numpy arrays and, when
gradients are required, appends a node to the thread-local :class:`Tape`.
Nodes refer to tensors by an integer key that is never reused, so
intermediate arrays are released as soon as no backward rule needs them.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_keys = itertools.count(1)
_local = threading.local()


class Tensor:
    """A float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "key", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.key = next(_keys)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; the real work lives in the functions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        from .functional import matmul

        return matmul(self, other)


def tensor_new(dims: Sequence[int], fill=0.0, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    """Build a tensor of extent ``dims`` from a scalar fill or a flat data list."""
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError(f"all extents must be >= 1, got {dims}")
    if np.isscalar(fill):
        arr = np.full(dims, fill, dtype=dtype)
    else:
        flat = np.asarray(fill, dtype=dtype).reshape(-1)
        if flat.size != int(np.prod(dims)):
            raise ValueError(f"data length {flat.size} does not match dims {dims}")
        arr = flat.reshape(dims).copy()
    return Tensor(arr, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    op: str
    input_keys: tuple[int | None, ...]
    out_key: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    leaves: dict[int, Tensor] = field(default_factory=dict)
    producers: dict[int, int] = field(default_factory=dict)

    def record(self, op, inputs, out: Tensor, backward) -> None:
        keys = []
        for t in inputs:
            if isinstance(t, Tensor) and t.requires_grad:
                keys.append(t.key)
                if t.is_leaf:
                    self.leaves.setdefault(t.key, t)
            else:
                keys.append(None)
        out.is_leaf = False
        self.producers[out.key] = len(self.nodes)
        self.nodes.append(Node(op, tuple(keys), out.key, backward))

    def clear(self) -> None:
        self.nodes.clear()
        self.leaves.clear()
        self.producers.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def make_result(op: str, data: np.ndarray, inputs: Sequence, backward) -> Tensor:
    """Wrap ``data`` as an op output and record ``backward`` if any input needs grads.

    ``backward`` maps the output gradient to one gradient (or None) per input.
    """
    needs = is_grad_enabled() and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        get_tape().record(op, inputs, out, backward)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires grad, then clear the tape.

    Leaf gradients are replaced, not accumulated.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = get_tape()
    idx = tape.producers.get(loss.key)
    if idx is None:
        raise RuntimeError("loss is not recorded on the tape (backward already ran, or no op needed grad)")
    grads: dict[int, np.ndarray] = {loss.key: np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: idx + 1]):
        g = grads.pop(node.out_key, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for key, gi in zip(node.input_keys, in_grads):
            if key is None or gi is None:
                continue
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for key, leaf in tape.leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    tape.clear()


# ---------------------------------------------------------------------------
# elementwise arithmetic, reductions, shape ops


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return make_result("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return make_result("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result("mul", ad * bd, (a, b), bw)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result("sum", np.sum(x.data).reshape(()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    out = (np.sum(x.data) / n).astype(x.dtype).reshape(())
    return make_result("mean", out, (x,), lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(
        "permute",
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )
