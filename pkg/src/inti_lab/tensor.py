"""Float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records one node per differentiable operation executed while it
is active. ``Tape.backward(loss)`` replays the nodes in reverse append order and
accumulates gradients into every leaf tensor created with ``requires_grad=True``.
Outside an active tape, operations are plain numpy computations and nothing is
recorded, which is how inference runs.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, ShapeError

DTYPE = np.float64

_active_tape: "Tape | None" = None
_mac_counters: list["MacCounter"] = []


@dataclass
class MacCounter:
    """Running multiply-accumulate tally fed by matmul-like operations."""

    total: int = 0
    by_op: dict = field(default_factory=dict)

    def add(self, op: str, macs: int) -> None:
        self.total += macs
        self.by_op[op] = self.by_op.get(op, 0) + macs


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Count MACs of every matmul, linear and convolution executed in the block."""
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _tally(op: str, macs: int) -> None:
    for c in _mac_counters:
        c.add(op, int(macs))


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: Node | None = None
        self.name = name

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node_id(self) -> int | None:
        return None if self._node is None else self._node.index

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar ---------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _not_scalar(t: Tensor) -> float:
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def ones(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=DTYPE), requires_grad=requires_grad)


# ----------------------------------------------------------------------
# tape


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    tape: "Tape"
    index: int


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Not reentrant: entering a tape while another is active raises.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise ContractError("a Tape is already active; tapes are not reentrant")
        _active_tape = self
        return self

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        node = Node(op, inputs, backward, self, len(self.nodes))
        self.nodes.append(node)
        out._node = node
        out.requires_grad = True

    def backward(self, loss: Tensor) -> list[Tensor]:
        """Populate ``.grad`` of every leaf reachable from ``loss``.

        Gradients accumulate into existing ``.grad`` arrays. Returns the leaves
        that received a gradient. The tape is cleared afterwards so saved
        activations can be freed.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        node = loss._node
        if node is None or node.tape is not self:
            return []
        pending: dict[int, np.ndarray] = {node.index: np.ones_like(loss.data)}
        leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}
        for idx in range(node.index, -1, -1):
            g = pending.pop(idx, None)
            if g is None:
                continue
            cur = self.nodes[idx]
            for t, gi in zip(cur.inputs, cur.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                src = t._node
                if src is None:
                    key = id(t)
                    if key in leaf_grads:
                        leaf_grads[key] = (t, leaf_grads[key][1] + gi)
                    else:
                        leaf_grads[key] = (t, gi)
                elif src.tape is self:
                    if src.index in pending:
                        pending[src.index] = pending[src.index] + gi
                    else:
                        pending[src.index] = gi
        leaves = []
        for t, g in leaf_grads.values():
            g = np.array(g, dtype=DTYPE).reshape(t.shape)
            t.grad = g if t.grad is None else t.grad + g
            leaves.append(t)
        self.nodes.clear()
        return leaves


def active_tape() -> Tape | None:
    return _active_tape


def backward(loss: Tensor) -> list[Tensor]:
    """Reverse-mode pass over the tape that produced ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        return []
    return loss._node.tape.backward(loss)


def _result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tape = _active_tape
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))

    return _result("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result("log", np.log(ad), (a,), lambda g: (g / ad,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


# ----------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., M, K] @ b[..., K, P]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    _tally("matmul", int(np.prod(batch, dtype=np.int64)) * ad.shape[-2] * ad.shape[-1] * bd.shape[-1])

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result("matmul", out, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x[..., K] @ weight[K, P] (+ bias[P])`` flattened into one GEMM."""
    x, weight = as_tensor(x), as_tensor(weight)
    k, p = weight.shape
    if x.shape[-1] != k:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, k)
    wd = weight.data
    out = x2 @ wd
    _tally("linear", x2.shape[0] * k * p)
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs = (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, p)
        gx = (g2 @ wd.T).reshape(*lead, k)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result("linear", out.reshape(*lead, p), inputs, bw)


# ----------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes]))
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape),)

    return _result("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _result("broadcast_to", np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (_unbroadcast(g, old),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    out = a.data[index]
    return _result("getitem", np.array(out, dtype=DTYPE), (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return _result("concat", np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    return _result("stack", out, ts,
                   lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts))))
