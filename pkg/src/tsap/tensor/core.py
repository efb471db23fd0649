"""Dense tensors with reverse-mode automatic differentiation.

Every operation records a vector-Jacobian product written in terms of other
tensor operations.  Running :func:`grad` with ``create_graph=True`` therefore
yields gradients that are themselves part of a graph, which is what makes
differentiating through gradient-based updates possible.
"""

from __future__ import annotations

import contextlib
import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operands have incompatible shapes."""


class GradError(RuntimeError):
    """Raised when a differentiation request violates the contract."""


_state = {"grad_enabled": True, "next_id": 0}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


@contextlib.contextmanager
def enable_grad(flag: bool = True):
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = flag
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


def set_default_dtype(dtype) -> None:
    global DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype).type


class Tensor:
    """An n-dimensional array that may participate in a differentiation graph.

    ``parents`` and ``vjp`` are only populated for non-leaf nodes.  A leaf with
    ``requires_grad=True`` is a differentiation target (a parameter or a
    hyperparameter).
    """

    __slots__ = ("data", "requires_grad", "parents", "vjp", "op", "node_id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.parents: tuple = ()
        self.vjp: Callable | None = None
        self.op = "leaf"
        self.node_id = None
        if requires_grad:
            self.node_id = _state["next_id"]
            _state["next_id"] += 1

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        if self.parents:
            raise GradError("requires_grad_ is only valid on leaf tensors")
        self.requires_grad = flag
        if flag and self.node_id is None:
            self.node_id = _state["next_id"]
            _state["next_id"] += 1
        return self

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.parents else (", requires_grad=True" if self.requires_grad else "")
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- method sugar -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _new(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.node_id = None
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
        out.op = op
        out.node_id = _state["next_id"]
        _state["next_id"] += 1
    else:
        out.requires_grad = False
        out.parents = ()
        out.vjp = None
        out.op = "leaf"
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _reduce_axes(shape: tuple, target: tuple) -> tuple[tuple, bool]:
    lead = len(shape) - len(target)
    axes = list(range(lead))
    for i, t in enumerate(target):
        if t == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes), lead > 0


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes, _ = _reduce_axes(x.shape, shape)
    data = x.data.sum(axis=axes).reshape(shape) if axes else x.data.reshape(shape)
    src_shape = x.shape

    def vjp(g):
        return (broadcast_to(g, src_shape),)

    return _new(data, (x,), vjp, "sum_to")


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape)
    src_shape = x.shape

    def vjp(g):
        return (sum_to(g, src_shape),)

    return _new(data, (x,), vjp, "broadcast_to")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(g, sa), sum_to(g, sb)

    return _new(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(g, sa), sum_to(neg(g), sb)

    return _new(a.data - b.data, (a, b), vjp, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _new(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        ga = sum_to(mul(g, b), sa) if a.requires_grad else None
        gb = sum_to(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _new(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        ga = sum_to(div(g, b), sa) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), sb) if b.requires_grad else None
        return ga, gb

    return _new(a.data / b.data, (a, b), vjp, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise GradError("tensor exponents are not supported")
    p = float(exponent)
    if p == 2.0:
        return mul(a, a)
    if p == 0.5:
        return sqrt(a)

    def vjp(g):
        return (mul(g, mul(p, power(a, p - 1.0))),)

    return _new(a.data ** p, (a,), vjp, "pow")


def sqrt(a) -> Tensor:
    """Square root; the derivative at exactly zero is taken to be zero."""
    a = as_tensor(a)
    out = _new(np.sqrt(a.data), (a,), None, "sqrt")
    ref = weakref.ref(out)

    def vjp(g):
        o = ref()
        safe = Tensor(np.where(o.data > 0, 0.0, 1.0))
        inv = div(0.5 * Tensor(o.data > 0, dtype=o.data.dtype), add(o, safe))
        return (mul(g, inv),)

    out.vjp = vjp if out.requires_grad else None
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _new(np.exp(a.data), (a,), None, "exp")
    ref = weakref.ref(out)
    if out.requires_grad:
        out.vjp = lambda g: (mul(g, ref()),)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _new(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = _new(np.tanh(a.data), (a,), None, "tanh")
    ref = weakref.ref(out)
    if out.requires_grad:
        def vjp(g):
            o = ref()
            return (mul(g, sub(1.0, mul(o, o))),)
        out.vjp = vjp
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _new(data.astype(x.dtype, copy=False), (a,), None, "sigmoid")
    ref = weakref.ref(out)
    if out.requires_grad:
        def vjp(g):
            o = ref()
            return (mul(g, mul(o, sub(1.0, o))),)
        out.vjp = vjp
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    m = Tensor(mask, dtype=a.data.dtype)
    return _new(a.data * mask, (a,), lambda g: (mul(g, m),), "relu")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = Tensor(np.sign(a.data))
    return _new(np.abs(a.data), (a,), lambda g: (mul(g, s),), "abs")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    return add(relu(a), log(add(1.0, exp(neg(absolute(a))))))


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else from ``b`` (cond is constant)."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    c = Tensor(cond, dtype=np.result_type(a.data, b.data))
    return add(mul(a, c), mul(b, sub(1.0, c)))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    src_shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(src_shape))

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, src_shape),)

    return _new(np.asarray(data), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src_shape = a.shape
    data = a.data.reshape(shape)
    return _new(data, (a,), lambda g: (reshape(g, src_shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _new(np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    src_shape = a.shape
    return _new(np.asarray(a.data[key]), (a,), lambda g: (scatter_add(g, key, src_shape),), "getitem")


def scatter_add(g, key, shape) -> Tensor:
    """Place ``g`` into zeros of ``shape`` at ``key``, accumulating repeats."""
    g = as_tensor(g)
    out = np.zeros(shape, dtype=g.data.dtype)
    np.add.at(out, key, g.data)
    return _new(out, (g,), lambda gg: (getitem(gg, key),), "scatter_add")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        outs = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            outs.append(getitem(g, tuple(idx)))
        return tuple(outs)

    return _new(data, tuple(tensors), vjp, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    sa, sb = a.shape, b.shape

    def vjp(g):
        ga = sum_to(matmul(g, swapaxes(b, -1, -2)), sa) if a.requires_grad else None
        gb = sum_to(matmul(swapaxes(a, -1, -2), g), sb) if b.requires_grad else None
        return ga, gb

    return _new(np.matmul(a.data, b.data), (a, b), vjp, "matmul")


def logsumexp(a, axis: int, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp; the shift is treated as a constant."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = sub(a, Tensor(m))
    out = add(log(tsum(exp(shifted), axis=axis, keepdims=True)), Tensor(m))
    if not keepdims:
        out = reshape(out, tuple(s for i, s in enumerate(out.shape) if i != axis % a.ndim))
    return out


# ---------------------------------------------------------------------------
# sliding windows (the building block for convolutions and pooling)
# ---------------------------------------------------------------------------

def conv_out_length(length: int, kernel: int, stride: int = 1, dilation: int = 1) -> int:
    return (length - dilation * (kernel - 1) - 1) // stride + 1


def unfold1d(x, kernel: int, stride: int = 1, dilation: int = 1) -> Tensor:
    """(B, C, L) -> (B, C, kernel, Lout) tensor of sliding windows."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"unfold1d expects (B, C, L), got {x.shape}")
    B, C, L = x.shape
    lout = conv_out_length(L, kernel, stride, dilation)
    if lout < 1:
        raise ShapeError(f"window (kernel={kernel}, dilation={dilation}) does not fit length {L}")
    s0, s1, s2 = x.data.strides
    view = np.lib.stride_tricks.as_strided(
        x.data, shape=(B, C, kernel, lout), strides=(s0, s1, s2 * dilation, s2 * stride), writeable=False
    )
    data = np.ascontiguousarray(view)

    def vjp(g):
        return (fold1d(g, L, stride, dilation),)

    return _new(data, (x,), vjp, "unfold1d")


def fold1d(cols, length: int, stride: int = 1, dilation: int = 1) -> Tensor:
    """Adjoint of :func:`unfold1d`: (B, C, kernel, Lout) -> (B, C, length), overlaps summed."""
    cols = as_tensor(cols)
    B, C, kernel, lout = cols.shape
    span = stride * (lout - 1) + 1
    if dilation * (kernel - 1) + span > length:
        raise ShapeError(f"fold1d target length {length} too short for {cols.shape}")
    out = np.zeros((B, C, length), dtype=cols.data.dtype)
    for j in range(kernel):
        start = j * dilation
        out[:, :, start:start + span:stride] += cols.data[:, :, j, :]

    def vjp(g):
        return (unfold_crop(g, kernel, stride, dilation, lout),)

    return _new(out, (cols,), vjp, "fold1d")


def unfold_crop(x, kernel, stride, dilation, lout) -> Tensor:
    """Unfold keeping exactly ``lout`` windows (the target may carry padding)."""
    x = as_tensor(x)
    L = x.shape[-1]
    needed = dilation * (kernel - 1) + stride * (lout - 1) + 1
    if needed < L:
        x = getitem(x, (slice(None), slice(None), slice(0, needed)))
    return unfold1d(x, kernel, stride, dilation)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs, create_graph: bool = False, grad_output=None):
    """Gradients of a scalar ``output`` with respect to ``inputs``.

    ``inputs`` may be a single tensor, a sequence, or a dict of tensors; the
    result mirrors that structure.  Inputs that do not influence ``output``
    receive zero gradients.  With ``create_graph=True`` the returned tensors
    are graph nodes and can be differentiated again.
    """
    if isinstance(inputs, dict):
        keys = list(inputs)
        res = grad(output, [inputs[k] for k in keys], create_graph, grad_output)
        return dict(zip(keys, res))
    single = isinstance(inputs, Tensor)
    targets = [inputs] if single else list(inputs)

    if grad_output is None:
        if output.size != 1:
            raise GradError(f"grad needs a scalar output, got shape {output.shape}")
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = as_tensor(grad_output)

    wanted = {id(t): t for t in targets}
    found: dict[int, Tensor] = {}
    if output.requires_grad:
        order = _toposort(output)
        acc: dict[int, Tensor] = {id(output): seed}
        with enable_grad(create_graph):
            for node in reversed(order):
                g = acc.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in wanted:
                    found[id(node)] = g
                if node.vjp is None:
                    continue
                pgs = node.vjp(g)
                for p, pg in zip(node.parents, pgs):
                    if pg is None or not p.requires_grad:
                        continue
                    key = id(p)
                    prev = acc.get(key)
                    acc[key] = pg if prev is None else add(prev, pg)
    out = []
    for t in targets:
        g = found.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out[0] if single else out


def backward(loss: Tensor, wrt, create_graph: bool = False):
    """Alias of :func:`grad` matching the naming used elsewhere in the package."""
    return grad(loss, wrt, create_graph=create_graph)


def dump_graph(root: Tensor) -> str:
    """Text listing of the graph under ``root``, one node per line."""
    lines = []
    for node in _toposort(root):
        parents = ",".join(str(p.node_id) for p in node.parents)
        lines.append(f"#{node.node_id} {node.op} shape={node.shape} parents=[{parents}]")
    return "\n".join(lines)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=DEFAULT_DTYPE), requires_grad=requires_grad)


def tensors_finite(ts: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(t.data)) for t in ts)
