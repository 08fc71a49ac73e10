"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a float array and, while gradients are enabled, records the
operation and parent tensors that produced it. ``backward(loss)`` walks the
recorded graph once in reverse topological order and accumulates gradients
into every tensor that requires them. Repeated backward calls accumulate
(callers zero gradients between optimization steps).

64-bit floats are the default; float32 is supported for speed at the cost
of gradient-check tolerance. Dense arrays only. Broadcasting is supported
for elementwise add/mul in the numpy sense (gradients are summed back over
broadcast axes).
"""

from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense n-dimensional value, optionally a node in the backward graph.

    Attributes:
        data: numpy float array holding the value.
        grad: accumulated gradient of the same shape, or None.
        requires_grad: whether backward should populate ``grad``.
        op: name of the operation that produced this tensor ("leaf" for
            inputs and parameters).
        parents: tensors this one was computed from.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def tensor(data, dtype=None) -> Tensor:
    """Wrap data as a constant (non-differentiable) tensor."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return Tensor(arr)

def parameter(data) -> Tensor:
    """Wrap data as a learnable parameter (requires_grad=True)."""
    t = Tensor(np.array(data))
    t.requires_grad = True
    return t


def make_op(data, parents, backward_fn, op_name) -> Tensor:
    """Create a graph node; the hook for fused primitives defined elsewhere.

    ``backward_fn`` receives the output gradient and must accumulate into
    each parent that requires a gradient (via ``Tensor.accumulate_grad``).
    """
    out = Tensor(data, op=op_name)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate gradients of everything reachable from the scalar ``loss``.

    Each graph node is visited exactly once, in reverse topological order.
    Without zeroing in between, repeated calls accumulate into ``grad``.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = {id(loss)}
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited and (p.requires_grad or p._backward is not None):
                visited.add(id(p))
                stack.append((p, False))
    loss.accumulate_grad(np.ones((), dtype=loss.data.dtype))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` back down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}") from None

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return make_op(data, (a, b), _bw, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}") from None

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return make_op(data, (a, b), _bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    def _bw(g):
        x.accumulate_grad(g * c)

    return make_op(x.data * c, (x,), _bw, "scale")


def shift(x: Tensor, c: float) -> Tensor:
    def _bw(g):
        x.accumulate_grad(g)

    return make_op(x.data + c, (x,), _bw, "shift")


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def _bw(g):
        x.accumulate_grad(g * (1.0 - out_data * out_data))

    return make_op(out_data, (x,), _bw, "tanh")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """sigmoid(x) = exp(-softplus(-x)); saturates cleanly at both tails."""
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x: Tensor) -> Tensor:
    out_data = stable_sigmoid(x.data)

    def _bw(g):
        x.accumulate_grad(g * out_data * (1.0 - out_data))

    return make_op(out_data, (x,), _bw, "sigmoid")


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def _bw(g):
        x.accumulate_grad(g * out_data)

    return make_op(out_data, (x,), _bw, "exp")


def log(x: Tensor) -> Tensor:
    def _bw(g):
        x.accumulate_grad(g / x.data)

    return make_op(np.log(x.data), (x,), _bw, "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero where the clamp is active."""
    inside = (x.data > lo) & (x.data < hi)

    def _bw(g):
        x.accumulate_grad(g * inside)

    return make_op(np.clip(x.data, lo, hi), (x,), _bw, "clip")


POINTWISE_OPS = {"tanh": tanh, "sigmoid": sigmoid, "add": add, "mul": mul, "scale": scale}


def pointwise(op_name: str, *args):
    """Dispatch an elementwise operation by name."""
    if op_name not in POINTWISE_OPS:
        raise ValueError(f"unknown pointwise op {op_name!r}; have {sorted(POINTWISE_OPS)}")
    return POINTWISE_OPS[op_name](*args)


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return make_op(data, (a, b), _bw, "matmul")


def _parse_contract(spec: str, a: Tensor, b: Tensor):
    s = spec.replace(" ", "")
    if "->" not in s:
        raise ValueError(f"contract spec {spec!r} must contain '->'")
    lhs, out = s.split("->", 1)
    parts = lhs.split(",")
    if len(parts) != 2:
        raise ValueError(f"contract spec {spec!r} must name exactly two operands")
    la, lb = parts
    for labels, t, side in ((la, a, "first"), (lb, b, "second")):
        if not labels.isalpha():
            raise ValueError(f"contract spec {spec!r}: labels must be letters")
        if len(labels) != t.ndim:
            raise ValueError(
                f"contract spec {spec!r}: {side} operand has {t.ndim} axes, spec names {len(labels)}"
            )
        if len(set(labels)) != len(labels):
            raise ValueError(f"contract spec {spec!r}: repeated label within one operand")
    if len(set(out)) != len(out) or not set(out) <= set(la) | set(lb):
        raise ValueError(f"contract spec {spec!r}: bad output labels")
    if not set(la) <= set(out) | set(lb) or not set(lb) <= set(out) | set(la):
        raise ValueError(f"contract spec {spec!r}: label summed over a single operand")
    sizes = {}
    for labels, t in ((la, a), (lb, b)):
        for lab, extent in zip(labels, t.shape):
            if sizes.setdefault(lab, extent) != extent:
                raise ValueError(
                    f"contract axis mismatch for label {lab!r}: {sizes[lab]} vs {extent} in spec {spec!r}"
                )
    return la, lb, out


def contract(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand Einstein contraction, e.g. ``contract("bnh,bcnm->bchm", h, alpha)``.

    Shared labels not named in the output are summed. Used to batch the
    attention score and context computations over (batch, code, position,
    synonym) at once instead of looping per code and synonym.
    """
    la, lb, out = _parse_contract(spec, a, b)
    # optimized einsum may hand back a stride-permuted view; downstream
    # summation order (and hence bitwise reproducibility) depends on layout
    data = np.ascontiguousarray(
        np.einsum(f"{la},{lb}->{out}", a.data, b.data, optimize=True))

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(np.einsum(f"{out},{lb}->{la}", g, b.data, optimize=True))
        if b.requires_grad:
            b.accumulate_grad(np.einsum(f"{out},{la}->{lb}", g, a.data, optimize=True))

    return make_op(data, (a, b), _bw, "contract")


# -- shape manipulation ---------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def _bw(g):
        x.accumulate_grad(g.reshape(x.shape))

    return make_op(x.data.reshape(shape), (x,), _bw, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def _bw(g):
        x.accumulate_grad(g.transpose(inv))

    return make_op(x.data.transpose(axes), (x,), _bw, "transpose")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) along one axis; backward zero-pads."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def _bw(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[index] += g

    return make_op(x.data[index], (x,), _bw, "slice")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of empty list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, s, e in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(s, e)
                t.accumulate_grad(g[tuple(index)])

    return make_op(data, tuple(tensors), _bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("stack of empty list")
    data = np.stack([t.data for t in tensors], axis=axis)

    def _bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(np.take(g, i, axis=axis))

    return make_op(data, tuple(tensors), _bw, "stack")


# -- reductions -----------------------------------------------------------


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.shape))
        elif keepdims:
            x.accumulate_grad(np.broadcast_to(g, x.shape))
        else:
            x.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return make_op(data, (x,), _bw, "sum")


def mean(x: Tensor) -> Tensor:
    """Mean over all elements."""
    return scale(reduce_sum(x), 1.0 / x.size)


def reduce_max(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; gradient routes to the first (lowest-index) argmax."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    data = np.take_along_axis(x.data, idx, axis=axis)

    def _bw(g):
        buf = np.zeros_like(x.data)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(buf, idx, g_exp, axis=axis)
        x.accumulate_grad(buf)

    out_data = data if keepdims else np.squeeze(data, axis=axis)
    return make_op(out_data, (x,), _bw, "max")


def maxpool(tensors) -> Tensor:
    """Elementwise maximum of same-shaped tensors.

    Gradient routes only to the argmax input per coordinate; ties break to
    the lowest list index. ``maxpool([v]) == v``.
    """
    tensors = list(tensors)
    if not tensors:
        raise ValueError("maxpool of empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"maxpool shape mismatch: {shape} vs {t.shape}")
    return reduce_max(stack(tensors, axis=0), axis=0)


# -- softmax / dropout ----------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction) along ``axis``."""
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x.accumulate_grad(out_data * (g - inner))

    return make_op(out_data, (x,), _bw, "softmax")


def dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity in eval mode and at p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.uniform(size=x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def _bw(g):
        x.accumulate_grad(g * keep)

    return make_op(x.data * keep, (x,), _bw, "dropout")


# -- table lookup ---------------------------------------------------------


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer ids; backward scatter-adds."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def _bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table.accumulate_grad(buf)

    return make_op(data, (table,), _bw, "embedding")
