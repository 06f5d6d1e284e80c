"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array and remembers the primitive that
produced it. Calling :meth:`Tensor.backward` on a scalar walks the recorded
graph in reverse topological order, accumulating gradients on every leaf
created with ``requires_grad=True``. Gradients of a parameter used several
times accumulate by addition.

Broadcasting is deliberately restricted: elementwise primitives accept equal
shapes, a scalar on either side, or a vector applied row-wise to a matrix.
Anything else raises, which catches most shape bugs in the d+1-dimensional
bookkeeping this package does.

Every primitive checks its forward value for NaN/Inf and raises
:class:`NumericError` naming the offending operation, so numerical blowups
surface where they happen rather than as a garbage loss.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "NumericError",
    "no_grad",
    "as_tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "take_rows",
    "scale_rows",
    "rowdot",
    "tsum",
    "mean",
    "softmax_rows",
    "exp",
    "log",
    "sqrt",
    "cosh",
    "sinh",
    "arcosh",
    "tanh",
    "sigmoid",
    "relu",
    "leaky_relu",
    "clamp",
    "softplus",
    "backward",
]

# Backward of arcosh evaluates 1/sqrt(u^2 - 1) at u clamped to at least this,
# bounding the derivative near the branch point u = 1.
ARCOSH_GRAD_FLOOR = 1.0 + 1e-12


class NumericError(ArithmeticError):
    """A primitive produced a NaN or Inf forward value."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (pure forward math)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backward."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents", "_mark", "_gacc")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._backward = None
        self._parents = ()
        self._mark = 0
        self._gacc = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if self.data.shape != ():
            raise ValueError("backward requires a scalar tensor")
        for node, g in _run_backward(self):
            node.grad += g

    # -- operator sugar -------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    """Wrap a number or array as a constant Tensor (pass-through for Tensors)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def _node(out_data: np.ndarray, name: str, parents, backward_fn) -> Tensor:
    # a single reduction is much cheaper than isfinite().all(); any NaN/Inf
    # entry makes the sum non-finite (two infinities of opposite sign give NaN)
    if not math.isfinite(out_data.sum()):
        raise NumericError(f"non-finite values produced by '{name}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._mark = 0
    out._gacc = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


_mark_counter = 0


def _run_backward(root: Tensor):
    """Topologically order the graph under ``root`` and push gradients back.

    Yields (node, gradient) pairs for requires_grad leaves. Iterative DFS:
    session-length forward chains overflow the recursion limit otherwise.
    Gradient accumulators live on the nodes and are cleared as soon as a node
    is processed.
    """
    global _mark_counter
    _mark_counter += 1
    mark = _mark_counter

    topo: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if node._mark == mark:
            continue
        node._mark = mark
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p._mark != mark:
                stack.append((p, False))

    root._gacc = np.ones_like(root.data)
    for node in reversed(topo):
        g = node._gacc
        node._gacc = None
        if g is None:
            continue
        if node._backward is None:
            yield node, g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            acc = parent._gacc
            # rebind instead of += : backward closures may hand the same
            # array (or views of one) to several parents
            parent._gacc = pg if acc is None else acc + pg


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar loss keyed by id() of each requires_grad leaf.

    Leaves in the graph that the loss does not reach keep zero gradients;
    callers holding the leaf tensors read zeros from their ``.grad``.
    """
    if loss.data.shape != ():
        raise ValueError("backward requires a scalar tensor")
    out: dict[int, np.ndarray] = {}
    for node, g in _run_backward(loss):
        if id(node) in out:
            out[id(node)] = out[id(node)] + g
        else:
            out[id(node)] = g
    return out


# -- broadcasting helpers ----------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, name: str):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sa == () or sb == ():
        return
    # row-wise vector-to-matrix broadcast
    if len(sa) == 2 and sb == (sa[1],):
        return
    if len(sb) == 2 and sa == (sb[1],):
        return
    raise ValueError(f"shape mismatch in '{name}': {sa} vs {sb}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # (n, m) gradient reduced onto a row vector (m,)
    return grad.sum(axis=0)


# -- elementwise binary primitives ---------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def back(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _node(a.data + b.data, "add", (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def back(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _node(a.data - b.data, "sub", (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def back(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _node(a.data * b.data, "mul", (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")

    def back(g):
        return (
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        )

    return _node(a.data / b.data, "div", (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return ((a, -g),)

    return _node(-a.data, "neg", (a,), back)


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    da, db = a.data, b.data
    if da.ndim == 0 or db.ndim == 0:
        raise ValueError("matmul requires 1-D or 2-D operands")
    if da.shape[-1] != db.shape[0]:
        raise ValueError(f"shape mismatch in 'matmul': {da.shape} @ {db.shape}")

    if da.ndim == 2 and db.ndim == 2:

        def back(g):
            return ((a, g @ db.T), (b, da.T @ g))

    elif da.ndim == 2 and db.ndim == 1:

        def back(g):
            return ((a, np.outer(g, db)), (b, da.T @ g))

    elif da.ndim == 1 and db.ndim == 2:

        def back(g):
            return ((a, db @ g), (b, np.outer(da, g)))

    else:  # 1-D dot 1-D -> scalar

        def back(g):
            return ((a, g * db), (b, g * da))

    return _node(da @ db, "matmul", (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError("transpose requires a 2-D tensor")

    def back(g):
        return ((a, g.T),)

    return _node(a.data.T.copy(), "transpose", (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def back(g):
        return ((a, g.reshape(old)),)

    return _node(a.data.reshape(shape), "reshape", (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in ts])

    def back(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            slicer[axis] = slice(lo, hi)
            outs.append((t, g[tuple(slicer)]))
        return outs

    return _node(np.concatenate([t.data for t in ts], axis=axis), "concat", ts, back)


def take_rows(a, indices) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate gradients."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError("take_rows requires a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _node(a.data[idx], "take_rows", (a,), back)


def _getitem(a: Tensor, key) -> Tensor:
    out_data = a.data[key]
    if isinstance(out_data, np.ndarray):
        out_data = out_data.copy()

    def back(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        return ((a, ga),)

    return _node(out_data, "slice", (a,), back)


def scale_rows(a, s) -> Tensor:
    """Multiply row i of a 2-D tensor by s[i]; s has shape (n, 1)."""
    a, s = as_tensor(a), as_tensor(s)
    if a.data.ndim != 2 or s.data.shape != (a.data.shape[0], 1):
        raise ValueError(f"shape mismatch in 'scale_rows': {a.data.shape} vs {s.data.shape}")

    def back(g):
        return ((a, g * s.data), (s, (g * a.data).sum(axis=1, keepdims=True)))

    return _node(a.data * s.data, "scale_rows", (a, s), back)


def rowdot(a, b) -> Tensor:
    """Row-paired dot products of two equal-shape 2-D tensors, shape (n, 1)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ValueError(f"shape mismatch in 'rowdot': {a.data.shape} vs {b.data.shape}")

    def back(g):
        return ((a, g * b.data), (b, g * a.data))

    return _node((a.data * b.data).sum(axis=1, keepdims=True), "rowdot", (a, b), back)


# -- reductions ----------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(ge, a.data.shape).copy()),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return div(tsum(a, axis=axis, keepdims=keepdims), float(n))


def softmax_rows(a) -> Tensor:
    """Numerically stable softmax along the last axis of a 1-D or 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise ValueError("softmax_rows requires a 1-D or 2-D tensor")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((a, y * (g - dot)),)

    return _node(y, "softmax_rows", (a,), back)


# -- elementwise unary primitives -----------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def back(g):
        return ((a, g * y),)

    return _node(y, "exp", (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return ((a, g / a.data),)

    return _node(np.log(a.data), "log", (a,), back)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def back(g):
        return ((a, g / (2.0 * y)),)

    return _node(y, "sqrt", (a,), back)


def cosh(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return ((a, g * np.sinh(a.data)),)

    return _node(np.cosh(a.data), "cosh", (a,), back)


def sinh(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return ((a, g * np.cosh(a.data)),)

    return _node(np.sinh(a.data), "sinh", (a,), back)


def arcosh(a) -> Tensor:
    """Inverse hyperbolic cosine; forward floors its input at exactly 1.

    arcosh(1) = 0 exactly, so coincident points get distance 0. The backward
    pass evaluates 1/sqrt(u^2-1) at u floored to ARCOSH_GRAD_FLOOR, keeping
    the gradient finite at the branch point.
    """
    a = as_tensor(a)
    u = np.maximum(a.data, 1.0)

    def back(g):
        uc = np.maximum(a.data, ARCOSH_GRAD_FLOOR)
        return ((a, g / np.sqrt(uc * uc - 1.0)),)

    return _node(np.arccosh(u), "arcosh", (a,), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def back(g):
        return ((a, g * (1.0 - y * y)),)

    return _node(y, "tanh", (a,), back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        return ((a, g * y * (1.0 - y)),)

    return _node(y, "sigmoid", (a,), back)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return ((a, g * (a.data > 0)),)

    return _node(np.maximum(a.data, 0.0), "relu", (a,), back)


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return ((a, np.where(a.data > 0, g, alpha * g)),)

    return _node(np.where(a.data > 0, a.data, alpha * a.data), "leaky_relu", (a,), back)


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values to [lo, hi]. Entries outside the range get zero gradient."""
    a = as_tensor(a)
    if lo is None and hi is None:
        raise ValueError("clamp needs at least one bound")

    def back(g):
        mask = np.ones_like(a.data, dtype=bool)
        if lo is not None:
            mask &= a.data >= lo
        if hi is not None:
            mask &= a.data <= hi
        return ((a, g * mask),)

    return _node(np.clip(a.data, lo, hi), "clamp", (a,), back)


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed in overflow-safe form."""
    a = as_tensor(a)
    absval = add(relu(a), relu(neg(a)))
    return add(relu(a), log(add(1.0, exp(neg(absval)))))
