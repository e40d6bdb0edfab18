"""Dense reverse-mode autodiff over float64 numpy arrays.

Every adjoint rule is written in terms of the same recorded primitives, so
the backward pass can itself be recorded and differentiated again. That is
what lets the encoder optimize inputs against a function of a parameter
gradient.

    x = leaf(np.array([1.0, 2.0, 3.0]))
    (g,) = backward(sum(x * x), [x])      # -> [2, 4, 6]
"""

from __future__ import annotations

import contextlib
import warnings

import numpy as np

__all__ = [
    "DualTensor",
    "NonFiniteError",
    "ShapeError",
    "UnreachableWarning",
    "as_dual",
    "backward",
    "broadcast_to",
    "check_finite",
    "constant",
    "cosine_similarity",
    "div",
    "dot",
    "exp",
    "grad",
    "leaf",
    "log",
    "log_softmax",
    "matmul",
    "maximum_zero",
    "no_record",
    "norm",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "sqrt",
    "sum",
    "sum_to",
    "transpose",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class UnreachableWarning(UserWarning):
    """A requested input does not influence the differentiated scalar."""


_RECORDING = True


@contextlib.contextmanager
def no_record():
    """Build plain constants instead of graph nodes inside the block."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


class DualTensor:
    """A float64 array plus the graph node that produced it.

    ``parents`` and ``vjp`` are empty for leaves and constants. ``vjp`` maps
    the output adjoint (a DualTensor) to one adjoint per parent, built from
    primitives so that it records when recording is on.
    """

    __slots__ = ("value", "parents", "vjp", "requires_grad", "op")
    __array_priority__ = 100

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"DualTensor(op={self.op}, shape={self.shape})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def leaf(value) -> DualTensor:
    """A differentiable input."""
    return DualTensor(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> DualTensor:
    return DualTensor(value)


def as_dual(x) -> DualTensor:
    return x if isinstance(x, DualTensor) else DualTensor(x)


def _node(value, parents, vjp, op) -> DualTensor:
    if not _RECORDING or not any(p.requires_grad for p in parents):
        return DualTensor(value, op=op)
    return DualTensor(value, parents, vjp, requires_grad=True, op=op)


def check_finite(x, what: str = "tensor") -> None:
    v = x.value if isinstance(x, DualTensor) else np.asarray(x)
    if not np.all(np.isfinite(v)):
        bad = int(np.size(v) - np.count_nonzero(np.isfinite(v)))
        raise NonFiniteError(f"{what} has {bad} non-finite entries")


# -- shape plumbing ----------------------------------------------------------


def _broadcast_shape(op, a, b):
    if a.value.shape == b.value.shape:
        return a.value.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


def sum_to(x, shape) -> DualTensor:
    """Reduce ``x`` by summation down to a broadcast-compatible ``shape``."""
    x = as_dual(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    out = x.value.sum(axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    in_shape = x.shape
    return _node(out, (x,), lambda g: (broadcast_to(g, in_shape),), "sum_to")


def broadcast_to(x, shape) -> DualTensor:
    x = as_dual(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    out = np.broadcast_to(x.value, shape).copy()
    return _node(out, (x,), lambda g: (sum_to(g, in_shape),), "broadcast_to")


def reshape(x, shape) -> DualTensor:
    x = as_dual(x)
    in_shape = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (reshape(g, in_shape),), "reshape")


def transpose(x) -> DualTensor:
    x = as_dual(x)
    return _node(x.value.T.copy(), (x,), lambda g: (transpose(g),), "transpose")


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> DualTensor:
    a, b = as_dual(a), as_dual(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def sub(a, b) -> DualTensor:
    a, b = as_dual(a), as_dual(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(
        a.value - b.value, (a, b), lambda g: (sum_to(g, sa), sum_to(scale(g, -1.0), sb)), "sub"
    )


def mul(a, b) -> DualTensor:
    a, b = as_dual(a), as_dual(b)
    _broadcast_shape("mul", a, b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)),
        "mul",
    )


def div(a, b) -> DualTensor:
    a, b = as_dual(a), as_dual(b)
    _broadcast_shape("div", a, b)

    def vjp(g):
        ga = div(g, b)
        gb = scale(div(mul(ga, a), b), -1.0)
        return sum_to(ga, a.shape), sum_to(gb, b.shape)

    return _node(a.value / b.value, (a, b), vjp, "div")


def scale(a, c: float) -> DualTensor:
    a = as_dual(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (scale(g, c),), "scale")


def matmul(a, b) -> DualTensor:
    a, b = as_dual(a), as_dual(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return _node(
        a.value @ b.value,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        "matmul",
    )


# -- elementwise nonlinearities ----------------------------------------------


def maximum_zero(a) -> DualTensor:
    """max(a, 0). The subgradient at 0 is taken as 0."""
    a = as_dual(a)
    mask = constant((a.value > 0.0).astype(np.float64))
    return _node(np.maximum(a.value, 0.0), (a,), lambda g: (mul(g, mask),), "relu")


relu = maximum_zero


def exp(a) -> DualTensor:
    a = as_dual(a)
    out = None

    def vjp(g):
        return (mul(g, out),)

    out = _node(np.exp(a.value), (a,), vjp, "exp")
    return out


def log(a) -> DualTensor:
    a = as_dual(a)
    return _node(np.log(a.value), (a,), lambda g: (div(g, a),), "log")


def sqrt(a) -> DualTensor:
    a = as_dual(a)
    out = None

    def vjp(g):
        return (div(scale(g, 0.5), out),)

    out = _node(np.sqrt(a.value), (a,), vjp, "sqrt")
    return out


def sum(a, axis=None, keepdims: bool = False) -> DualTensor:  # noqa: A001
    a = as_dual(a)
    in_shape = a.shape
    out = a.value.sum(axis=axis, keepdims=True)
    kept_shape = out.shape
    if not keepdims:
        out = out.reshape(np.sum(a.value, axis=axis).shape)

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept_shape)
        return (broadcast_to(g, in_shape),)

    return _node(out, (a,), vjp, "sum")


# -- composites --------------------------------------------------------------


def log_softmax(a, axis: int = -1) -> DualTensor:
    a = as_dual(a)
    # the shift is a constant; log-softmax is invariant to it
    shift = constant(a.value.max(axis=axis, keepdims=True))
    z = sub(a, shift)
    return sub(z, log(sum(exp(z), axis=axis, keepdims=True)))


def softmax(a, axis: int = -1) -> DualTensor:
    return exp(log_softmax(a, axis=axis))


def dot(a, b) -> DualTensor:
    a, b = as_dual(a), as_dual(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} do not conform")
    return sum(mul(a, b))


def norm(a) -> DualTensor:
    """L2 norm of all entries."""
    return sqrt(dot(a, a))


def cosine_similarity(a_parts, b_parts) -> DualTensor:
    """Cosine between two vectors given as matching lists of pieces."""
    if len(a_parts) != len(b_parts):
        raise ShapeError(f"cosine: {len(a_parts)} vs {len(b_parts)} pieces")
    num = _total(dot(a, b) for a, b in zip(a_parts, b_parts))
    na = sqrt(_total(dot(a, a) for a in a_parts))
    nb = sqrt(_total(dot(b, b) for b in b_parts))
    return div(num, mul(na, nb))


def _total(terms) -> DualTensor:
    it = iter(terms)
    acc = next(it)
    for t in it:
        acc = add(acc, t)
    return acc


# -- reverse sweep -----------------------------------------------------------


def _topo_order(root: DualTensor) -> list:
    """Nodes reachable from ``root`` through differentiable edges, parents first."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: DualTensor, wrt, create_graph: bool = False) -> list:
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    With ``create_graph`` the returned gradients are DualTensors that stay
    connected to the graph, so a scalar built from them can be differentiated
    again. Otherwise plain float64 arrays are returned.

    An input that ``loss`` does not depend on gets a zero gradient and an
    :class:`UnreachableWarning`.
    """
    if not isinstance(loss, DualTensor) or loss.value.size != 1:
        shape = loss.shape if isinstance(loss, DualTensor) else type(loss).__name__
        raise ShapeError(f"backward needs a scalar loss, got {shape}")

    adj: dict = {}
    if loss.requires_grad:
        order = _topo_order(loss)
        # only nodes with a requested input among their ancestors need adjoints
        relevant = {id(w) for w in wrt}
        for node in order:
            if any(id(p) in relevant for p in node.parents):
                relevant.add(id(node))
        adj[id(loss)] = constant(np.ones_like(loss.value))
        ctx = contextlib.nullcontext() if create_graph else no_record()
        with ctx:
            for node in reversed(order):
                g = adj.get(id(node))
                if g is None or node.vjp is None or id(node) not in relevant:
                    continue
                for p, gp in zip(node.parents, node.vjp(g)):
                    if id(p) not in relevant:
                        continue
                    prev = adj.get(id(p))
                    adj[id(p)] = gp if prev is None else add(prev, gp)

    out = []
    for i, w in enumerate(wrt):
        g = adj.get(id(w))
        if g is None:
            warnings.warn(
                f"input {i} (shape {w.shape}) is unreachable from the loss; gradient is zero",
                UnreachableWarning,
                stacklevel=2,
            )
            g = constant(np.zeros_like(w.value))
        out.append(g if create_graph else g.value)
    return out


def grad(loss: DualTensor, wrt, create_graph: bool = False) -> list:
    return backward(loss, wrt, create_graph=create_graph)
