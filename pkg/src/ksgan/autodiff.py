"""Tape-based reverse-mode automatic differentiation on float64 numpy arrays.

Every operation returns a :class:`Var`.  When any input requires a gradient the
result keeps references to its inputs together with a vector-Jacobian product
closure.  Those closures are themselves written in terms of ``Var`` operations,
so a backward pass run with ``create_graph=True`` is recorded like any other
computation and can be differentiated again (double backprop).

Node ids come from a global counter, so a node's inputs always have smaller ids
than the node; replaying nodes by decreasing id is a valid reverse topological
order.  There is no persistent graph object: a graph lives exactly as long as
the ``Var`` objects that reference it.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

Tensor = np.ndarray

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Var:
    __slots__ = ("value", "requires_grad", "_parents", "_vjp", "id")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Var, ...] = ()
        self._vjp: Callable | None = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> Var:
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> Tensor:
        return self.value

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Var({self.value!r}{flag})"

    def __len__(self):
        return len(self.value)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False) -> Var:
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> Var:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Var:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _record(value, parents: Sequence[Var], vjp: Callable) -> Var:
    out = Var(value)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _broadcast_shape(a: Var, b: Var, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting; gradients are summed back)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "add")
    return _record(a.value + b.value, (a, b),
                   lambda g, need: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "sub")
    return _record(a.value - b.value, (a, b),
                   lambda g, need: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "mul")
    return _record(a.value * b.value, (a, b),
                   lambda g, need: (sum_to(mul(g, b), a.shape) if need[0] else None,
                                    sum_to(mul(g, a), b.shape) if need[1] else None))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "div")
    out_value = a.value / b.value

    def vjp(g, need):
        ga = div(g, b)
        return sum_to(ga, a.shape), sum_to(neg(mul(ga, div(a, b))), b.shape)

    return _record(out_value, (a, b), vjp)


def neg(a) -> Var:
    a = as_var(a)
    return _record(-a.value, (a,), lambda g, need: (neg(g),))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _record(a.value @ b.value, (a, b),
                   lambda g, need: (matmul(g, transpose(b)) if need[0] else None,
                                    matmul(transpose(a), g) if need[1] else None))


def transpose(a) -> Var:
    a = as_var(a)
    return _record(a.value.T, (a,), lambda g, need: (transpose(g),))


def reshape(a, shape) -> Var:
    a = as_var(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _record(value, (a,), lambda g, need: (reshape(g, a.shape),))


def broadcast_to(a, shape) -> Var:
    a = as_var(a)
    shape = tuple(shape)
    try:
        value = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None
    return _record(value, (a,), lambda g, need: (sum_to(g, a.shape),))


def sum_to(a, shape) -> Var:
    """Sum ``a`` down to ``shape`` (the adjoint of broadcasting)."""
    a = as_var(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and a.shape[i + lead] != 1)
    value = a.value.sum(axis=axes, keepdims=True).reshape(shape)
    return _record(value, (a,), lambda g, need: (broadcast_to(g, a.shape),))


def concat(parts: Sequence, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g, need):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _record(value, parts, vjp)


def getitem(a, idx) -> Var:
    a = as_var(a)
    return _record(a.value[idx], (a,), lambda g, need: (scatter(g, a.shape, idx),))


def scatter(a, shape, idx) -> Var:
    """Place ``a`` into a zero array of ``shape`` at ``idx`` (the adjoint of indexing)."""
    a = as_var(a)
    value = np.zeros(shape)
    np.add.at(value, idx, a.value)
    return _record(value, (a,), lambda g, need: (getitem(g, idx),))


def detach(a) -> Var:
    a = as_var(a)
    return Var(a.value)


# ---------------------------------------------------------------------------
# reductions


def _expand_reduced(g: Var, shape, axis, keepdims) -> Var:
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = sorted(ax % len(shape) for ax in axes)
        kept = list(g.shape)
        for ax in axes:
            kept.insert(ax, 1)
        g = reshape(g, kept)
    elif axis is None:
        g = reshape(g, (1,) * len(shape))
    return broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False) -> Var:  # noqa: A001
    a = as_var(a)
    return _record(a.value.sum(axis=axis, keepdims=keepdims), (a,),
                   lambda g, need: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return _record(a.value.mean(axis=axis, keepdims=keepdims), (a,),
                   lambda g, need: (_expand_reduced(g, a.shape, axis, keepdims) * (1.0 / count),))


def l2_norm_sq(a, axis=-1) -> Var:
    """Squared Euclidean norm along ``axis`` (reduced)."""
    a = as_var(a)
    value = np.square(a.value).sum(axis=axis)
    return _record(value, (a,),
                   lambda g, need: (mul(_expand_reduced(g, a.shape, axis, False), mul(a, 2.0)),))


# ---------------------------------------------------------------------------
# elementwise unary ops


def abs(a) -> Var:  # noqa: A001
    # subgradient 0 at the kink
    a = as_var(a)
    sign = np.sign(a.value)
    return _record(np.abs(a.value), (a,), lambda g, need: (mul(g, sign),))


def exp(a) -> Var:
    a = as_var(a)
    out = _record(np.exp(a.value), (a,), lambda g, need: (mul(g, out),))
    return out


def log(a) -> Var:
    a = as_var(a)
    return _record(np.log(a.value), (a,), lambda g, need: (div(g, a),))


def sqrt(a) -> Var:
    a = as_var(a)
    out = _record(np.sqrt(a.value), (a,), lambda g, need: (div(g, mul(out, 2.0)),))
    return out


def square(a) -> Var:
    a = as_var(a)
    return _record(np.square(a.value), (a,), lambda g, need: (mul(g, mul(a, 2.0)),))


def relu(a) -> Var:
    a = as_var(a)
    mask = (a.value > 0).astype(np.float64)
    return _record(np.maximum(a.value, 0.0), (a,), lambda g, need: (mul(g, mask),))


def leaky_relu(a, slope: float = 0.2) -> Var:
    a = as_var(a)
    # branch-free: scale = slope + (1 - slope) * [x > 0]
    scale = (a.value > 0).astype(np.float64)
    scale *= 1.0 - slope
    scale += slope
    return _record(a.value * scale, (a,), lambda g, need: (mul(g, scale),))


def sigmoid(a) -> Var:
    a = as_var(a)
    x = a.value
    value = np.exp(-np.logaddexp(0.0, -x))
    out = _record(value, (a,), lambda g, need: (mul(g, mul(out, sub(1.0, out))),))
    return out


def softplus(a) -> Var:
    """``log(1 + exp(a))`` evaluated without overflow."""
    a = as_var(a)
    return _record(np.logaddexp(0.0, a.value), (a,), lambda g, need: (mul(g, sigmoid(a)),))


# ---------------------------------------------------------------------------
# straight-through indicator


def indicator_ste(c, lam, clip: float | None = None) -> Var:
    """Hard indicator ``1[c <= lam]`` with a pass-through backward pass.

    The backward pass treats the op as the linear map ``lam - c``: the
    incoming gradient reaches ``c`` negated and ``lam`` unchanged.  With
    ``clip`` set, the surrogate is zeroed where ``|c - lam| > clip``.
    """
    c, lam = as_var(c), as_var(lam)
    _broadcast_shape(c, lam, "indicator_ste")
    value = (c.value <= lam.value).astype(np.float64)
    if clip is None:
        window = None
    else:
        window = (np.abs(c.value - lam.value) <= clip).astype(np.float64)

    def vjp(g, need):
        if window is not None:
            g = mul(g, window)
        return sum_to(neg(g), c.shape), sum_to(g, lam.shape)

    return _record(value, (c, lam), vjp)


def indicator_smooth(c, lam, tau: float = 0.1) -> Var:
    """Smooth stand-in for ``1[c <= lam]``: ``sigmoid((lam - c) / tau)``."""
    return sigmoid(div(sub(lam, c), tau))


# ---------------------------------------------------------------------------
# reverse pass


def grad(output: Var, inputs: Iterable[Var], create_graph: bool = False) -> list:
    """Gradients of a scalar ``output`` with respect to each of ``inputs``.

    Returns numpy arrays, or ``Var`` objects recorded on the graph when
    ``create_graph`` is true.  Inputs that ``output`` does not depend on get a
    zero gradient of their own shape.
    """
    inputs = list(inputs)
    if output.size != 1:
        raise ValueError(f"grad: output must be a scalar, got shape {output.shape}")

    # Collect the recorded subgraph below `output`.
    nodes: dict[int, Var] = {}
    stack = [output]
    while stack:
        v = stack.pop()
        if v.id in nodes or not v.requires_grad:
            continue
        nodes[v.id] = v
        stack.extend(v._parents)

    # Only nodes downstream of a requested input carry useful gradient.
    wanted = {v.id for v in inputs}
    order = sorted(nodes)
    needed: set[int] = set()
    for i in order:
        if i in wanted or any(p.id in needed for p in nodes[i]._parents):
            needed.add(i)

    grads: dict[int, Var] = {}
    ctx = _noop() if create_graph else no_grad()
    with ctx:
        if output.id in needed:
            grads[output.id] = Var(np.ones_like(output.value))
        for i in reversed(order):
            node = nodes[i]
            g = grads.get(i)
            if g is None or node._vjp is None or i not in needed:
                continue
            if not any(p.id in needed for p in node._parents):
                continue
            pgrads = node._vjp(g, tuple(p.id in needed for p in node._parents))
            for p, pg in zip(node._parents, pgrads):
                if pg is None or p.id not in needed:
                    continue
                prev = grads.get(p.id)
                grads[p.id] = pg if prev is None else add(prev, pg)

    out = []
    for v in inputs:
        g = grads.get(v.id)
        if g is None:
            g = Var(np.zeros_like(v.value))
        out.append(g if create_graph else g.value)
    return out


@contextmanager
def _noop():
    yield
