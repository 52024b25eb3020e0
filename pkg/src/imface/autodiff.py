"""Reverse-mode automatic differentiation over numpy arrays.

Every operation here has a vector-Jacobian product that is itself built out
of these same operations, so the backward pass of one gradient computation
is an ordinary differentiable graph.  That is what makes second derivatives
(gradients of input-gradients with respect to network weights) possible
with a single engine.

All math is done in float64.  The op functions accept plain numpy arrays as
well as :class:`Node` objects; when no Node is involved they fall through
to numpy directly, so model code written against these functions runs both
in "recording" mode (for training) and in plain-array mode (for cheap bulk
evaluation such as grid sampling).
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable, Sequence

import numpy as np

_COUNTER = itertools.count()

# Stack of active tapes; ops record onto the innermost one.
_TAPES: list["Tape"] = []

# While False, every op unwraps Node inputs and returns plain arrays; used by
# backward passes that will not be differentiated again.
_BUILD_GRAPH = [True]


class _NoGraph:
    def __enter__(self):
        _BUILD_GRAPH.append(False)
        return self

    def __exit__(self, exc_type, exc, tb):
        _BUILD_GRAPH.pop()
        return False


class Tape:
    """Owns the operation records of one forward (and backward) evaluation.

    Nodes are appended in creation order, which is a topological order of
    the graph.  The tape mainly manages lifetime: dropping it releases all
    intermediate arrays of a training step.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self.nodes)


class Node:
    """One value in the computation graph.

    ``vjp`` maps the cotangent of this node to cotangent contributions for
    each parent, building new graph nodes as it goes.
    """

    __slots__ = ("value", "parents", "vjp", "index")

    def __init__(self, value, parents: tuple = (), vjp: Callable | None = None):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.index = next(_COUNTER)
        if _TAPES:
            _TAPES[-1].nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(shape={self.value.shape}, index={self.index})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def leaf(value) -> Node:
    """Wrap an array as a differentiable leaf of the graph."""
    return Node(np.asarray(value, dtype=np.float64))


def constant(value) -> Node:
    """A node that never receives gradient (no parents, no vjp)."""
    return Node(np.asarray(value, dtype=np.float64))


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _is_node(*xs) -> bool:
    if not _BUILD_GRAPH[-1]:
        return False
    return any(isinstance(x, Node) for x in xs)


def value_of(x):
    """Underlying numpy array of a Node, or the input unchanged."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# broadcasting helpers


def _sum_to_shape(g, shape):
    """Reduce gradient ``g`` down to ``shape`` by summing broadcast axes."""
    g_shape = g.shape if isinstance(g, Node) else np.shape(g)
    if tuple(g_shape) == tuple(shape):
        return g
    ndim_extra = len(g_shape) - len(shape)
    if ndim_extra > 0:
        g = sum_(g, axis=tuple(range(ndim_extra)))
        g_shape = g.shape if isinstance(g, Node) else np.shape(g)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g_shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    if not _is_node(a, b):
        return np.add(value_of(a), value_of(b))
    a, b = as_node(a), as_node(b)
    out = a.value + b.value
    return Node(out, (a, b), lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)))


def sub(a, b):
    if not _is_node(a, b):
        return np.subtract(value_of(a), value_of(b))
    a, b = as_node(a), as_node(b)
    out = a.value - b.value
    return Node(out, (a, b), lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(neg(g), b.shape)))


def mul(a, b):
    if not _is_node(a, b):
        return np.multiply(value_of(a), value_of(b))
    a, b = as_node(a), as_node(b)
    out = a.value * b.value
    return Node(out, (a, b), lambda g: (_sum_to_shape(mul(g, b), a.shape), _sum_to_shape(mul(g, a), b.shape)))


def div(a, b):
    if not _is_node(a, b):
        return np.divide(value_of(a), value_of(b))
    a, b = as_node(a), as_node(b)
    out = a.value / b.value

    def vjp(g):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

    return Node(out, (a, b), vjp)


def neg(a):
    if not _is_node(a):
        return np.negative(value_of(a))
    return Node(-a.value, (a,), lambda g: (neg(g),))


def sine(a):
    if not _is_node(a):
        return np.sin(value_of(a))
    return Node(np.sin(a.value), (a,), lambda g: (mul(g, cosine(a)),))


def cosine(a):
    if not _is_node(a):
        return np.cos(value_of(a))
    return Node(np.cos(a.value), (a,), lambda g: (neg(mul(g, sine(a))),))


def exp(a):
    if not _is_node(a):
        return np.exp(value_of(a))
    # the vjp rebuilds exp(a) instead of capturing the output node, keeping
    # the graph cycle-free so tapes die by reference counting alone
    return Node(np.exp(a.value), (a,), lambda g: (mul(g, exp(a)),))


def sqrt(a):
    if not _is_node(a):
        return np.sqrt(value_of(a))
    return Node(np.sqrt(a.value), (a,), lambda g: (div(g, mul(2.0, sqrt(a))),))


def absolute(a):
    if not _is_node(a):
        return np.abs(value_of(a))
    sign = np.sign(a.value)
    return Node(np.abs(a.value), (a,), lambda g: (mul(g, sign),))


def relu(a):
    if not _is_node(a):
        return np.maximum(value_of(a), 0.0)
    mask = (a.value > 0.0).astype(np.float64)
    return Node(a.value * mask, (a,), lambda g: (mul(g, mask),))


def where(cond, a, b):
    """Select per element; ``cond`` is data, never differentiated through."""
    cond = value_of(cond).astype(bool)
    if not _is_node(a, b):
        return np.where(cond, value_of(a), value_of(b))
    a, b = as_node(a), as_node(b)
    out = np.where(cond, a.value, b.value)
    mask = cond.astype(np.float64)

    def vjp(g):
        return (_sum_to_shape(mul(g, mask), a.shape), _sum_to_shape(mul(g, 1.0 - mask), b.shape))

    return Node(out, (a, b), vjp)


def stop_gradient(a):
    """Value flows forward, gradient does not flow back."""
    return constant(value_of(a).copy()) if isinstance(a, Node) else np.asarray(a, dtype=np.float64)


def matmul(a, b):
    """Matrix product with numpy batch-dim broadcasting; operands must be >= 2-D."""
    if not _is_node(a, b):
        return np.matmul(value_of(a), value_of(b))
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    out = a.value @ b.value

    def vjp(g):
        ga = matmul(g, mat_t(b))
        gb = matmul(mat_t(a), g)
        return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

    return Node(out, (a, b), vjp)


def matvec(a, v):
    """``a @ v`` for a matrix (…, n, m) and vector (…, m) -> (…, n)."""
    if not _is_node(a, v):
        return np.matmul(value_of(a), value_of(v)[..., None])[..., 0]
    v2 = reshape(v, tuple(np.shape(value_of(v))) + (1,))
    return reshape(matmul(a, v2), np.shape(value_of(a))[:-1])


def mat_t(a):
    """Transpose of the last two axes."""
    if not _is_node(a):
        return np.swapaxes(value_of(a), -1, -2)
    return Node(np.swapaxes(a.value, -1, -2), (a,), lambda g: (mat_t(g),))


def transpose(a, axes):
    if not _is_node(a):
        return np.transpose(value_of(a), axes)
    inv = tuple(np.argsort(axes))
    return Node(np.transpose(a.value, axes), (a,), lambda g: (transpose(g, inv),))


def reshape(a, shape):
    if not _is_node(a):
        return np.reshape(value_of(a), shape)
    old = a.shape
    return Node(np.reshape(a.value, shape), (a,), lambda g: (reshape(g, old),))


def broadcast_to(a, shape):
    if not _is_node(a):
        return np.broadcast_to(value_of(a), shape).copy()
    old = a.shape
    return Node(np.broadcast_to(a.value, shape).copy(), (a,), lambda g: (_sum_to_shape(g, old),))


def sum_(a, axis=None, keepdims=False):
    if not _is_node(a):
        return np.sum(value_of(a), axis=axis, keepdims=keepdims)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)
    in_shape = a.shape

    if axis is None:
        kept = (1,) * len(in_shape)
    else:
        ax = (axis,) if np.isscalar(axis) else tuple(axis)
        ax = tuple(x % len(in_shape) for x in ax)
        kept = tuple(1 if i in ax else s for i, s in enumerate(in_shape))

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, in_shape),)

    return Node(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    n = value_of(a).size if axis is None else np.prod(
        [value_of(a).shape[x] for x in ((axis,) if np.isscalar(axis) else axis)]
    )
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def take(a, idx):
    """Basic (static) indexing/slicing."""
    if not _is_node(a):
        return value_of(a)[idx]
    out = a.value[idx]
    shape = a.shape

    def vjp(g):
        return (scatter(g, idx, shape),)

    return Node(out, (a,), vjp)


def scatter(g, idx, shape):
    """Adjoint of :func:`take`: place ``g`` into zeros of ``shape`` at ``idx``."""
    if not _is_node(g):
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, idx, value_of(g))
        return out
    out = np.zeros(shape, dtype=np.float64)
    np.add.at(out, idx, g.value)
    return Node(out, (g,), lambda gg: (take(gg, idx),))


def concat(parts: Sequence, axis=0):
    if not _is_node(*parts):
        return np.concatenate([value_of(p) for p in parts], axis=axis)
    parts = [as_node(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i in range(len(parts)):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(take(g, tuple(sl)))
        return tuple(grads)

    return Node(out, tuple(parts), vjp)


def stack(parts: Sequence, axis=0):
    if not _is_node(*parts):
        return np.stack([value_of(p) for p in parts], axis=axis)
    parts = [as_node(p) for p in parts]
    out = np.stack([p.value for p in parts], axis=axis)

    def vjp(g):
        grads = []
        for i in range(len(parts)):
            sl = [slice(None)] * out.ndim
            sl[axis] = i
            grads.append(take(g, tuple(sl)))
        return tuple(grads)

    return Node(out, tuple(parts), vjp)


# ---------------------------------------------------------------------------
# composites


def dot(a, b, axis=-1):
    return sum_(mul(a, b), axis=axis)


def l2norm(a, axis=-1):
    return sqrt(sum_(mul(a, a), axis=axis))


def softmax(a, axis=-1):
    """Shift-invariant softmax; the max subtraction is detached for stability."""
    shift = np.max(value_of(a), axis=axis, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# differentiation


def grad(output, wrt: Sequence[Node], build_graph: bool = True) -> list[Node]:
    """Reverse-mode gradients of a scalar ``output`` with respect to ``wrt``.

    Returns one Node per leaf, each the same shape as the leaf; leaves that
    the output does not depend on get zeros.  With ``build_graph`` (the
    default) the returned nodes are part of the graph and can be
    differentiated again; without it the backward pass runs on raw arrays,
    which is considerably cheaper for the final gradient of a training step.
    """
    if not isinstance(output, Node):
        raise TypeError("grad: output must be a Node")
    if np.size(output.value) != 1:
        raise ValueError(f"grad: output must be scalar, got shape {output.shape}")

    seed = np.ones_like(output.value)
    cotangents: dict[int, object] = {id(output): constant(seed) if build_graph else seed}
    heap = [(-output.index, id(output), output)]
    scheduled = {id(output)}
    results: dict[int, object] = {}
    wrt_ids = {id(w) for w in wrt}

    guard = _NoGraph() if not build_graph else None
    try:
        if guard is not None:
            guard.__enter__()
        while heap:
            _, nid, node = heapq.heappop(heap)
            g = cotangents.pop(nid)
            if nid in wrt_ids:
                results[nid] = g
            if node.vjp is None or not node.parents:
                continue
            contribs = node.vjp(g)
            for parent, contrib in zip(node.parents, contribs):
                if contrib is None:
                    continue
                pid = id(parent)
                if pid in cotangents:
                    cotangents[pid] = add(cotangents[pid], contrib)
                else:
                    cotangents[pid] = contrib if not build_graph else as_node(contrib)
                if pid not in scheduled:
                    scheduled.add(pid)
                    heapq.heappush(heap, (-parent.index, pid, parent))
    finally:
        if guard is not None:
            guard.__exit__(None, None, None)

    out = []
    for w in wrt:
        if id(w) in results:
            g = results[id(w)]
            out.append(g if isinstance(g, Node) else constant(g))
        else:
            out.append(constant(np.zeros_like(w.value)))
    return out


def input_gradient(f, p: Node) -> Node:
    """Spatial gradient of a field with respect to its input points, as graph nodes.

    ``f`` is either a callable evaluated at ``p`` or an already-built output
    node.  A non-scalar output is summed first, which gives per-row input
    gradients whenever each output row depends only on its own input row
    (true for all pointwise field evaluations here).  The result can be fed
    into further ops and differentiated again.
    """
    out = f(p) if callable(f) else f
    if np.size(out.value) != 1:
        out = sum_(out)
    (g,) = grad(out, [p])
    return g


def check_gradient(f, leaves: Sequence[Node], eps: float = 1e-6) -> float:
    """Max relative error of reverse-mode gradients vs central differences.

    ``f`` maps the leaves to a scalar Node.  The relative error denominator
    is max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    analytic = [g.value.copy() for g in grad(f(*leaves), list(leaves))]
    worst = 0.0
    for k, lf in enumerate(leaves):
        base = lf.value
        flat = base.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            step = eps * max(1.0, abs(orig))
            flat[i] = orig + step
            hi = float(value_of(f(*leaves)))
            flat[i] = orig - step
            lo = float(value_of(f(*leaves)))
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * step)
        a = analytic[k].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
        err = np.max(np.abs(a - num) / denom) if flat.size else 0.0
        worst = max(worst, float(err))
    return worst
