"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation returns a :class:`Node` that remembers its parents and a
backward rule.  Backward rules are themselves composed of these same
operations, so gradients returned by :func:`grad` are again differentiable
nodes; this is what makes gradient penalties on gradient norms (double
backprop) work without any special casing.

Broadcasting is deliberately restricted to the patterns the models need:
scalar-with-anything and bias vectors ``(N,)`` against batches ``(B, N)``.
"""

from __future__ import annotations

import numpy as np

LEAKY_RELU_SLOPE = 0.2


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        pretty = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {pretty}")


class GradError(ValueError):
    """Raised when grad() is called on a non-scalar output."""


class Node:
    """A value in the computation graph.

    ``parents`` and ``grad_fns`` are parallel tuples: ``grad_fns[i]`` maps the
    gradient of the graph output w.r.t. this node onto the contribution to
    ``parents[i]``'s gradient.  Leaf nodes have neither.
    """

    __slots__ = ("value", "parents", "grad_fns")

    def __init__(self, value, parents=(), grad_fns=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad_fns = tuple(grad_fns)

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={not self.parents})"

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


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x)


def zeros_like(x: Node) -> Node:
    return Node(np.zeros_like(x.value))


# ---------------------------------------------------------------------------
# broadcast bookkeeping
# ---------------------------------------------------------------------------

def _bcast_ok(op: str, sa, sb) -> None:
    """Allow equal shapes, scalar-vs-any, and (B, N) vs (N,)."""
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and sb == (sa[1],):
        return
    if len(sb) == 2 and sa == (sb[1],):
        return
    raise ShapeMismatchError(op, sa, sb)


def _reduce_to(g: Node, shape) -> Node:
    """Reduce a broadcast gradient back to the shape of its operand."""
    if g.shape == tuple(shape):
        return g
    if shape == ():
        return sum_all(g)
    if len(g.shape) == 2 and tuple(shape) == (g.shape[1],):
        return sum_axis(g, 0)
    raise ShapeMismatchError("reduce_to", g.shape, shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _bcast_ok("add", a.shape, b.shape)
    return Node(
        a.value + b.value,
        (a, b),
        (lambda g: _reduce_to(g, a.shape), lambda g: _reduce_to(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _bcast_ok("sub", a.shape, b.shape)
    return Node(
        a.value - b.value,
        (a, b),
        (lambda g: _reduce_to(g, a.shape),
         lambda g: _reduce_to(neg(g), b.shape)),
    )


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.value, (a,), (lambda g: neg(g),))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _bcast_ok("mul", a.shape, b.shape)
    return Node(
        a.value * b.value,
        (a, b),
        (lambda g: _reduce_to(mul(g, b), a.shape),
         lambda g: _reduce_to(mul(g, a), b.shape)),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _bcast_ok("div", a.shape, b.shape)
    return Node(
        a.value / b.value,
        (a, b),
        (lambda g: _reduce_to(div(g, b), a.shape),
         lambda g: _reduce_to(neg(div(mul(g, a), mul(b, b))), b.shape)),
    )


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    na, nb = len(a.shape), len(b.shape)
    if na == 0 or nb == 0 or na > 2 or nb > 2:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    value = a.value @ b.value

    if na == 2 and nb == 2:
        fns = (lambda g: matmul(g, transpose(b)),
               lambda g: matmul(transpose(a), g))
    elif na == 2 and nb == 1:
        # (m,k) @ (k,) -> (m,)
        fns = (lambda g: matmul(reshape(g, (a.shape[0], 1)),
                                reshape(b, (1, b.shape[0]))),
               lambda g: matmul(transpose(a), g))
    elif na == 1 and nb == 2:
        # (k,) @ (k,n) -> (n,)
        fns = (lambda g: matmul(b, g),
               lambda g: matmul(reshape(a, (a.shape[0], 1)),
                                reshape(g, (1, b.shape[1]))))
    else:
        # (k,) @ (k,) -> scalar
        fns = (lambda g: mul(g, b), lambda g: mul(g, a))
    return Node(value, (a, b), fns)


def transpose(a) -> Node:
    a = as_node(a)
    if len(a.shape) != 2:
        raise ShapeMismatchError("transpose", a.shape)
    return Node(a.value.T.copy(), (a,), (lambda g: transpose(g),))


def reshape(a, shape) -> Node:
    a = as_node(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise ShapeMismatchError("reshape", a.shape, shape)
    old = a.shape
    return Node(a.value.reshape(shape), (a,), (lambda g: reshape(g, old),))


# ---------------------------------------------------------------------------
# reductions and their inverses
# ---------------------------------------------------------------------------

def sum_all(a) -> Node:
    a = as_node(a)
    shape = a.shape
    return Node(a.value.sum(), (a,), (lambda g: _expand(g, shape),))


def _expand(g: Node, shape) -> Node:
    """Broadcast a scalar node to `shape`; adjoint of sum_all."""
    shape = tuple(shape)
    return Node(np.broadcast_to(g.value, shape).copy(), (g,),
                (lambda h: sum_all(h),))


def sum_axis(a, axis: int) -> Node:
    a = as_node(a)
    if len(a.shape) != 2 or axis not in (0, 1):
        raise ShapeMismatchError("sum_axis", a.shape)
    shape = a.shape
    return Node(a.value.sum(axis=axis), (a,),
                (lambda g: _expand_axis(g, axis, shape),))


def _expand_axis(g: Node, axis: int, shape) -> Node:
    """Broadcast a 1-D node along `axis` of a 2-D shape; adjoint of sum_axis."""
    shape = tuple(shape)
    if axis == 0:
        value = np.broadcast_to(g.value, shape).copy()
    else:
        value = np.broadcast_to(g.value[:, None], shape).copy()
    return Node(value, (g,), (lambda h: sum_axis(h, axis),))


def mean_all(a) -> Node:
    a = as_node(a)
    return mul(sum_all(a), 1.0 / a.value.size)


def mean_axis(a, axis: int) -> Node:
    a = as_node(a)
    return mul(sum_axis(a, axis), 1.0 / a.shape[axis])


# aliases matching the registered op names
sum = sum_all  # noqa: A001 - deliberate module-level alias
mean = mean_all


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Node:
    a = as_node(a)
    out = Node(np.exp(a.value), (a,), ())
    out.grad_fns = (lambda g: mul(g, out),)
    return out


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), (a,), (lambda g: div(g, a),))


def sqrt(a) -> Node:
    a = as_node(a)
    out = Node(np.sqrt(a.value), (a,), ())
    out.grad_fns = (lambda g: div(g, mul(2.0, out)),)
    return out


def tanh(a) -> Node:
    a = as_node(a)
    out = Node(np.tanh(a.value), (a,), ())
    out.grad_fns = (lambda g: mul(g, sub(1.0, mul(out, out))),)
    return out


def sigmoid(a) -> Node:
    a = as_node(a)
    v = a.value
    val = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Node(val, (a,), ())
    out.grad_fns = (lambda g: mul(g, mul(out, sub(1.0, out))),)
    return out


def softplus(a) -> Node:
    a = as_node(a)
    return Node(np.logaddexp(0.0, a.value), (a,),
                (lambda g: mul(g, sigmoid(a)),))


def leaky_relu(a, slope: float = LEAKY_RELU_SLOPE) -> Node:
    a = as_node(a)
    mask = np.where(a.value > 0.0, 1.0, slope)
    return Node(a.value * mask, (a,), (lambda g: mul(g, Node(mask)),))


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def slice_(a, key) -> Node:
    a = as_node(a)
    shape = a.shape
    return Node(a.value[key].copy(), (a,),
                (lambda g: _unslice(g, shape, key),))


def _unslice(g: Node, shape, key) -> Node:
    buf = np.zeros(shape)
    buf[key] = g.value
    return Node(buf, (g,), (lambda h: slice_(h, key),))


def concat(nodes, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    ndim = len(nodes[0].shape)
    for n in nodes[1:]:
        if len(n.shape) != ndim:
            raise ShapeMismatchError("concat", nodes[0].shape, n.shape)
    value = np.concatenate([n.value for n in nodes], axis=axis)
    offsets = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]
        if axis == 0:
            key = slice(lo, hi)
        else:
            key = (slice(None), slice(lo, hi))
        return lambda g: slice_(g, key)

    return Node(value, tuple(nodes), tuple(make_fn(i) for i in range(len(nodes))))


def norm2(a) -> Node:
    """Euclidean norm of all entries."""
    a = as_node(a)
    return sqrt(sum_all(mul(a, a)))


def row_norms(a) -> Node:
    """Per-row Euclidean norm of a 2-D node."""
    a = as_node(a)
    if len(a.shape) != 2:
        raise ShapeMismatchError("row_norms", a.shape)
    return sqrt(sum_axis(mul(a, a), 1))


# ---------------------------------------------------------------------------
# grad
# ---------------------------------------------------------------------------

def _toposort(root: Node):
    order = []
    seen = set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Node, wrt) -> list[Node]:
    """Gradients of a scalar node w.r.t. each node in `wrt`.

    The returned gradients are nodes themselves; taking grad of a scalar
    function of them yields second-order derivatives.
    """
    single = isinstance(wrt, Node)
    wrt_list = [wrt] if single else list(wrt)
    if output.value.size != 1:
        raise GradError(f"grad requires a scalar output, got shape {output.shape}")

    grads: dict[int, Node] = {id(output): Node(np.ones(output.shape))}
    for node in reversed(_toposort(output)):
        g = grads.get(id(node))
        if g is None or not node.parents:
            continue
        for parent, fn in zip(node.parents, node.grad_fns):
            contrib = fn(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else add(prev, contrib)

    out = []
    for w in wrt_list:
        g = grads.get(id(w))
        out.append(zeros_like(w) if g is None else g)
    return out[0] if single else out
