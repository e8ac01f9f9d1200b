"""Dense float64 arrays with reverse-mode automatic differentiation.

Every operation returns a new :class:`DiffNode` holding a value, its parent
nodes, and a closure that routes the output gradient back to those parents.
The graph is rebuilt on every forward pass, which keeps variable-length
sequences simple. ``backward()`` on a scalar root runs a topological sort
and accumulates gradients by addition, so a node feeding several consumers
receives every contribution exactly once; call :func:`zero_grad` (or
``DiffNode.zero_grad``) between optimization steps.

Everything is 64-bit: the finite-difference checks in
:func:`check_gradients` target relative errors around 1e-4, which 32-bit
arithmetic cannot reach. Broadcasting is deliberately minimal (scalars, and
column vectors against matrices); anything wider raises.
"""

from __future__ import annotations

import numpy as np

from .errors import HierarchyError, NumericsError

__all__ = [
    "DiffNode",
    "as_tensor",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat_rows",
    "concat_cols",
    "gather_rows",
    "gather_cols",
    "scatter_rows",
    "sum_all",
    "mean_all",
    "add_n",
    "exp",
    "log",
    "cos",
    "sin",
    "pow_const",
    "softplus",
    "softmax",
    "logsumexp",
    "mean_pool",
    "zero_grad",
    "check_gradients",
    "GradCheckReport",
]


def as_tensor(data) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float64 array (row-major)."""
    return np.ascontiguousarray(np.asarray(data, dtype=np.float64))


class DiffNode:
    """A value in the computation graph plus its accumulated gradient.

    ``value`` and ``grad`` are float64 arrays of identical shape. Leaf nodes
    (parameters, constants) have no parents; interior nodes carry a backward
    closure installed by the operation that created them.
    """

    __slots__ = ("value", "_grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = as_tensor(value)
        self._grad = None  # allocated on first use; forward-only graphs stay light
        self.parents = tuple(parents)
        self._backward = backward

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        if self._grad is not None:
            self._grad[...] = 0.0

    def backward(self):
        """Propagate gradients from a scalar root through the whole graph."""
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar root, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in order:
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"DiffNode(shape={self.shape})"

    # Operator sugar; the named module functions are the primary surface.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, DiffNode):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: DiffNode) -> list[DiffNode]:
    """Reverse topological order (root first), iterative to spare the stack."""
    order: list[DiffNode] = []
    visited: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def constant(data) -> DiffNode:
    """Leaf node whose gradient nobody reads."""
    return DiffNode(data)


def parameter(data) -> DiffNode:
    """Leaf node intended as a trainable parameter."""
    return DiffNode(data)


def _wrap(x) -> DiffNode:
    return x if isinstance(x, DiffNode) else constant(x)


def zero_grad(nodes) -> None:
    for node in nodes:
        node.zero_grad()


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of the allowed broadcasts)."""
    if grad.shape == tuple(shape):
        return grad
    out = grad
    # Scalar target: sum everything.
    if int(np.prod(shape)) == 1:
        return np.sum(out).reshape(shape)
    # Column vector (n,1) against matrix (n,m).
    if len(shape) == 2 and shape[1] == 1 and out.ndim == 2 and out.shape[0] == shape[0]:
        return np.sum(out, axis=1, keepdims=True)
    raise ValueError(f"cannot reduce gradient of shape {grad.shape} to {tuple(shape)}")


def _check_broadcast(a: DiffNode, b: DiffNode, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    # (n,1) column against (n,m) matrix, either side.
    for x, y in ((a, b), (b, a)):
        if (
            x.value.ndim == 2
            and y.value.ndim == 2
            and x.shape[1] == 1
            and x.shape[0] == y.shape[0]
        ):
            return
    raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    out = DiffNode(a.value + b.value, parents=(a, b))

    def backward(g):
        a.grad += _reduce_to(g, a.shape)
        b.grad += _reduce_to(g, b.shape)

    out._backward = backward
    return out


def sub(a, b) -> DiffNode:
    return add(a, neg(_wrap(b)))


def neg(a) -> DiffNode:
    a = _wrap(a)
    out = DiffNode(-a.value, parents=(a,))

    def backward(g):
        a.grad += -g

    out._backward = backward
    return out


def mul(a, b) -> DiffNode:
    """Elementwise product (same shape, scalar, or (n,1)-column broadcast)."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    out = DiffNode(a.value * b.value, parents=(a, b))

    def backward(g):
        a.grad += _reduce_to(g * b.value, a.shape)
        b.grad += _reduce_to(g * a.value, b.shape)

    out._backward = backward
    return out


def scale(a, c: float) -> DiffNode:
    """Multiply by a python float constant."""
    a = _wrap(a)
    c = float(c)
    out = DiffNode(a.value * c, parents=(a,))

    def backward(g):
        a.grad += g * c

    out._backward = backward
    return out


def matmul(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    out = DiffNode(a.value @ b.value, parents=(a, b))

    def backward(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    out._backward = backward
    return out


def transpose(a) -> DiffNode:
    a = _wrap(a)
    out = DiffNode(a.value.T, parents=(a,))

    def backward(g):
        a.grad += g.T

    out._backward = backward
    return out


def reshape(a, shape) -> DiffNode:
    a = _wrap(a)
    shape = tuple(shape)
    out = DiffNode(a.value.reshape(shape), parents=(a,))

    def backward(g):
        a.grad += g.reshape(a.shape)

    out._backward = backward
    return out


def _concat(nodes, axis: int) -> DiffNode:
    nodes = [_wrap(n) for n in nodes]
    if not nodes:
        raise ValueError("concat of zero nodes")
    values = [n.value for n in nodes]
    out = DiffNode(np.concatenate(values, axis=axis), parents=tuple(nodes))
    offsets = np.cumsum([0] + [v.shape[axis] for v in values])

    def backward(g):
        for node, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if axis == 0:
                node.grad += g[lo:hi]
            else:
                node.grad += g[:, lo:hi]

    out._backward = backward
    return out


def concat_rows(*nodes) -> DiffNode:
    """Stack matrices vertically (axis 0)."""
    if len(nodes) == 1 and isinstance(nodes[0], (list, tuple)):
        nodes = tuple(nodes[0])
    return _concat(nodes, axis=0)


def concat_cols(*nodes) -> DiffNode:
    """Stack matrices horizontally (axis 1)."""
    if len(nodes) == 1 and isinstance(nodes[0], (list, tuple)):
        nodes = tuple(nodes[0])
    return _concat(nodes, axis=1)


def _check_indices(idx: np.ndarray, bound: int, what: str) -> None:
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise IndexError(f"{what} index out of range [0, {bound})")


def gather_rows(a, idx) -> DiffNode:
    """Select rows by index; repeated indices sum their gradients."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    _check_indices(idx, a.shape[0], "row")
    out = DiffNode(a.value[idx], parents=(a,))

    def backward(g):
        np.add.at(a.grad, idx, g)

    out._backward = backward
    return out


def gather_cols(a, idx) -> DiffNode:
    """Select columns by index; repeated indices sum their gradients."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    _check_indices(idx, a.shape[1], "column")
    out = DiffNode(a.value[:, idx], parents=(a,))

    def backward(g):
        np.add.at(a.grad.T, idx, g.T)

    out._backward = backward
    return out


def scatter_rows(base, idx, rows) -> DiffNode:
    """Copy of ``base`` with rows at ``idx`` replaced by ``rows``.

    ``idx`` must not contain repeats; carried-over rows keep their gradient
    path through ``base``, replaced rows route theirs through ``rows``.
    """
    base, rows = _wrap(base), _wrap(rows)
    idx = np.asarray(idx, dtype=np.int64)
    _check_indices(idx, base.shape[0], "row")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("scatter_rows requires distinct indices")
    value = base.value.copy()
    value[idx] = rows.value
    out = DiffNode(value, parents=(base, rows))

    def backward(g):
        g_base = g.copy()
        g_base[idx] = 0.0
        base.grad += g_base
        rows.grad += g[idx]

    out._backward = backward
    return out


def sum_all(a) -> DiffNode:
    a = _wrap(a)
    out = DiffNode(np.sum(a.value), parents=(a,))

    def backward(g):
        a.grad += np.broadcast_to(g, a.shape)

    out._backward = backward
    return out


def mean_all(a) -> DiffNode:
    a = _wrap(a)
    return scale(sum_all(a), 1.0 / a.size)


def add_n(nodes) -> DiffNode:
    """Sum a list of same-shaped nodes."""
    nodes = [_wrap(n) for n in nodes]
    if not nodes:
        raise ValueError("add_n of zero nodes")
    out = DiffNode(sum(n.value for n in nodes), parents=tuple(nodes))

    def backward(g):
        for node in nodes:
            node.grad += g

    out._backward = backward
    return out


def exp(a) -> DiffNode:
    a = _wrap(a)
    out = DiffNode(np.exp(a.value), parents=(a,))

    def backward(g):
        a.grad += g * out.value

    out._backward = backward
    return out


def log(a) -> DiffNode:
    a = _wrap(a)
    if np.any(a.value <= 0.0):
        raise NumericsError("log requires strictly positive input")
    out = DiffNode(np.log(a.value), parents=(a,))

    def backward(g):
        a.grad += g / a.value

    out._backward = backward
    return out


def cos(a) -> DiffNode:
    a = _wrap(a)
    out = DiffNode(np.cos(a.value), parents=(a,))

    def backward(g):
        a.grad += -g * np.sin(a.value)

    out._backward = backward
    return out


def sin(a) -> DiffNode:
    a = _wrap(a)
    out = DiffNode(np.sin(a.value), parents=(a,))

    def backward(g):
        a.grad += g * np.cos(a.value)

    out._backward = backward
    return out


def pow_const(a, p: float) -> DiffNode:
    """Elementwise power with a constant exponent (positive base)."""
    a = _wrap(a)
    p = float(p)
    if np.any(a.value <= 0.0):
        raise NumericsError("pow_const requires strictly positive base")
    out = DiffNode(a.value**p, parents=(a,))

    def backward(g):
        a.grad += g * p * a.value ** (p - 1.0)

    out._backward = backward
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> DiffNode:
    """log(1 + exp(x)) computed without overflow; strictly positive output."""
    a = _wrap(a)
    out = DiffNode(np.logaddexp(0.0, a.value), parents=(a,))

    def backward(g):
        a.grad += g * _sigmoid(a.value)

    out._backward = backward
    return out


def softmax(a, axis: int = -1) -> DiffNode:
    """Stable softmax along ``axis`` (max-subtraction); rows sum to one."""
    a = _wrap(a)
    if not -a.value.ndim <= axis < a.value.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = DiffNode(y, parents=(a,))

    def backward(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        a.grad += y * (g - inner)

    out._backward = backward
    return out


def logsumexp(a, axis: int = -1) -> DiffNode:
    """log(sum(exp(x))) along ``axis`` with keepdims, overflow-safe."""
    a = _wrap(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    value = m + np.log(np.sum(np.exp(a.value - m), axis=axis, keepdims=True))
    out = DiffNode(value, parents=(a,))

    def backward(g):
        soft = np.exp(a.value - value)
        a.grad += g * soft

    out._backward = backward
    return out


def mean_pool(a, group_index) -> DiffNode:
    """Row ``g`` of the output is the mean of input rows ``group_index[g]``.

    The backward rule hands each member 1/|group| of the output-row
    gradient. Groups must be non-empty and indices valid.
    """
    a = _wrap(a)
    groups = [np.asarray(g, dtype=np.int64) for g in group_index]
    if not groups:
        raise HierarchyError("mean_pool: no groups given")
    for g in groups:
        if g.size == 0:
            raise HierarchyError("mean_pool: empty group")
        if g.min() < 0 or g.max() >= a.shape[0]:
            raise HierarchyError(f"mean_pool: index out of range [0, {a.shape[0]})")
    value = np.stack([a.value[g].mean(axis=0) for g in groups])
    out = DiffNode(value, parents=(a,))

    def backward(gout):
        for row, g in enumerate(groups):
            np.add.at(a.grad, g, gout[row] / g.size)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


class GradCheckReport:
    """Outcome of :func:`check_gradients`: worst relative error per parameter."""

    def __init__(self, per_param: dict[str, float], num_checked: int):
        self.per_param = per_param
        self.num_checked = num_checked
        self.max_rel_error = max(per_param.values()) if per_param else 0.0

    def __repr__(self):
        return (
            f"GradCheckReport(max_rel_error={self.max_rel_error:.3e},"
            f" entries={self.num_checked})"
        )


def check_gradients(
    f,
    params: dict[str, DiffNode],
    step: float = 1e-5,
    tol: float | None = None,
    max_entries: int = 100,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f(params)`` to central differences.

    ``f`` must deterministically build a scalar DiffNode from the parameter
    leaves. Every entry is checked for small tensors; for tensors with more
    than ``max_entries`` entries, a seeded random sample of ``max_entries``
    is used. The relative error denominator is floored at 1e-6 so that
    finite-difference noise on near-zero gradients does not register.
    """
    rng = np.random.default_rng(seed)
    root = f(params)
    if root.size != 1:
        raise ValueError("check_gradients: f must return a scalar node")
    if not np.isfinite(root.value).all():
        raise NumericsError("check_gradients: loss is not finite")
    for node in params.values():
        node.zero_grad()
    root.backward()
    analytic = {name: node.grad.copy() for name, node in params.items()}

    per_param: dict[str, float] = {}
    checked = 0
    for name, node in params.items():
        flat = node.value.reshape(-1)
        n = flat.size
        if n <= max_entries:
            entries = np.arange(n)
        else:
            entries = rng.choice(n, size=max_entries, replace=False)
        worst = 0.0
        for i in entries:
            original = flat[i]
            flat[i] = original + step
            up = f(params).value.item()
            flat[i] = original - step
            down = f(params).value.item()
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
            checked += 1
        per_param[name] = worst

    report = GradCheckReport(per_param, checked)
    if tol is not None and report.max_rel_error >= tol:
        bad = {k: v for k, v in per_param.items() if v >= tol}
        raise AssertionError(f"gradient check failed (tol={tol}): {bad}")
    return report
