"""Reverse-mode autodiff on numpy arrays, sized for small convolutional nets.

Every operation builds a graph node holding its parents and a vector-Jacobian
closure; `gradients` walks the graph once, backwards, without mutating any
node state, so several backward passes over the same forward graph are safe.
"""

from __future__ import annotations

import numpy as np

# Probabilities are clipped before log() so saturated sigmoid/softmax outputs
# (exactly 0.0 or 1.0 in float32) cannot produce infinities.
PROB_EPS = 1e-7


class Tensor:
    """A node in the computation graph: value + parents + backward closure."""

    __slots__ = ("data", "parents", "vjp", "op", "requires_grad")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, op="leaf"):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"


def _result(data, parents, vjp, op):
    grad = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=grad, parents=parents if grad else (),
                  vjp=vjp if grad else None, op=op)


def constant(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr)


def parameter(data):
    return Tensor(np.asarray(data), requires_grad=True, op="param")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _result(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def rsub_scalar(c: float, a: Tensor) -> Tensor:
    """c - a, elementwise."""
    return _result(a.data.dtype.type(c) - a.data, (a,), lambda g: (-g,), "rsub")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def cast(a: Tensor, dtype) -> Tensor:
    """Dtype conversion; the gradient is cast back on the way down."""
    dtype = np.dtype(dtype)
    src = a.data.dtype
    return _result(a.data.astype(dtype), (a,),
                   lambda g: (g.astype(src),), "cast")


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the unclipped interior."""
    out = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)
    return _result(out, (a,), lambda g: (g * passthrough,), "clip")


def mean(a: Tensor) -> Tensor:
    n = a.data.dtype.type(a.data.size)
    out = a.data.mean()
    return _result(out, (a,),
                   lambda g: (np.full_like(a.data, g / n),), "mean")


def tsum(a: Tensor) -> Tensor:
    out = a.data.sum()
    return _result(out, (a,),
                   lambda g: (np.full_like(a.data, g),), "sum")


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _result(a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(orig),), "reshape")


def flatten_batch(a: Tensor) -> Tensor:
    """(N, ...) -> (N, D), row-major."""
    n = a.data.shape[0]
    return reshape(a, (n, -1))


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0; backward scatter-adds into the source."""
    idx = np.asarray(idx)
    out = a.data[idx]

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)

    return _result(out, (a,), vjp, "take_rows")


def stack_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two (N, C, W) maps into (N, C, 2, W): row 0 from a, row 1 from b.

    Pure placement, no arithmetic.
    """
    if a.data.shape != b.data.shape or a.data.ndim != 3:
        raise ValueError(
            f"stack_rows expects two equal (N, C, W) inputs, got {a.data.shape} and {b.data.shape}")
    out = np.stack([a.data, b.data], axis=2)
    return _result(out, (a, b),
                   lambda g: (g[:, :, 0, :], g[:, :, 1, :]), "stack_rows")


# ---------------------------------------------------------------------------
# reductions used by the loss functions

def mean_row_l2(a: Tensor) -> Tensor:
    """Mean over the batch of per-sample Euclidean norms.

    Input (N, ...) is flattened per sample; zero-norm samples get zero
    gradient (subgradient choice at the kink).
    """
    n = a.data.shape[0]
    flat = a.data.reshape(n, -1)
    norms = np.sqrt((flat * flat).sum(axis=1))
    out = norms.mean()

    def vjp(g):
        safe = np.where(norms > 1e-12, norms, np.inf)
        da = flat / (safe[:, None] * n) * g
        return (da.reshape(a.data.shape),)

    return _result(out.astype(a.data.dtype), (a,), vjp, "mean_row_l2")


def select_columns(a: Tensor, cols: np.ndarray) -> Tensor:
    """out[i] = a[i, cols[i]] for a 2-D input; backward scatter-adds."""
    cols = np.asarray(cols)
    rows = np.arange(a.data.shape[0])
    out = a.data[rows, cols]

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, (rows, cols), g)
        return (da,)

    return _result(out, (a,), vjp, "select_columns")


# ---------------------------------------------------------------------------
# kernel two-sample statistic

def mmd2_rbf_op(a: Tensor, b: Tensor, sigma: float) -> Tensor:
    """Squared maximum mean discrepancy, biased V-statistic, RBF kernel.

    k(x, y) = exp(-||x - y||^2 / (2 sigma^2)); both inputs are (N, D) with a
    shared D. `sigma` is treated as a constant (no gradient through the
    bandwidth).
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ValueError(
            f"mmd2 expects (N, D) sets of equal dimension, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[0] == 0 or b.data.shape[0] == 0:
        raise ValueError("mmd2 requires non-empty sample sets")
    if sigma <= 0:
        raise ValueError(f"mmd2 bandwidth must be positive, got {sigma}")

    A, B = a.data, b.data
    n, m = A.shape[0], B.shape[0]
    inv2s2 = 1.0 / (2.0 * sigma * sigma)

    def gram(X, Y):
        sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * (X @ Y.T)
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-sq * inv2s2)

    kaa, kbb, kab = gram(A, A), gram(B, B), gram(A, B)
    out = kaa.mean() + kbb.mean() - 2.0 * kab.mean()

    def vjp(g):
        c = g * 2.0 * inv2s2 * 2.0  # d exp(-d^2/2s^2)/dx = -k (x-y)/s^2
        da = (-1.0 / (n * n)) * (kaa.sum(1)[:, None] * A - kaa @ A) \
            + (1.0 / (n * m)) * (kab.sum(1)[:, None] * A - kab @ B)
        db = (-1.0 / (m * m)) * (kbb.sum(1)[:, None] * B - kbb @ B) \
            + (1.0 / (n * m)) * (kab.sum(0)[:, None] * B - kab.T @ A)
        return ((c * da).astype(A.dtype), (c * db).astype(B.dtype))

    return _result(np.asarray(out, dtype=A.dtype), (a, b), vjp, "mmd2_rbf")


# ---------------------------------------------------------------------------
# backward pass

def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def gradients(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to each tensor in `wrt`.

    Tensors in `wrt` that the loss does not depend on get exact zeros, so the
    returned list always aligns one-to-one with `wrt`. Raises if the loss is
    not a scalar or carries no graph.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any trainable tensor")

    grad_map: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        if node.vjp is None:
            continue  # leaf: keep its accumulated gradient for the lookup below
        g = grad_map.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grad_map.get(id(parent))
            grad_map[id(parent)] = pg if acc is None else acc + pg

    return [grad_map.get(id(p), np.zeros_like(p.data)) for p in wrt]
