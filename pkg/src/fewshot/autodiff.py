"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation eagerly computes its forward value and records a closure
that accumulates adjoints into its parents.  The graph is acyclic by
construction (nodes only reference previously built nodes).

Conventions baked into the backward passes:
  * relu'(0) := 0
  * max/min route the full adjoint to the first extremal index
  * the Euclidean-distance derivative is guarded at zero distance
    (contribution dropped rather than dividing by zero)

Nodes that make a discrete choice (relu masks, pool/extremum indices,
near-zero distances) expose it via ``choice`` so gradient checks can
detect when a finite-difference probe stepped across a kink.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Node",
    "Parameter",
    "GraphError",
    "NonFiniteError",
    "set_debug_checks",
    "as_node",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "reshape",
    "sum_all",
    "mean_all",
    "take_column",
    "take_rows",
    "reduce_max",
    "reduce_min",
    "reduce_mean",
    "softmax_rows",
    "sq_distances",
    "euclidean_distances",
    "cross_entropy_from_sq_distances",
    "conv2d",
    "maxpool2x2",
    "backward",
    "finite_diff_grad",
    "graph_signature",
]


class GraphError(ValueError):
    """Structural misuse of the computation graph."""


class NonFiniteError(FloatingPointError):
    """A node produced NaN/Inf while debug checks were enabled."""


_debug_checks = False


def set_debug_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf detection on every forward value. Returns prior state."""
    global _debug_checks
    previous = _debug_checks
    _debug_checks = enabled
    return previous


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "op", "grad", "_backward", "choice")

    def __init__(self, value, parents=(), op="input", backward=None, choice=None):
        self.value = np.asarray(value)
        self.parents: tuple[Node, ...] = tuple(parents)
        self.op = op
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = backward
        self.choice: bytes | None = choice
        if _debug_checks and not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"non-finite values in '{self.op}' node "
                                 f"with shape {self.value.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Parameter(Node):
    """Trainable leaf, identified by name."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.asarray(value), op="param")
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value, dtype=None) -> Node:
    return Node(np.asarray(value, dtype=dtype), op="const")


def as_node(x, like: Node | None = None) -> Node:
    """Lift plain arrays/scalars to constants.

    Python scalars adopt the dtype of ``like`` so float32 graphs stay float32.
    """
    if isinstance(x, Node):
        return x
    dtype = like.value.dtype if like is not None and np.isscalar(x) else None
    return constant(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Node:
    a = as_node(a, like=b if isinstance(b, Node) else None)
    b = as_node(b, like=a)
    out_value = a.value + b.value

    def backward(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    return Node(out_value, (a, b), "add", backward)


def sub(a, b) -> Node:
    a = as_node(a, like=b if isinstance(b, Node) else None)
    b = as_node(b, like=a)
    out_value = a.value - b.value

    def backward(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(-g, b.value.shape))

    return Node(out_value, (a, b), "sub", backward)


def mul(a, b) -> Node:
    a = as_node(a, like=b if isinstance(b, Node) else None)
    b = as_node(b, like=a)
    out_value = a.value * b.value

    def backward(g):
        a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    return Node(out_value, (a, b), "mul", backward)


def neg(a) -> Node:
    a = as_node(a)

    def backward(g):
        a.accumulate(-g)

    return Node(-a.value, (a,), "neg", backward)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise GraphError(f"matmul expects 2-d operands, got "
                         f"{a.value.shape} @ {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise GraphError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    out_value = a.value @ b.value

    def backward(g):
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return Node(out_value, (a, b), "matmul", backward)


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0

    def backward(g):
        a.accumulate(g * mask)

    return Node(np.maximum(a.value, 0), (a,), "relu", backward,
                choice=np.packbits(mask.reshape(-1)).tobytes())


def reshape(a, shape) -> Node:
    a = as_node(a)
    in_shape = a.value.shape

    def backward(g):
        a.accumulate(g.reshape(in_shape))

    return Node(a.value.reshape(shape), (a,), "reshape", backward)


def sum_all(a) -> Node:
    a = as_node(a)

    def backward(g):
        a.accumulate(np.full_like(a.value, g))

    return Node(a.value.sum(), (a,), "sum", backward)


def mean_all(a) -> Node:
    a = as_node(a)
    n = a.value.size

    def backward(g):
        a.accumulate(np.full_like(a.value, g / n))

    return Node(a.value.mean(), (a,), "mean", backward)


def take_column(a, col: int) -> Node:
    a = as_node(a)

    def backward(g):
        full = np.zeros_like(a.value)
        full[:, col] = g
        a.accumulate(full)

    return Node(a.value[:, col].copy(), (a,), "take_column", backward)


def take_rows(a, rows) -> Node:
    a = as_node(a)
    rows = np.asarray(rows, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, rows, g)
        a.accumulate(full)

    return Node(a.value[rows].copy(), (a,), "take_rows", backward)


def _reduce_extremum(a, kind: str) -> Node:
    a = as_node(a)
    flat = a.value.reshape(-1)
    idx = int(flat.argmax() if kind == "max" else flat.argmin())

    def backward(g):
        full = np.zeros_like(flat)
        full[idx] = g
        a.accumulate(full.reshape(a.value.shape))

    return Node(flat[idx].copy(), (a,), f"reduce_{kind}", backward,
                choice=idx.to_bytes(8, "little"))


def reduce_max(a) -> Node:
    """Maximum entry; the adjoint flows to the first argmax only."""
    return _reduce_extremum(a, "max")


def reduce_min(a) -> Node:
    """Minimum entry; the adjoint flows to the first argmin only."""
    return _reduce_extremum(a, "min")


def reduce_mean(a) -> Node:
    return mean_all(a)


def softmax_rows(a) -> Node:
    """Row-wise softmax with max-subtraction."""
    a = as_node(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        a.accumulate(s * (g - inner))

    return Node(s, (a,), "softmax", backward)


def sq_distances(x, p) -> Node:
    """Pairwise squared Euclidean distances: [Q, D] x [C, D] -> [Q, C]."""
    x, p = as_node(x), as_node(p)
    if x.value.shape[-1] != p.value.shape[-1]:
        raise GraphError(f"distance dim mismatch: {x.value.shape} vs {p.value.shape}")
    diff = x.value[:, None, :] - p.value[None, :, :]
    out_value = np.einsum("qcd,qcd->qc", diff, diff)

    def backward(g):
        weighted = 2.0 * g[:, :, None] * diff
        x.accumulate(weighted.sum(axis=1))
        p.accumulate(-weighted.sum(axis=0))

    return Node(out_value, (x, p), "sq_distance", backward)


_ZERO_DIST_GUARD = 1e-12


def euclidean_distances(x, p) -> Node:
    """Pairwise Euclidean (unsquared) distances with a guarded derivative.

    Where a distance is (numerically) zero the gradient contribution is
    dropped; the sqrt kink is recorded in the node's choice signature.
    """
    x, p = as_node(x), as_node(p)
    if x.value.shape[-1] != p.value.shape[-1]:
        raise GraphError(f"distance dim mismatch: {x.value.shape} vs {p.value.shape}")
    diff = x.value[:, None, :] - p.value[None, :, :]
    d = np.sqrt(np.einsum("qcd,qcd->qc", diff, diff))
    near_zero = d <= _ZERO_DIST_GUARD

    def backward(g):
        scale = np.where(near_zero, 0.0, g / np.where(near_zero, 1.0, d))
        weighted = scale[:, :, None] * diff
        x.accumulate(weighted.sum(axis=1))
        p.accumulate(-weighted.sum(axis=0))

    return Node(d, (x, p), "distance", backward,
                choice=np.packbits(near_zero.reshape(-1)).tobytes())


def cross_entropy_from_sq_distances(dist, targets) -> Node:
    """Mean over rows of -log softmax(-dist)[target].

    Computed via a stable log-sum-exp; never forms the probabilities, so it
    stays finite even for badly separated queries.
    """
    dist = as_node(dist)
    targets = np.asarray(targets, dtype=np.intp)
    q, c = dist.value.shape
    if targets.shape != (q,):
        raise GraphError(f"expected {q} targets, got shape {targets.shape}")
    if targets.min() < 0 or targets.max() >= c:
        raise GraphError("target index outside class order")
    logits = -dist.value
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    losses = lse - logits[np.arange(q), targets]
    out_value = losses.mean()

    def backward(g):
        soft = np.exp(logits - lse[:, None])
        grad = soft.copy()
        grad[np.arange(q), targets] -= 1.0
        # d loss / d dist = (one_hot - softmax); mean over rows
        dist.accumulate((g / q) * -grad)

    return Node(out_value.astype(dist.value.dtype), (dist,), "composite", backward)


def conv2d(x, w, b, padding: int = 1) -> Node:
    """2-d convolution, stride 1: [B,C,H,W] * [O,C,k,k] + [O] -> [B,O,H',W']."""
    x, w, b = as_node(x), as_node(w), as_node(b)
    batch, cin, h, win = x.value.shape
    cout, cin_w, k, k2 = w.value.shape
    if cin != cin_w or k != k2:
        raise GraphError(f"conv2d kernel mismatch: input {x.value.shape}, "
                         f"weight {w.value.shape}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hout = h + 2 * padding - k + 1
    wout = win + 2 * padding - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # [B, C, H', W', k, k] -> [B, H'*W', C*k*k]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch, hout * wout, cin * k * k)
    wf = w.value.reshape(cout, cin * k * k)
    out = cols @ wf.T + b.value
    out_value = out.transpose(0, 2, 1).reshape(batch, cout, hout, wout)

    def backward(g):
        g2 = g.reshape(batch, cout, hout * wout).transpose(0, 2, 1)
        w.accumulate(np.einsum("bqo,bqi->oi", g2, cols).reshape(w.value.shape))
        b.accumulate(g2.sum(axis=(0, 1)))
        gcols = g2 @ wf  # [B, H'*W', C*k*k]
        gwin = gcols.reshape(batch, hout, wout, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                gxp[:, :, u:u + hout, v:v + wout] += gwin[:, :, :, :, u, v]
        x.accumulate(gxp[:, :, padding:padding + h, padding:padding + win])

    return Node(out_value, (x, w, b), "conv", backward)


def maxpool2x2(x) -> Node:
    """2x2 max pooling, stride 2. Odd trailing rows/columns are dropped."""
    x = as_node(x)
    batch, c, h, w = x.value.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise GraphError(f"maxpool2x2 input too small: {x.value.shape}")
    cropped = x.value[:, :, :h2 * 2, :w2 * 2]
    tiles = cropped.reshape(batch, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = tiles.reshape(batch, c, h2, w2, 4)
    idx = flat.argmax(axis=-1)
    out_value = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gtiles = gflat.reshape(batch, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros_like(x.value)
        gx[:, :, :h2 * 2, :w2 * 2] = gtiles.reshape(batch, c, h2 * 2, w2 * 2)
        x.accumulate(gx)

    return Node(out_value, (x,), "maxpool", backward,
                choice=idx.astype(np.uint8).tobytes())


def _topo_order(root: Node) -> list[Node]:
    """Iterative post-order over the graph rooted at ``root``."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node, params: Iterable[Parameter] = ()) -> dict[str, np.ndarray]:
    """Accumulate adjoints from ``loss`` and return gradients per parameter.

    Parameters that do not lie on any path to the loss get zero gradients.
    """
    if loss.value.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            g = node.grad
            if _debug_checks and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite adjoint at '{node.op}' node")
            node._backward(g)
    grads: dict[str, np.ndarray] = {}
    for p in params:
        grads[p.name] = np.zeros_like(p.value) if p.grad is None else p.grad.reshape(p.value.shape)
    return grads


def graph_signature(root: Node) -> bytes:
    """Concatenated discrete choices (relu masks, extremum indices, ...).

    Two evaluations of the same graph construction that produce different
    signatures stepped across a kink; gradient checks use this to exclude
    the affected coordinate.
    """
    parts = []
    for node in _topo_order(root):
        if node.choice is not None:
            parts.append(node.choice)
    return b"".join(parts)


def finite_diff_grad(
    loss_fn: Callable[[], float],
    params: Sequence[Parameter] | Mapping[str, Parameter],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient oracle: (f(x+h) - f(x-h)) / 2h per coordinate.

    ``loss_fn`` re-evaluates the loss from the parameters' current values;
    parameters are perturbed in place and restored.  Run at float64 for
    meaningful comparisons.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(params, Mapping):
        params = list(params.values())
    grads: dict[str, np.ndarray] = {}
    for p in params:
        flat = p.value.reshape(-1)
        g = np.zeros_like(flat, dtype=np.float64)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            f_plus = float(loss_fn())
            flat[i] = original - h
            f_minus = float(loss_fn())
            flat[i] = original
            g[i] = (f_plus - f_minus) / (2.0 * h)
        grads[p.name] = g.reshape(p.value.shape)
    return grads
