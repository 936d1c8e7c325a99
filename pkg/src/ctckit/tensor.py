"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for a residual self-attention encoder and its
losses: 2-d matmul, row softmax, layer norm, GELU, fused multi-head
attention, and scalar reductions.  Each operation records a node holding
a forward closure (for deterministic replay) and a backward closure
(analytic gradient).  No general broadcasting; the only shape mixing
allowed is adding a length-d bias row to a (T, d) matrix.

Arrays are float64 by default.  Training code may switch the ambient
dtype to float32 for speed via ``using_dtype``; gradient checking
requires float64.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

LAYER_NORM_EPS = 1e-12

_ALLOWED_DTYPES = (np.float32, np.float64)
_default_dtype = np.float64


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _ALLOWED_DTYPES:
        raise ContractError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


# ---------------------------------------------------------------------------
# tensor and graph


class Tensor:
    """A dense array plus the bookkeeping needed for backpropagation.

    Leaf tensors are created directly; every operation below returns a
    non-leaf whose ``inputs`` point at its operands.  ``grad`` stays
    None until ``backward`` reaches the node.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "inputs", "meta",
                 "_forward", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self.inputs: tuple[Tensor, ...] = ()
        self.meta = None
        self._forward = None
        self._backward = None

    @classmethod
    def _result(cls, data, op: str, inputs: Sequence["Tensor"],
                forward: Callable, backward: Callable | None) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(t.requires_grad for t in inputs)
        out.op = op
        out.inputs = tuple(inputs)
        out.meta = None
        out._forward = forward
        out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def grad_view(self) -> np.ndarray:
        """Gradient array, materializing zeros for untouched leaves."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        tag = self.op or "leaf"
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative post-order DFS; inputs always precede consumers
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor, leaves: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` for every reachable tensor.

    root must be scalar.  Leaves passed explicitly get a zero gradient
    even when the graph never touches them, so optimizers can treat the
    result uniformly.
    """
    if root.data.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    order = _topo_order(root)
    root.grad = np.ones((), dtype=root.data.dtype)
    for node in reversed(order):
        if node._backward is None or node.grad is None or not node.requires_grad:
            continue
        node._backward(node.grad)
    if leaves is not None:
        for leaf in leaves:
            if leaf.requires_grad and leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


class Graph:
    """Topologically ordered record of the operations below a root."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        return cls(_topo_order(root))

    def replay(self) -> dict[int, np.ndarray]:
        """Re-execute every recorded operation from the leaves up.

        Returns freshly computed arrays keyed by node id; callers compare
        them against the stored ``data`` to confirm determinism.
        """
        values: dict[int, np.ndarray] = {}
        for node in self.nodes:
            if node._forward is None:
                values[id(node)] = node.data
            else:
                values[id(node)] = node._forward([values[id(p)] for p in node.inputs])
        return values

    def root_replay(self) -> np.ndarray:
        return self.replay()[id(self.nodes[-1])]


# ---------------------------------------------------------------------------
# primitives


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts (T, d) + (d,) for bias rows."""
    bias_row = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias_row:
        _same_shape(a, b, "add")

    def forward(vals):
        return vals[0] + vals[1]

    out = Tensor._result(a.data + b.data, "add", (a, b), forward, None)

    def backward_fn(g):
        a.accumulate(g)
        if bias_row:
            b.accumulate(g.sum(axis=0))
        else:
            b.accumulate(g)

    out._backward = backward_fn
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def forward(vals):
        return vals[0] * vals[1]

    out = Tensor._result(a.data * b.data, "mul", (a, b), forward, None)

    def backward_fn(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    out._backward = backward_fn
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def forward(vals):
        return vals[0] * c

    out = Tensor._result(a.data * c, "scale", (a,), forward, None)

    def backward_fn(g):
        a.accumulate(g * c)

    out._backward = backward_fn
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(n, k) @ (k, m) -> (n, m).  Strictly two-dimensional."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}")

    def forward(vals):
        return vals[0] @ vals[1]

    out = Tensor._result(a.data @ b.data, "matmul", (a, b), forward, None)

    def backward_fn(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    out._backward = backward_fn
    return out


def _softmax_raw(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Row-stochastic softmax along the last axis, max-subtracted."""

    def forward(vals):
        return _softmax_raw(vals[0])

    y = _softmax_raw(x.data)
    out = Tensor._result(y, "softmax", (x,), forward, None)

    def backward_fn(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        x.accumulate(y * (g - inner))

    out._backward = backward_fn
    return out


def _log_softmax_raw(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax(x: Tensor) -> Tensor:
    def forward(vals):
        return _log_softmax_raw(vals[0])

    y = _log_softmax_raw(x.data)
    out = Tensor._result(y, "log_softmax", (x,), forward, None)

    def backward_fn(g):
        x.accumulate(g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    out._backward = backward_fn
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row normalization of a (T, d) matrix, then affine gain/bias.

    Variance gets a 1e-12 epsilon so constant rows normalize to zero
    instead of dividing by zero.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm expects a 2-d input, got {x.data.shape}")
    d = x.data.shape[1]
    if d < 2:
        raise DimensionError(f"layer_norm needs at least 2 features per row, got {d}")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}")

    def forward(vals):
        xv, gv, bv = vals
        mu = xv.mean(axis=1, keepdims=True)
        var = ((xv - mu) ** 2).mean(axis=1, keepdims=True)
        return (xv - mu) / np.sqrt(var + LAYER_NORM_EPS) * gv + bv

    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv_std
    out = Tensor._result(xhat * gain.data + bias.data, "layer_norm",
                         (x, gain, bias), forward, None)

    def backward_fn(g):
        gain.accumulate((g * xhat).sum(axis=0))
        bias.accumulate(g.sum(axis=0))
        dxhat = g * gain.data
        row_mean = dxhat.mean(axis=1, keepdims=True)
        proj = (dxhat * xhat).mean(axis=1, keepdims=True)
        x.accumulate(inv_std * (dxhat - row_mean - xhat * proj))

    out._backward = backward_fn
    return out


_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""

    def forward(vals):
        v = vals[0]
        return 0.5 * v * (1.0 + erf(v * _INV_SQRT_2))

    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT_2))
    out = Tensor._result(x.data * cdf, "gelu", (x,), forward, None)

    def backward_fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        x.accumulate(g * (cdf + x.data * pdf))

    out._backward = backward_fn
    return out


def sum_all(x: Tensor) -> Tensor:
    """Reduce every element to one scalar."""

    def forward(vals):
        return np.asarray(vals[0].sum(), dtype=vals[0].dtype)

    out = Tensor._result(np.asarray(x.data.sum(), dtype=x.data.dtype),
                         "sum_all", (x,), forward, None)

    def backward_fn(g):
        x.accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False))

    out._backward = backward_fn
    return out


def _attention_forward(qv: np.ndarray, kv: np.ndarray, vv: np.ndarray,
                       n_heads: int) -> tuple[np.ndarray, np.ndarray]:
    T, d = qv.shape
    dh = d // n_heads
    inv = 1.0 / math.sqrt(dh)
    out = np.empty_like(qv)
    weights = np.empty((n_heads, T, T), dtype=qv.dtype)
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (qv[:, sl] @ kv[:, sl].T) * inv
        w = _softmax_raw(scores)
        weights[h] = w
        out[:, sl] = w @ vv[:, sl]
    return out, weights


def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Fused scaled dot-product attention over h column-split heads.

    q, k, v: (T, d) with d divisible by n_heads.  Softmax runs over key
    positions per head.  Per-head weight matrices (h, T, T) are kept on
    the node's ``meta`` for inspection dumps.
    """
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise DimensionError(
            f"attention operands must share a shape, got {q.data.shape}, "
            f"{k.data.shape}, {v.data.shape}")
    if q.data.ndim != 2:
        raise DimensionError(f"attention expects 2-d operands, got {q.data.shape}")
    d = q.data.shape[1]
    if n_heads < 1 or d % n_heads != 0:
        raise DimensionError(f"width {d} not divisible into {n_heads} heads")

    def forward(vals):
        return _attention_forward(vals[0], vals[1], vals[2], n_heads)[0]

    data, weights = _attention_forward(q.data, k.data, v.data, n_heads)
    out = Tensor._result(data, "attention", (q, k, v), forward, None)
    out.meta = {"weights": weights, "n_heads": n_heads}

    def backward_fn(g):
        T, _ = q.data.shape
        dh = d // n_heads
        inv = 1.0 / math.sqrt(dh)
        gq = np.zeros_like(q.data)
        gk = np.zeros_like(k.data)
        gv = np.zeros_like(v.data)
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            w = weights[h]
            gh = g[:, sl]
            gv[:, sl] = w.T @ gh
            gw = gh @ v.data[:, sl].T
            # softmax jacobian applied row-wise
            gscores = w * (gw - (gw * w).sum(axis=-1, keepdims=True))
            gq[:, sl] = (gscores @ k.data[:, sl]) * inv
            gk[:, sl] = (gscores.T @ q.data[:, sl]) * inv
        q.accumulate(gq)
        k.accumulate(gk)
        v.accumulate(gv)

    out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                      h: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    f takes no arguments and must rebuild its graph from the current
    parameter values on every call.  Returns the worst relative error
    max |g_ad - g_fd| / max(1, |g_fd|) over all parameter coordinates.
    A non-finite loss at a perturbed point counts as an infinite error
    for that coordinate.  Parameters must be float64.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError("finite_diff_check requires float64 parameters")
    zero_grads(params)
    out = f()
    backward(out, leaves=params)
    analytic = [p.grad_view().copy() for p in params]

    worst = 0.0
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        g_flat = g_ad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = f().item()
            flat[i] = saved - h
            down = f().item()
            flat[i] = saved
            if not (math.isfinite(up) and math.isfinite(down)):
                return math.inf
            g_fd = (up - down) / (2.0 * h)
            err = abs(g_flat[i] - g_fd) / max(1.0, abs(g_fd))
            if err > worst:
                worst = err
    return worst
