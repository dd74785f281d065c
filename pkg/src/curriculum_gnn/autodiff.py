"""Reverse-mode autodiff over numpy arrays.

Every operation returns a new Tensor wired to its parents; calling
``backward()`` on a scalar walks the implicit tape in reverse topological
order and accumulates gradients additively. Graph-structured ops (sparse
matmul, neighbor softmax, segment reductions) work on pre-sorted index
arrays so both directions run on ``np.add.reduceat`` instead of scatter
loops.

All data is float64. Set ``debug_checks(True)`` to assert every forward
result is finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_DEBUG_FINITE = False


def debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions on every op output."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = enabled


class ShapeError(ValueError):
    pass


class Segments:
    """Contiguous segments of a sorted id array.

    ``ids`` must be sorted ascending; segment s covers rows
    [starts[s], starts[s] + counts[s]). Empty segments are allowed.
    """

    def __init__(self, ids: np.ndarray, num_segments: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (np.any(np.diff(ids) < 0)):
            raise ValueError("segment ids must be sorted ascending")
        self.ids = ids
        self.num_segments = int(num_segments)
        self.counts = np.bincount(ids, minlength=num_segments).astype(np.int64)
        self.starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))
        self.nonempty = self.counts > 0

    def reduce(self, values: np.ndarray, ufunc=np.add, empty_fill: float = 0.0) -> np.ndarray:
        """Per-segment reduction of ``values`` (first axis aligned with ids)."""
        out_shape = (self.num_segments,) + values.shape[1:]
        out = np.full(out_shape, empty_fill, dtype=np.float64)
        if values.shape[0] == 0 or not np.any(self.nonempty):
            return out
        # reduceat over only the nonempty starts: consecutive nonempty
        # segments are contiguous in the sorted array, so each slice is
        # exactly one segment.
        idx = self.starts[self.nonempty]
        out[self.nonempty] = ufunc.reduceat(values, idx, axis=0)
        return out


class GatherPlan:
    """Row-gather ``x[idx]`` with a precomputed reduceat-based backward."""

    def __init__(self, idx: np.ndarray, num_rows: int):
        self.idx = np.asarray(idx, dtype=np.int64)
        self.num_rows = int(num_rows)
        self.perm = np.argsort(self.idx, kind="stable")
        self.segments = Segments(self.idx[self.perm], num_rows)

    def scatter_sum(self, grad: np.ndarray) -> np.ndarray:
        return self.segments.reduce(grad[self.perm])


class SparseCOO:
    """Immutable sparse matrix in COO form, rows sorted.

    Stores the transposed orientation too, so y = A x and the backward
    x_bar = A^T y_bar both run as segment reductions.
    """

    def __init__(self, rows, cols, vals, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        self.rows = rows[order]
        self.cols = cols[order]
        self.vals = vals[order]
        self.shape = (int(shape[0]), int(shape[1]))
        self.row_segments = Segments(self.rows, self.shape[0])
        t_order = np.lexsort((self.rows, self.cols))
        self.t_rows = self.cols[t_order]   # rows of A^T, sorted
        self.t_cols = self.rows[t_order]
        self.t_vals = self.vals[t_order]
        self.t_row_segments = Segments(self.t_rows, self.shape[1])

    def dot(self, h: np.ndarray) -> np.ndarray:
        contrib = self.vals[:, None] * h[self.cols]
        return self.row_segments.reduce(contrib)

    def t_dot(self, g: np.ndarray) -> np.ndarray:
        contrib = self.t_vals[:, None] * g[self.t_cols]
        return self.t_row_segments.reduce(contrib)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape)
        np.add.at(dense, (self.rows, self.cols), self.vals)
        return dense


class Tensor:
    """Node of the autodiff tape: a float64 array plus backward wiring."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        if _DEBUG_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite values in forward result")

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse pass from a scalar; gradients accumulate additively."""
        if self.data.shape != ():
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones(()))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    # convenience operators (constants are promoted)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=tuple(parents) if req else ())
    if req:
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backward)


def sparse_dense_matmul(sp: SparseCOO, h: Tensor) -> Tensor:
    """y = A @ h for a constant sparse A; gradients flow through h only."""
    h = _as_tensor(h)
    if h.data.ndim != 2 or h.data.shape[0] != sp.shape[1]:
        raise ShapeError(f"spmm: sparse {sp.shape} incompatible with dense {h.shape}")
    data = sp.dot(h.data)

    def backward(g):
        if h.requires_grad:
            h._accumulate(sp.t_dot(g))

    return _make(data, (h,), backward)


def concat_columns(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    widths = [t.data.shape[1] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=1)

    def backward(g):
        offset = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t._accumulate(g[:, offset:offset + w])
            offset += w

    return _make(data, tensors, backward)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    return _make(data, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    data = np.where(x.data > 0, x.data, slope * x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.where(x.data > 0, 1.0, slope))

    return _make(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data * (1.0 - data))

    return _make(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data)

    return _make(data, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return _make(data, (x,), backward)


def xlogx(x: Tensor) -> Tensor:
    """Elementwise x*log(x) with the 0*log(0) = 0 convention."""
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.where(x.data > 0, x.data * np.log(np.maximum(x.data, 1e-300)), 0.0)

    def backward(g):
        if x.requires_grad:
            with np.errstate(divide="ignore"):
                d = np.where(x.data > 0, np.log(np.maximum(x.data, 1e-300)) + 1.0, 0.0)
            x._accumulate(g * d)

    return _make(data, (x,), backward)


def row_softmax(x: Tensor) -> Tensor:
    """Softmax along axis 1; rows sum to 1."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"row_softmax expects a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=1, keepdims=True)
            x._accumulate(data * (g - inner))

    return _make(data, (x,), backward)


def masked_neighbor_softmax(logits: Tensor, segments: Segments) -> Tensor:
    """Softmax of a flat logit vector within each contiguous segment.

    Each segment is one node's neighbor set; coefficients in a segment
    sum to 1. Empty segments yield no coefficients; a query for a node
    with no entries is rejected upstream.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"segment softmax expects a vector, got shape {logits.shape}")
    if logits.data.shape[0] != segments.ids.shape[0]:
        raise ShapeError("logit count does not match segment ids")
    seg_max = segments.reduce(logits.data, ufunc=np.maximum, empty_fill=0.0)
    e = np.exp(logits.data - seg_max[segments.ids])
    denom = segments.reduce(e)
    data = e / denom[segments.ids]

    def backward(g):
        if logits.requires_grad:
            inner = segments.reduce(data * g)
            logits._accumulate(data * (g - inner[segments.ids]))

    return _make(data, (logits,), backward)


def segment_sum(x: Tensor, segments: Segments) -> Tensor:
    """Sum rows of ``x`` within each segment -> [num_segments, ...]."""
    x = _as_tensor(x)
    data = segments.reduce(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[segments.ids])

    return _make(data, (x,), backward)


def segment_mean(x: Tensor, segments: Segments) -> Tensor:
    """Mean rows within each segment; empty segments yield zero rows."""
    x = _as_tensor(x)
    denom = np.maximum(segments.counts, 1).astype(np.float64)
    if x.data.ndim == 2:
        denom = denom[:, None]
    data = segments.reduce(x.data) / denom

    def backward(g):
        if x.requires_grad:
            x._accumulate((g / denom)[segments.ids])

    return _make(data, (x,), backward)


def gather_rows(x: Tensor, plan: GatherPlan) -> Tensor:
    """x[idx] with reduceat-backed scatter in the backward pass."""
    x = _as_tensor(x)
    if x.data.shape[0] != plan.num_rows:
        raise ShapeError(f"gather plan built for {plan.num_rows} rows, tensor has {x.data.shape[0]}")
    data = x.data[plan.idx]

    def backward(g):
        if x.requires_grad:
            x._accumulate(plan.scatter_sum(g))

    return _make(data, (x,), backward)


def pick_columns(x: Tensor, col_idx: np.ndarray) -> Tensor:
    """Vector of x[i, col_idx[i]] per row i."""
    x = _as_tensor(x)
    col_idx = np.asarray(col_idx, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    data = x.data[rows, col_idx]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (rows, col_idx), g)
            x._accumulate(gx)

    return _make(data, (x,), backward)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` by scalar s[i]."""
    x, s = _as_tensor(x), _as_tensor(s)
    if s.data.ndim != 1 or s.data.shape[0] != x.data.shape[0]:
        raise ShapeError(f"scale_rows: {x.shape} rows vs scales {s.shape}")
    data = x.data * s.data[:, None]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * s.data[:, None])
        if s.requires_grad:
            s._accumulate((g * x.data).sum(axis=1))

    return _make(data, (x, s), backward)


def matvec(m: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product -> vector [N]."""
    m, v = _as_tensor(m), _as_tensor(v)
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {m.shape} and {v.shape}")
    data = m.data @ v.data

    def backward(g):
        if m.requires_grad:
            m._accumulate(np.outer(g, v.data))
        if v.requires_grad:
            v._accumulate(m.data.T @ g)

    return _make(data, (m, v), backward)


def vec_slice(v: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice of a 1-D tensor."""
    v = _as_tensor(v)
    data = v.data[start:stop]

    def backward(g):
        if v.requires_grad:
            gv = np.zeros_like(v.data)
            gv[start:stop] = g
            v._accumulate(gv)

    return _make(data, (v,), backward)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum()

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g)))

    return _make(data, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    data = x.data.mean()

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g) / n))

    return _make(data, (x,), backward)


def sum_rows(x: Tensor) -> Tensor:
    """Row sums of a matrix -> vector [N]."""
    x = _as_tensor(x)
    data = x.data.sum(axis=1)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.repeat(g[:, None], x.data.shape[1], axis=1))

    return _make(data, (x,), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows -> vector [D] (column means)."""
    x = _as_tensor(x)
    n = x.data.shape[0]
    data = x.data.mean(axis=0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.repeat(g[None, :], n, axis=0) / n)

    return _make(data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; p=0 is the identity."""
    if p < 0 or p >= 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    x = _as_tensor(x)
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(data, (x,), backward)


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row cross-entropy -log p[i, labels[i]] -> vector [N]."""
    picked = pick_columns(probs, labels)
    return mul(log(picked), -1.0)


def kl_divergence(p: Tensor, q: np.ndarray) -> Tensor:
    """KL(p || q) for a single distribution vector against constant q."""
    q = np.asarray(q, dtype=np.float64)
    return sum_all(mul(p, add(log(p), -np.log(q))))


@dataclass
class GradReport:
    """Max relative error between analytic and central-difference grads."""

    per_param: dict = field(default_factory=dict)
    eps: float = 1e-5

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0


def grad_check(f, params, eps: float = 1e-5) -> GradReport:
    """Compare analytic gradients of scalar f() against central differences.

    ``params`` is a list of (name, Tensor); f must be deterministic and
    rebuild its graph on every call (dropout disabled).
    """
    for _, p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data):
        raise FloatingPointError("grad_check: non-finite loss")
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params}

    report = GradReport(eps=eps)
    for name, p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * eps)
        a, n = analytic[name], numeric
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        report.per_param[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    for _, p in params:
        p.zero_grad()
    return report


def glorot(rng: np.random.Generator, shape: tuple, requires_grad: bool = True) -> Tensor:
    """Glorot-uniform initialized parameter tensor."""
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
