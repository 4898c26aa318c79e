"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is double precision and desk scale: the goal is gradients that
survive tight finite-difference checks, not throughput. Each operation
records its parents and a closure that maps the output gradient to parent
gradients; `backward` replays the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(ValueError):
    """An operation was configured with an invalid hyperparameter."""


class EmptySequenceError(ValueError):
    """A row-pooling or sequence operation received zero rows."""


class GraphError(RuntimeError):
    """The autodiff graph was used outside its contract."""


_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, grad_fn) -> Tensor:
    """Wrap an op result, recording the graph edge only when it matters."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        return out
    return Tensor(data)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every graph node.

    Gradients add onto whatever is already stored, so two backward passes
    without zeroing yield exactly twice the gradient.
    """
    if loss.data.ndim != 0:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing to differentiate")

    # Iterative reverse topological order (graphs can be deep).
    topo = []
    visited = set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    # Per-pass gradients live in a scratch map; .grad is the persistent sum.
    scratch = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        g = scratch.pop(id(node), None)
        if g is None:
            continue
        if node.grad is not None:
            node.grad += g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = scratch.get(id(parent))
            if acc is None:
                scratch[id(parent)] = np.array(pg, dtype=np.float64, copy=True)
            else:
                acc += pg


def sgd_step(params, lr: float) -> None:
    """Plain SGD: subtract lr * grad in place, then zero the gradients."""
    for p in params:
        if p.grad is None:
            raise GraphError("sgd_step on a tensor without gradient storage")
        p.data -= lr * p.grad
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), grad_fn)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise DimensionError(f"matvec shapes {w.data.shape} x {x.data.shape}")
    out = w.data @ x.data

    def grad_fn(g):
        return np.outer(g, x.data), w.data.T @ g

    return _result(out, (w, x), grad_fn)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise DimensionError(f"dot shapes {a.data.shape} . {b.data.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return g * b.data, g * a.data

    return _result(out, (a, b), grad_fn)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.data.shape}")
    return _result(x.data.T, (x,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# Elementwise suite
# ---------------------------------------------------------------------------

def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op} shapes {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,))


def abs_(x: Tensor) -> Tensor:
    # subgradient at 0 is 0 (np.sign(0) == 0)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to keep exp arguments non-positive
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def logsumexp(x: Tensor) -> Tensor:
    """Stable log(sum(exp(x))) of a vector; gradient is softmax(x)."""
    if x.data.ndim != 1:
        raise DimensionError(f"logsumexp expects a vector, got shape {x.data.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    total = e.sum()
    return _result(m + np.log(total), (x,), lambda g: (g * e / total,))


def sum_all(x: Tensor) -> Tensor:
    return _result(x.data.sum(), (x,), lambda g: (np.full_like(x.data, g),))


def sq_l2(x: Tensor) -> Tensor:
    """Sum of squared entries (the squared 2-norm)."""
    return _result((x.data ** 2).sum(), (x,), lambda g: (g * 2.0 * x.data,))


def softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _result(s, (x,), grad_fn)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def concat(vectors) -> Tensor:
    """Concatenate 1-D tensors."""
    vectors = list(vectors)
    if not vectors:
        raise DimensionError("concat of zero vectors")
    for v in vectors:
        if v.data.ndim != 1:
            raise DimensionError(f"concat expects vectors, got shape {v.data.shape}")
    out = np.concatenate([v.data for v in vectors])
    sizes = [v.data.shape[0] for v in vectors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _result(out, tuple(vectors), grad_fn)


def concat_rows(mats) -> Tensor:
    """Stack matrices vertically (shared column count)."""
    mats = list(mats)
    if not mats:
        raise DimensionError("concat_rows of zero matrices")
    width = mats[0].data.shape[1]
    for m in mats:
        if m.data.ndim != 2 or m.data.shape[1] != width:
            raise DimensionError(f"concat_rows widths differ: {[m.data.shape for m in mats]}")
    out = np.concatenate([m.data for m in mats], axis=0)
    sizes = [m.data.shape[0] for m in mats]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _result(out, tuple(mats), grad_fn)


def concat_cols(mats) -> Tensor:
    """Stack matrices horizontally (shared row count)."""
    mats = list(mats)
    if not mats:
        raise DimensionError("concat_cols of zero matrices")
    rows = mats[0].data.shape[0]
    for m in mats:
        if m.data.ndim != 2 or m.data.shape[0] != rows:
            raise DimensionError(f"concat_cols heights differ: {[m.data.shape for m in mats]}")
    out = np.concatenate([m.data for m in mats], axis=1)
    sizes = [m.data.shape[1] for m in mats]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _result(out, tuple(mats), grad_fn)


def stack(tensors) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("stack of zero tensors")
    shape = tensors[0].data.shape
    for t in tensors:
        if t.data.shape != shape:
            raise DimensionError(f"stack shapes differ: {[t.data.shape for t in tensors]}")
    out = np.stack([t.data for t in tensors])

    def grad_fn(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _result(out, tuple(tensors), grad_fn)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def row(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"row expects a matrix, got shape {x.data.shape}")
    out = x.data[i]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def element(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 1:
        raise DimensionError(f"element expects a vector, got shape {x.data.shape}")
    out = x.data[i]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Embedding lookup: select rows of a table by integer index."""
    indices = np.asarray(indices, dtype=np.intp)
    out = table.data[indices]

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        return (full,)

    return _result(out, (table,), grad_fn)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def pool_max_rows(x: Tensor) -> Tensor:
    """Columnwise max over rows; ties route the gradient to the first maximal row."""
    if x.data.ndim != 2:
        raise DimensionError(f"pool_max_rows expects a matrix, got shape {x.data.shape}")
    if x.data.shape[0] == 0:
        raise EmptySequenceError("pool_max_rows over zero rows")
    arg = np.argmax(x.data, axis=0)  # first occurrence wins
    out = x.data[arg, np.arange(x.data.shape[1])]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[arg, np.arange(x.data.shape[1])] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def pool_mean_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"pool_mean_rows expects a matrix, got shape {x.data.shape}")
    rows = x.data.shape[0]
    if rows == 0:
        raise EmptySequenceError("pool_mean_rows over zero rows")
    out = x.data.mean(axis=0)

    def grad_fn(g):
        return (np.tile(g / rows, (rows, 1)),)

    return _result(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# Convolution, LSTM cell, dropout
# ---------------------------------------------------------------------------

def conv1d_same(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Same-length 1-D convolution over rows with zero padding.

    x: (T, d_in), filters: (w, d_in, d_c) with w odd, bias: (d_c,).
    """
    if x.data.ndim != 2 or filters.data.ndim != 3 or bias.data.ndim != 1:
        raise DimensionError(
            f"conv1d_same shapes x={x.data.shape} filters={filters.data.shape} "
            f"bias={bias.data.shape}")
    w, d_in, d_c = filters.data.shape
    if w % 2 == 0:
        raise ConfigurationError(f"convolution window must be odd, got {w}")
    t_len = x.data.shape[0]
    if t_len < 1:
        raise EmptySequenceError("conv1d_same over zero rows")
    if x.data.shape[1] != d_in or bias.data.shape[0] != d_c:
        raise DimensionError(
            f"conv1d_same shapes x={x.data.shape} filters={filters.data.shape} "
            f"bias={bias.data.shape}")
    half = (w - 1) // 2
    padded = np.zeros((t_len + w - 1, d_in))
    padded[half:half + t_len] = x.data
    windows = np.stack([padded[j:j + t_len] for j in range(w)])  # (w, T, d_in)
    out = np.tensordot(windows, filters.data, axes=([0, 2], [0, 1])) + bias.data

    def grad_fn(g):
        gx_pad = np.zeros_like(padded)
        gf = np.zeros_like(filters.data)
        for j in range(w):
            gx_pad[j:j + t_len] += g @ filters.data[j].T
            gf[j] = windows[j].T @ g
        return gx_pad[half:half + t_len], gf, g.sum(axis=0)

    return _result(out, (x, filters, bias), grad_fn)


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              w_x: Tensor, w_h: Tensor, b: Tensor):
    """One LSTM cell step; returns (h_t, c_t).

    w_x: (4*d_h, d_in), w_h: (4*d_h, d_h), b: (4*d_h,).
    Gate order: input, forget, candidate, output.
    """
    d_h = h_prev.data.shape[0]
    if (c_prev.data.shape != (d_h,) or w_x.data.shape[0] != 4 * d_h
            or w_h.data.shape != (4 * d_h, d_h) or b.data.shape != (4 * d_h,)
            or w_x.data.shape[1] != x_t.data.shape[0]):
        raise DimensionError(
            f"lstm_step shapes x={x_t.data.shape} h={h_prev.data.shape} "
            f"c={c_prev.data.shape} w_x={w_x.data.shape} w_h={w_h.data.shape} "
            f"b={b.data.shape}")
    gates = add(add(matvec(w_x, x_t), matvec(w_h, h_prev)), b)
    i = sigmoid(narrow(gates, 0, 0, d_h))
    f = sigmoid(narrow(gates, 0, d_h, 2 * d_h))
    g = tanh(narrow(gates, 0, 2 * d_h, 3 * d_h))
    o = sigmoid(narrow(gates, 0, 3 * d_h, 4 * d_h))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout: identity at evaluation time."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))
