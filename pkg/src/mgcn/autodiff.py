"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and remembers how it was produced; calling
:func:`backward` on a scalar walks the tape in reverse topological order and
accumulates gradients into ``.grad``. Only the handful of operations the
models need are provided. Sparse matrices enter as constants through
:func:`spmm`, never as differentiable values.

The tape is rebuilt on every forward pass, so reusing parameter Tensors
across steps is fine as long as ``grad`` is cleared (set to None) between
steps. Calling backward twice on the same graph double-counts.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis=axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value + b.value, (a, b))

    def back():
        _accum(a, _unbroadcast(out.grad, a.value.shape))
        _accum(b, _unbroadcast(out.grad, b.value.shape))

    out._backward = back
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value * b.value, (a, b))

    def back():
        _accum(a, _unbroadcast(out.grad * b.value, a.value.shape))
        _accum(b, _unbroadcast(out.grad * a.value, b.value.shape))

    out._backward = back
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))

    def back():
        _accum(a, out.grad @ b.value.T)
        _accum(b, a.value.T @ out.grad)

    out._backward = back
    return out


def spmm(s, x: Tensor, st=None) -> Tensor:
    """Multiply a constant scipy sparse matrix by a dense Tensor.

    ``st`` is the transpose of ``s`` in CSR form; pass it when the same
    matrix is multiplied every step, otherwise each call pays an
    O(nnz) transpose to build the backward operator.
    """
    if st is None:
        st = s.T.tocsr()
    out = Tensor(s @ x.value, (x,))

    def back():
        _accum(x, st @ out.grad)

    out._backward = back
    return out


def segment_sum_rows(x: Tensor, member_rows, seg_starts, seg_nodes, node_count) -> Tensor:
    """Sum runs of rows of ``x`` into an output of ``node_count`` rows.

    ``member_rows[i]`` is the output row that input row ``i`` feeds; the
    input must already be sorted so equal values of ``member_rows`` are
    contiguous. ``seg_starts``/``seg_nodes`` describe the runs: run ``j``
    starts at input row ``seg_starts[j]`` and lands on output row
    ``seg_nodes[j]``. Output rows that receive no run stay zero. The
    backward pass is a plain row gather, which is why this beats an
    equivalent 0/1 sparse matmul: no atomic scatter is needed anywhere.
    """
    member_rows = np.asarray(member_rows, dtype=np.int64)
    seg_starts = np.asarray(seg_starts, dtype=np.int64)
    seg_nodes = np.asarray(seg_nodes, dtype=np.int64)
    val = np.zeros((node_count, x.value.shape[1]))
    if len(seg_starts):
        val[seg_nodes] = np.add.reduceat(x.value, seg_starts, axis=0)
    out = Tensor(val, (x,))

    def back():
        _accum(x, out.grad[member_rows])

    out._backward = back
    return out


def gather_rows(x: Tensor, idx) -> Tensor:
    """Row selection x[idx]; duplicate indices accumulate on backward."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.value[idx], (x,))

    def back():
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.add.at(x.grad, idx, out.grad)

    out._backward = back
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.value, 0.0), (x,))

    def back():
        _accum(x, out.grad * (x.value > 0.0))

    out._backward = back
    return out


def tanh(x: Tensor) -> Tensor:
    val = np.tanh(x.value)
    out = Tensor(val, (x,))

    def back():
        _accum(x, out.grad * (1.0 - val * val))

    out._backward = back
    return out


def sigmoid(x: Tensor) -> Tensor:
    val = expit(x.value)
    out = Tensor(val, (x,))

    def back():
        _accum(x, out.grad * val * (1.0 - val))

    out._backward = back
    return out


def logsigmoid(x: Tensor) -> Tensor:
    """log of the logistic function, computed without overflow."""
    z = x.value
    val = -(np.log1p(np.exp(-np.abs(z))) + np.maximum(-z, 0.0))
    out = Tensor(val, (x,))

    def back():
        _accum(x, out.grad * expit(-z))

    out._backward = back
    return out


def tsum(x: Tensor, axis=None) -> Tensor:
    out = Tensor(x.value.sum(axis=axis), (x,))

    def back():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.value.shape))

    out._backward = back
    return out


def tmean(x: Tensor) -> Tensor:
    return mul(tsum(x), 1.0 / x.value.size)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy between row softmax and integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    n = len(labels)
    losses = lse - z[np.arange(n), labels]
    out = Tensor(losses.sum() / n, (logits,))

    def back():
        soft = np.exp(z - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), labels] -= 1.0
        _accum(logits, out.grad * soft / n)

    out._backward = back
    return out


def backward(loss: Tensor, free_graph: bool = True) -> None:
    """Accumulate d(loss)/d(node) into .grad for every node in the tape.

    With ``free_graph`` the tape's parent links and backward closures
    are dropped after the sweep. The closures form reference cycles
    with their output tensors, and a training loop allocates tape
    arrays far faster than the cycle collector reclaims them; breaking
    the links makes intermediates reclaimable by plain refcounting.
    Gradients and values stay available; only a second backward pass
    through the same graph becomes impossible.
    """
    if loss.value.size != 1:
        raise ValueError("backward requires a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()
    if free_graph:
        for node in topo:
            node._backward = None
            node._parents = ()


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
