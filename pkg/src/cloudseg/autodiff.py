"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a dense array plus an optional gradient slot; ops
build a computation graph of backward closures, and :meth:`Tensor.backward`
replays them in reverse topological order. Only the primitives this package's
network needs are provided. Neighborhood reductions route their gradients
through the arg-extremum entry (ties resolved to the lowest neighbor slot by
the kernels, which scan slots in ascending order).
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def accumulate(self, grad: np.ndarray) -> None:
        # backward closures must hand over arrays they will not mutate later
        if self.grad is None:
            self.grad = np.asarray(grad)
        else:
            self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data) if dtype is None else np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=False)


def _needs(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _needs(a, b), (a, b))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(grad, b.shape))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, _needs(a, b), (a, b))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(-_unbroadcast(grad, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, _needs(a, b), (a, b))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(grad * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, _needs(a, b), (a, b))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(grad @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ grad)

    out._backward = backward
    return out


def leaky_relu(a: Tensor, negative_slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, negative_slope * a.data)
    out = Tensor(out_data.astype(a.dtype, copy=False), _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            slope = np.asarray(negative_slope, dtype=grad.dtype)
            a.accumulate(np.where(mask, grad, slope * grad))

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(grad.reshape(a.shape))

    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _needs(*tensors),
        tuple(tensors),
    )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        pieces = np.split(grad, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate(piece)

    out._backward = backward
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop], _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = grad
            a.accumulate(full)

    out._backward = backward
    return out


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows by index; duplicate indices accumulate on backward."""
    indices = np.asarray(indices, dtype=np.int64)
    out = Tensor(a.data[indices], _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, indices, grad)
            a.accumulate(full)

    out._backward = backward
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()), _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, grad))

    out._backward = backward
    return out


def neighbor_min(a: Tensor, neighbors: np.ndarray) -> Tensor:
    """Per point, columnwise min of its neighbors' features (self excluded)."""
    values, arg = _kernels.neighbor_min(a.data, neighbors)
    out = Tensor(values, _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_kernels.scatter_add_cols(a.shape[0], arg, grad))

    out._backward = backward
    return out


def neighbor_max(a: Tensor, neighbors: np.ndarray) -> Tensor:
    """Per point, columnwise max of its neighbors' features (self excluded)."""
    values, arg = _kernels.neighbor_max(a.data, neighbors)
    out = Tensor(values, _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_kernels.scatter_add_cols(a.shape[0], arg, grad))

    out._backward = backward
    return out


def rows_max(a: Tensor) -> Tensor:
    """Global columnwise max over all rows -> (1, g); grads flow to argmax rows."""
    arg = np.argmax(a.data, axis=0)
    out = Tensor(a.data[arg, np.arange(a.shape[1])][None, :], _needs(a), (a,))

    def backward(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[arg, np.arange(a.shape[1])] = grad[0]
            a.accumulate(full)

    out._backward = backward
    return out


def cov_features(points: Tensor, neighbors: np.ndarray) -> Tensor:
    """Concat(xyz, vectorized 3x3 neighborhood covariance) -> (n, 12)."""
    out_data = _kernels.cov_features(points.data, neighbors)
    out = Tensor(out_data, _needs(points), (points,))

    def backward(grad):
        if points.requires_grad:
            points.accumulate(
                _kernels.cov_features_backward(points.data, neighbors, grad)
            )

    out._backward = backward
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-softmax at the target labels (max-stabilized)."""
    targets = np.asarray(targets, dtype=np.int64)
    n, q = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} != ({n},)")
    if targets.min() < 0 or targets.max() >= q:
        raise ValueError(f"target labels must lie in [0, {q})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), targets]))
    out = Tensor(np.asarray(loss), _needs(logits), (logits,))

    def backward(grad):
        if logits.requires_grad:
            softmax = np.exp(z - logsumexp[:, None])
            softmax[np.arange(n), targets] -= 1.0
            logits.accumulate(((softmax / n) * float(grad)).astype(logits.dtype))

    out._backward = backward
    return out
