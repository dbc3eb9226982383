"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and records the operation that produced it.
Calling `backward()` on a scalar result walks the recorded graph once in
reverse topological order and accumulates gradients into every tensor
created with `requires_grad=True`. A graph is single-use: running
`backward()` through nodes that already participated in a backward pass
raises `LifecycleError`.

Only the primitives needed by the sparse convolutions and the loss heads
are provided; everything else is composed from them.
"""

from __future__ import annotations

import numpy as np

from .errors import LifecycleError, ShapeError

__all__ = ["Tensor", "as_tensor", "log_softmax", "softmax", "scatter_rows"]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents)
        self._backward = _backward
        self._consumed = False

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape))

        return Tensor(out_data, _parents=(self, other), _backward=backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        a, b = self.data, other.data

        def backward(g):
            return (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))

        return Tensor(out_data, _parents=(self, other), _backward=backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __truediv__(self, other):
        other = as_tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return as_tensor(other) * self ** -1.0

    def __pow__(self, exponent: float):
        p = float(exponent)
        out_data = self.data ** p

        def backward(g):
            return (g * p * self.data ** (p - 1.0),)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = self.data @ other.data
        a, b = self.data, other.data

        def backward(g):
            if a.ndim == 1 and b.ndim == 1:
                return (g * b, g * a)
            ga = np.outer(g, b) if b.ndim == 1 else g @ b.T
            gb = np.outer(a, g) if a.ndim == 1 else a.T @ g
            return (ga, gb)

        return Tensor(out_data, _parents=(self, other), _backward=backward)

    # -- elementwise functions ------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            return (g * out_data,)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    def log(self):
        def backward(g):
            return (g / self.data,)

        return Tensor(np.log(self.data), _parents=(self,), _backward=backward)

    def abs(self):
        def backward(g):
            return (g * np.sign(self.data),)

        return Tensor(np.abs(self.data), _parents=(self,), _backward=backward)

    def leaky_relu(self, negative_slope: float = 0.1):
        slope = float(negative_slope)
        mask = self.data > 0

        def backward(g):
            return (g * np.where(mask, 1.0, slope),)

        return Tensor(np.where(mask, self.data, slope * self.data), _parents=(self,), _backward=backward)

    def relu(self):
        return self.leaky_relu(0.0)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g_exp = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_exp, shape).copy(),)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- indexing and shaping ---------------------------------------------

    def reshape(self, shape):
        orig = self.data.shape

        def backward(g):
            return (g.reshape(orig),)

        return Tensor(self.data.reshape(shape), _parents=(self,), _backward=backward)

    def take(self, indices, axis: int = 0):
        """Gather along `axis` with an integer array; repeats allowed."""
        idx = np.asarray(indices, dtype=np.intp)
        out_data = np.take(self.data, idx, axis=axis)
        shape = self.data.shape

        def backward(g):
            full = np.zeros(shape, dtype=np.float64)
            key = tuple(idx if d == axis else slice(None) for d in range(len(shape)))
            np.add.at(full, key, g)
            return (full,)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    # -- backward pass -----------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(f"upstream gradient shape {grad.shape} != output shape {self.data.shape}")

        # Iterative topological sort over grad-requiring parents.
        topo: list[Tensor] = []
        state: dict[int, int] = {}  # 0 = entered, 1 = finished
        stack = [self]
        while stack:
            node = stack[-1]
            nid = id(node)
            if state.get(nid) is None:
                state[nid] = 0
                for p in node._parents:
                    if p.requires_grad and state.get(id(p)) is None:
                        stack.append(p)
            else:
                stack.pop()
                if state[nid] == 0:
                    state[nid] = 1
                    topo.append(node)

        if any(node._consumed for node in topo):
            raise LifecycleError("backward graph already consumed; rebuild the forward pass")

        self.grad = grad
        for node in reversed(topo):
            node._consumed = True
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if not parent.requires_grad or g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def scatter_rows(n_rows: int, indices, updates: Tensor) -> Tensor:
    """Rows of `updates` summed into a zero (n_rows, C) tensor at `indices`."""
    updates = as_tensor(updates)
    idx = np.asarray(indices, dtype=np.intp)
    out_data = np.zeros((n_rows,) + updates.data.shape[1:], dtype=np.float64)
    np.add.at(out_data, idx, updates.data)

    def backward(g):
        return (g[idx],)

    return Tensor(out_data, _parents=(updates,), _backward=backward)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax; the shift is detached (it has zero gradient)."""
    t = as_tensor(t)
    shift = np.max(t.data, axis=axis, keepdims=True)
    shifted = t - Tensor(shift)
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(t, axis=axis).exp()
