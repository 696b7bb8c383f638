"""Reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps an ndarray and, when any input requires a gradient,
records a closure that pushes the output gradient back to its parents.
``backward`` walks the recorded graph in reverse topological order.
Training runs in float32; gradient checks rebuild everything in float64.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from structpos.errors import NoRecordedForward, ShapeMismatch

DEFAULT_DTYPE = np.float32

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense array with an optional gradient accumulator."""

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = None,
        _parents: tuple[Tensor, ...] = (),
    ) -> None:
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # *** properties ***

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Detached copy of the data."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    # *** graph plumbing ***

    def _lift(self, other: Tensor | float | np.ndarray) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    @staticmethod
    def _result(
        data: np.ndarray,
        parents: tuple[Tensor, ...],
        backward: Callable[[np.ndarray], None],
    ) -> Tensor:
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents)
        if out.requires_grad:
            out._backward = backward
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients into every leaf that requires them.

        Raises:
            NoRecordedForward: If this value was not produced by recorded ops.
        """
        if not self.requires_grad or self._backward is None:
            raise NoRecordedForward("backward() needs the output of a recorded forward pass")

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # release the graph; intermediate values are never reused
                node._backward = None
                node._parents = ()

    # *** elementwise binary ***

    def __add__(self, other: Tensor | float | np.ndarray) -> Tensor:
        other = self._lift(other)

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g)
            other._accumulate(g)

        return Tensor._result(self.data + other.data, (self, other), _backward)

    __radd__ = __add__

    def __sub__(self, other: Tensor | float | np.ndarray) -> Tensor:
        other = self._lift(other)

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g)
            other._accumulate(-g)

        return Tensor._result(self.data - other.data, (self, other), _backward)

    def __rsub__(self, other: float | np.ndarray) -> Tensor:
        return self._lift(other) - self

    def __mul__(self, other: Tensor | float | np.ndarray) -> Tensor:
        other = self._lift(other)

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        return Tensor._result(self.data * other.data, (self, other), _backward)

    __rmul__ = __mul__

    def __truediv__(self, other: Tensor | float | np.ndarray) -> Tensor:
        other = self._lift(other)

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g / other.data)
            other._accumulate(-g * self.data / (other.data * other.data))

        return Tensor._result(self.data / other.data, (self, other), _backward)

    def __neg__(self) -> Tensor:
        def _backward(g: np.ndarray) -> None:
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), _backward)

    def __matmul__(self, other: Tensor | np.ndarray) -> Tensor:
        other = self._lift(other)
        if self.ndim < 2 or other.ndim < 2 or self.shape[-1] != other.shape[-2]:
            raise ShapeMismatch(f"Cannot matmul {self.shape} by {other.shape}")

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g @ np.swapaxes(other.data, -1, -2))
            other._accumulate(np.swapaxes(self.data, -1, -2) @ g)

        return Tensor._result(self.data @ other.data, (self, other), _backward)

    # *** shape ***

    def reshape(self, *shape: int) -> Tensor:
        def _backward(g: np.ndarray) -> None:
            self._accumulate(g.reshape(self.shape))

        return Tensor._result(self.data.reshape(shape), (self,), _backward)

    def transpose(self, *axes: int) -> Tensor:
        inverse = tuple(int(a) for a in np.argsort(axes))

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g.transpose(inverse))

        return Tensor._result(self.data.transpose(axes), (self,), _backward)

    @property
    def T(self) -> Tensor:  # noqa: N802
        return self.transpose(*reversed(range(self.ndim)))

    def take(self, indices: np.ndarray | Sequence[int]) -> Tensor:
        """Gather rows along axis 0; gradients scatter-add back."""
        index = np.asarray(indices, dtype=np.int64)

        def _backward(g: np.ndarray) -> None:
            if not self.requires_grad:
                return
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)

        return Tensor._result(self.data[index], (self,), _backward)

    # *** reductions ***

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        def _backward(g: np.ndarray) -> None:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor._result(
            np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), _backward
        )

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # *** nonlinearities ***

    def tanh(self) -> Tensor:
        out_data = np.tanh(self.data)

        def _backward(g: np.ndarray) -> None:
            self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._result(out_data, (self,), _backward)

    def relu(self) -> Tensor:
        def _backward(g: np.ndarray) -> None:
            self._accumulate(g * (self.data > 0))

        return Tensor._result(np.maximum(self.data, 0), (self,), _backward)

    def gelu(self) -> Tensor:
        """Tanh approximation of GELU; smooth everywhere."""
        x = self.data
        inner = np.tanh(_GELU_C * (x + 0.044715 * x**3))

        def _backward(g: np.ndarray) -> None:
            d_inner = (1.0 - inner * inner) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
            self._accumulate(g * (0.5 * (1.0 + inner) + 0.5 * x * d_inner))

        return Tensor._result(0.5 * x * (1.0 + inner), (self,), _backward)

    def softmax(self, axis: int = -1) -> Tensor:
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        exps = np.exp(shifted)
        probs = exps / exps.sum(axis=axis, keepdims=True)

        def _backward(g: np.ndarray) -> None:
            self._accumulate(probs * (g - (g * probs).sum(axis=axis, keepdims=True)))

        return Tensor._result(probs, (self,), _backward)

    def normalize(self, eps: float) -> Tensor:
        """Zero-mean, unit-variance over the last axis."""
        centred = self.data - self.data.mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
        xhat = centred * inv_std

        def _backward(g: np.ndarray) -> None:
            self._accumulate(
                inv_std
                * (
                    g
                    - g.mean(axis=-1, keepdims=True)
                    - xhat * (g * xhat).mean(axis=-1, keepdims=True)
                )
            )

        return Tensor._result(xhat, (self,), _backward)


# ---------------------------------------------------------------------------
# Multi-operand ops
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis``."""
    parts = tuple(tensors)
    sizes = [t.shape[axis] for t in parts]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g: np.ndarray) -> None:
        for part, piece in zip(parts, np.split(g, splits, axis=axis), strict=True):
            part._accumulate(piece)

    return Tensor._result(np.concatenate([t.data for t in parts], axis=axis), parts, _backward)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with explicit output, e.g. ``"hid,ijd->hij"``.

    Every input index must appear in the output or in the other operand,
    which keeps each gradient expressible as another einsum.
    """
    inputs, out = subscripts.replace(" ", "").split("->")
    left, right = inputs.split(",")
    for mine, theirs in ((left, right), (right, left)):
        if not set(mine) <= set(out) | set(theirs) or len(set(mine)) != len(mine):
            raise ShapeMismatch(f"Unsupported einsum subscripts {subscripts!r}")

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out},{right}->{left}", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{out},{left}->{right}", g, a.data))

    return Tensor._result(np.einsum(subscripts, a.data, b.data), (a, b), _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Layer normalisation over the last axis with learnable gain and bias."""
    return x.normalize(eps) * gain + bias


def cross_entropy(logits: Tensor, targets: np.ndarray | Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-softmax ``logits``."""
    target = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or target.shape != (logits.shape[0],):
        raise ShapeMismatch(
            f"cross_entropy needs (N, C) logits and (N,) targets, got {logits.shape} and "
            f"{target.shape}"
        )
    rows = np.arange(target.shape[0])
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    count = target.shape[0]

    def _backward(g: np.ndarray) -> None:
        grad = np.exp(log_probs)
        grad[rows, target] -= 1.0
        logits._accumulate(grad * (g / count))

    return Tensor._result(np.asarray(-log_probs[rows, target].mean()), (logits,), _backward)
