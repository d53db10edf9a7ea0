# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Reverse-mode automatic differentiation over NumPy arrays.

`Tensor` wraps a float64 array. Operations on tensors record, for every input that requires a
gradient, a vector-Jacobian function; `Tensor.backward()` walks the recorded graph in reverse
topological order and accumulates `grad` on every tensor that requires one.

Operations on tensors that do not require gradients record nothing, so the solver code can be
written once against this API and run on plain data at NumPy speed.

You can use this library as follows:

```python
from fns.v0.autodiff import Tensor, relu

w = Tensor(np.ones((3, 2)), requires_grad=True)
x = Tensor(np.arange(12.0).reshape(4, 3))
loss = relu(x @ w).sum()
loss.backward()
w.grad      # d loss / d w
```
"""

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from fns.v0.config import Error

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 4

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class ShapeError(Error):
    """Raised when operand shapes are incompatible."""


class GradientError(Error):
    """Raised when a backward pass is requested on an invalid graph."""


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that broadcasting added or stretched to reach `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array value with an optional gradient and the graph record that produced it."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents")

    # ndarray op Tensor defers to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, value: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(value, Tensor):
            value = value.value
        self.value = np.array(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple[Tuple["Tensor", Callable[[np.ndarray], np.ndarray]], ...] = ()

    @classmethod
    def _result(
        cls,
        value: np.ndarray,
        parents: Iterable[Tuple["Tensor", Callable[[np.ndarray], np.ndarray]]],
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.value = value
        out.grad = None
        out.name = None
        out._parents = tuple((p, vjp) for p, vjp in parents if p.requires_grad)
        out.requires_grad = bool(out._parents)
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the value."""
        return self.value.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.value.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return self.value.size

    @property
    def T(self) -> "Tensor":
        """Transpose of a 2D tensor."""
        return transpose(self)

    def numpy(self) -> np.ndarray:
        """The value (not a copy)."""
        return self.value

    def detach(self) -> "Tensor":
        """Same value, cut from the graph."""
        return Tensor(self.value)

    def zero_grad(self):
        """Forget the accumulated gradient."""
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate d self / d leaf into every reachable tensor that requires a gradient.

        Args:
            grad: upstream gradient; may be omitted for scalar tensors.
        """
        if not self.requires_grad:
            raise GradientError("backward() on a tensor that does not require a gradient")
        if grad is None:
            if self.size != 1:
                raise GradientError(f"backward() on a tensor of shape {self.shape} needs a grad")
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"upstream gradient {grad.shape} does not match {self.shape}")

        order = self._topological_order()
        pending: Dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            upstream = pending.pop(id(node), None)
            if upstream is None:
                continue
            if not node._parents:
                node.grad = upstream if node.grad is None else node.grad + upstream
                continue
            for parent, vjp in node._parents:
                contribution = vjp(upstream)
                key = id(parent)
                pending[key] = contribution if key not in pending else pending[key] + contribution

    def _topological_order(self) -> List["Tensor"]:
        # iterative depth-first search; unrolled solver graphs are too deep for recursion
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        order.reverse()
        return order

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return add(other, neg(self))

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(other, self)

    def __getitem__(self, index) -> "Tensor":
        return gather(self, index)

    def reshape(self, *shape) -> "Tensor":
        """Tensor with the same values in a new shape."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        """Sum over `axis` (all axes by default)."""
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        """Short summary of the tensor."""
        flag = ", requires_grad" if self.requires_grad else ""
        return f"<Tensor shape={self.shape}{flag}>"


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap `value` as a constant tensor unless it already is a tensor."""
    return value if isinstance(value, Tensor) else Tensor(value)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise sum with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError as e:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return Tensor._result(
        value,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def neg(a: Tensor) -> Tensor:
    """Elementwise negation."""
    return Tensor._result(-a.value, [(a, lambda g: -g)])


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError as e:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from e
    return Tensor._result(
        value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise quotient with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    return mul(a, reciprocal(b))


def reciprocal(a: Tensor) -> Tensor:
    """Elementwise 1 / a."""
    value = 1.0 / a.value
    return Tensor._result(value, [(a, lambda g: -g * value * value)])


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of 2D (or 1D) tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    value = a.value @ b.value
    if b.ndim == 1:
        return Tensor._result(
            value, [(a, lambda g: np.outer(g, b.value)), (b, lambda g: a.value.T @ g)]
        )
    return Tensor._result(value, [(a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)])


def relu(a: Tensor) -> Tensor:
    """Elementwise max(a, 0); the derivative at 0 is taken as 0."""
    mask = a.value > 0
    return Tensor._result(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def cos(a: Tensor) -> Tensor:
    """Elementwise cosine."""
    return Tensor._result(np.cos(a.value), [(a, lambda g: -g * np.sin(a.value))])


def sin(a: Tensor) -> Tensor:
    """Elementwise sine."""
    return Tensor._result(np.sin(a.value), [(a, lambda g: g * np.cos(a.value))])


def complex_exp(phase: Tensor) -> Tuple[Tensor, Tensor]:
    """Real and imaginary parts of exp(i phase)."""
    return cos(phase), sin(phase)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root."""
    value = np.sqrt(a.value)
    return Tensor._result(value, [(a, lambda g: g * 0.5 / np.where(value > 0, value, np.inf))])


def tensor_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Sum over `axis` (all axes by default)."""
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return Tensor._result(np.asarray(value), [(a, vjp)])


def mean_pool(a: Tensor) -> Tensor:
    """Mean over the rows of an (N, k) tensor, shape (1, k)."""
    n = a.shape[0]
    return Tensor._result(
        a.value.mean(axis=0, keepdims=True), [(a, lambda g: np.repeat(g / n, n, axis=0))]
    )


def gather(a: Tensor, index) -> Tensor:
    """Select entries with NumPy indexing; repeated indices accumulate in the gradient."""
    value = a.value[index]

    def vjp(g):
        grad = np.zeros_like(a.value)
        np.add.at(grad, index, g)
        return grad

    return Tensor._result(np.array(value), [(a, vjp)])


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Same values in a new shape."""
    try:
        value = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from e
    return Tensor._result(value, [(a, lambda g: g.reshape(a.shape))])


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute the axes (reverse them by default)."""
    inverse = None if axes is None else np.argsort(axes)
    return Tensor._result(
        np.transpose(a.value, axes), [(a, lambda g: np.transpose(g, inverse))]
    )


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """Concatenate along `axis`."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    parents = []
    for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):

        def vjp(g, lo=lo, hi=hi):
            return np.take(g, np.arange(lo, hi), axis=axis)

        parents.append((t, vjp))
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from e
    return Tensor._result(value, parents)


def sparse_matmul(matrix: sp.spmatrix, a: ArrayLike) -> Tensor:
    """Product of a constant sparse matrix with a tensor.

    A tensor whose leading axis matches the matrix columns is multiplied as a matrix; otherwise
    it is flattened (a block vector against its scalar matrix) and the result takes its shape
    when the matrix is square.
    """
    a = as_tensor(a)
    rows, cols = matrix.shape
    if a.ndim >= 1 and a.shape[0] == cols and a.ndim <= 2:
        flat = False
        value = matrix @ a.value
        out_shape = (rows,) + a.shape[1:]
    elif a.size == cols:
        flat = True
        value = matrix @ a.value.ravel()
        out_shape = a.shape if rows == cols else (rows,)
    else:
        raise ShapeError(f"cannot multiply a {matrix.shape} matrix with shape {a.shape}")

    def vjp(g):
        if flat:
            return (matrix.T @ g.ravel()).reshape(a.shape)
        return matrix.T @ g

    return Tensor._result(np.asarray(value).reshape(out_shape), [(a, vjp)])


def norm2(a: Tensor) -> Tensor:
    """Euclidean norm of all entries (gradient zero at the origin)."""
    value = float(np.linalg.norm(a.value))
    scale = 1.0 / value if value > 0 else 0.0
    return Tensor._result(np.array(value), [(a, lambda g: g * a.value * scale)])


def numerical_gradient(
    fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-6
) -> np.ndarray:
    """Central finite difference gradient of the scalar `fn()` with respect to `param`."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = float(fn().value)
        flat[i] = original - eps
        minus = float(fn().value)
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error between two gradients."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-30)
    return float(np.linalg.norm(analytic - numeric) / scale)
