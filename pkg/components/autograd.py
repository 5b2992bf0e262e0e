# ============================================
# components/autograd.py
# ============================================

"""
Small reverse-mode differentiation engine over numpy arrays.

Only the operations the policy networks and the clipped policy-gradient loss
need are implemented. Every op records a closure that pushes the output
gradient to its parents; `backward` walks the graph in reverse topological
order and checks each gradient for NaN/Inf, naming the op that produced it.
"""

import contextlib
import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import NonFiniteError

ArrayLike = Union[np.ndarray, float, int]

# grad mode is tracked per thread
_grad_mode = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (rollouts, evaluation)."""
    previous = grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")
    # numpy defers `array op tensor` to the reflected Tensor op
    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: Sequence["Tensor"] = (),
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._parents = tuple(_parents)
        self._backward: Optional[Callable[[], None]] = None

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        out = _result(self.data + other.data, (self, other), "add")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad)
                other._accumulate(out.grad)
            out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = _result(-self.data, (self,), "neg")
        if out.requires_grad:
            def _backward():
                self._accumulate(-out.grad)
            out._backward = _backward
        return out

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        out = _result(self.data - other.data, (self, other), "sub")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad)
                other._accumulate(-out.grad)
            out._backward = _backward
        return out

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        out = _result(self.data * other.data, (self, other), "mul")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad * other.data)
                other._accumulate(out.grad * self.data)
            out._backward = _backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        out = _result(self.data / other.data, (self, other), "div")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad / other.data)
                other._accumulate(-out.grad * self.data / (other.data ** 2))
            out._backward = _backward
        return out

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        out = _result(self.data ** exponent, (self,), "pow")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))
            out._backward = _backward
        return out

    # -- elementwise functions ------------------------------------------------

    def exp(self) -> "Tensor":
        value = np.exp(self.data)
        out = _result(value, (self,), "exp")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad * value)
            out._backward = _backward
        return out

    def log(self) -> "Tensor":
        out = _result(np.log(self.data), (self,), "log")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad / self.data)
            out._backward = _backward
        return out

    def sqrt(self) -> "Tensor":
        value = np.sqrt(self.data)
        out = _result(value, (self,), "sqrt")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad * 0.5 / value)
            out._backward = _backward
        return out

    def elu(self) -> "Tensor":
        negative = np.expm1(np.minimum(self.data, 0.0))
        positive = self.data > 0
        value = np.where(positive, self.data, negative)
        out = _result(value, (self,), "elu")
        if out.requires_grad:
            def _backward():
                local = np.where(positive, 1.0, negative + 1.0)
                self._accumulate(out.grad * local)
            out._backward = _backward
        return out

    def clip(self, low: float, high: float) -> "Tensor":
        """Clamp; the gradient passes only where the input is inside [low, high]."""
        value = np.clip(self.data, low, high)
        out = _result(value, (self,), "clip")
        if out.requires_grad:
            def _backward():
                inside = (self.data >= low) & (self.data <= high)
                self._accumulate(out.grad * inside)
            out._backward = _backward
        return out

    # -- reductions and shape -------------------------------------------------

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        value = np.sum(self.data, axis=axis, keepdims=keepdims)
        out = _result(value, (self,), "sum")
        if out.requires_grad:
            def _backward():
                grad = out.grad
                if axis is not None and not keepdims:
                    grad = np.expand_dims(grad, axis)
                self._accumulate(np.broadcast_to(grad, self.data.shape))
            out._backward = _backward
        return out

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.data.shape
        out = _result(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad.reshape(original))
            out._backward = _backward
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - np.max(self.data, axis=axis, keepdims=True)
        exps = np.exp(shifted)
        value = exps / np.sum(exps, axis=axis, keepdims=True)
        out = _result(value, (self,), "softmax")
        if out.requires_grad:
            def _backward():
                inner = np.sum(out.grad * value, axis=axis, keepdims=True)
                self._accumulate(value * (out.grad - inner))
            out._backward = _backward
        return out

    def __getitem__(self, index) -> "Tensor":
        original = self.data.shape
        out = _result(self.data[index], (self,), "index")
        if out.requires_grad:
            def _backward():
                grad = np.zeros(original, dtype=np.float64)
                np.add.at(grad, index, out.grad)
                self._accumulate(grad)
            out._backward = _backward
        return out

    # -- graph traversal ------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Reverse-mode sweep from this node.

        Args:
            grad: Seed gradient; defaults to ones (a scalar loss)

        Raises:
            NonFiniteError: a gradient became NaN/Inf; names the producing op
        """
        order = _topological_order(self)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node.grad is None or node._backward is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NonFiniteError("non-finite gradient", node=node.name or node.op)
            node._backward()
        for node in order:
            if not node._parents and node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise NonFiniteError("non-finite gradient", node=node.name or node.op)


def _result(value: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    requires = grad_enabled() and any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=requires, _parents=parents if requires else (), op=op)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Leaf tensor that collects a gradient."""
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Multi-input ops
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """y = x @ weight.T + bias over any number of leading batch axes."""
    x, weight = as_tensor(x), as_tensor(weight)
    value = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        value = value + bias.data
        parents.append(bias)
    out = _result(value, parents, "linear")
    if out.requires_grad:
        def _backward():
            grad = out.grad
            x._accumulate(grad @ weight.data)
            flat_grad = grad.reshape(-1, grad.shape[-1])
            flat_x = x.data.reshape(-1, x.data.shape[-1])
            weight._accumulate(flat_grad.T @ flat_x)
            if bias is not None:
                bias._accumulate(flat_grad.sum(axis=0))
        out._backward = _backward
    return out


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Row-wise w = g * v / ||v||_2 for v of shape (out, in) and g of shape (out,)."""
    v, g = as_tensor(v), as_tensor(g)
    norm = np.sqrt(np.sum(v.data * v.data, axis=1, keepdims=True))
    direction = v.data / norm
    value = g.data[:, None] * direction
    out = _result(value, (v, g), "weight_norm")
    if out.requires_grad:
        def _backward():
            grad = out.grad
            projected = np.sum(grad * direction, axis=1, keepdims=True)
            g._accumulate(projected[:, 0])
            v._accumulate((g.data[:, None] / norm) * (grad - projected * direction))
        out._backward = _backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    value = np.concatenate([t.data for t in tensors], axis=axis)
    out = _result(value, tensors, "concat")
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def _backward():
            for tensor, piece in zip(tensors, np.split(out.grad, splits, axis=axis)):
                tensor._accumulate(piece)
        out._backward = _backward
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to `a`."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    out = _result(np.where(pick_a, a.data, b.data), (a, b), "minimum")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad * pick_a)
            b._accumulate(out.grad * ~pick_a)
        out._backward = _backward
    return out


def where(condition: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    condition = np.asarray(condition, dtype=bool)
    out = _result(np.where(condition, a.data, b.data), (a, b), "where")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad * condition)
            b._accumulate(out.grad * ~condition)
        out._backward = _backward
    return out


def broadcast_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = _result(np.array(np.broadcast_to(x.data, shape)), (x,), "broadcast")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad)
        out._backward = _backward
    return out
