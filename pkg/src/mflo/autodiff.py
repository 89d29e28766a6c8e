"""Dense float64 tensors with taped reverse-mode differentiation.

Everything differentiable in this package is built on the ``Tensor`` class
below.  Each operation records its parents and a backward closure on the
tensor it produces; ``backward()`` on a scalar loss walks the recorded tape
in reverse topological order and accumulates gradients.  The tape is rebuilt
on every forward pass, values are always float64, and the traversal order is
deterministic, so two identical forward passes yield bit-identical gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NumericalError(RuntimeError):
    """Raised when linear algebra fails beyond recoverable jitter."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array plus an optional gradient and tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None and self.grad.shape == self.data.shape:
            self.grad.fill(0.0)
        else:
            self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- backprop ---------------------------------------------------------

    def backward(self) -> None:
        """Populate gradients of every reachable tensor with requires_grad."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, _parents=tuple(parents), _backward=backward if req else None, op=op)


# -- elementwise arithmetic (numpy broadcasting) ----------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: {a.shape} vs {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backward, "div")


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    e = float(exponent)
    out = a.data**e

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * e * a.data ** (e - 1.0))

    return _make(out, (a,), backward, f"pow{e}")


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy `@` semantics."""
    a, b = _lift(a), _lift(b)
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul: only 1-D/2-D supported, got {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from None

    def backward(g):
        a2 = a.data if a.ndim == 2 else a.data[None, :]
        b2 = b.data if b.ndim == 2 else b.data[:, None]
        if a.ndim == 1 and b.ndim == 1:
            g2 = np.asarray(g).reshape(1, 1)
        elif a.ndim == 1:
            g2 = np.asarray(g).reshape(1, -1)
        elif b.ndim == 1:
            g2 = np.asarray(g).reshape(-1, 1)
        else:
            g2 = g
        if a.requires_grad:
            a._accumulate((g2 @ b2.T).reshape(a.shape))
        if b.requires_grad:
            b._accumulate((a2.T @ g2).reshape(b.shape))

    return _make(out, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    out = a.data.T.copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(out, (a,), backward, "transpose")


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def getitem(a, idx) -> Tensor:
    a = _lift(a)
    out = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(out, (a,), backward, "getitem")


def diag_part(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diag_part: expected square matrix, got {a.shape}")
    n = a.shape[0]
    return getitem(a, (np.arange(n), np.arange(n)))


def diag_embed(v) -> Tensor:
    v = _lift(v)
    if v.ndim != 1:
        raise ShapeError(f"diag_embed: expected vector, got {v.shape}")
    out = np.diag(v.data)

    def backward(g):
        if v.requires_grad:
            v._accumulate(np.diagonal(g).copy())

    return _make(out, (v,), backward, "diag_embed")


# -- nonlinearities ----------------------------------------------------------


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _make(out, (a,), backward, "relu")


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _make(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = _lift(a)
    out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out, (a,), backward, "log")


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out)

    return _make(out, (a,), backward, "sqrt")


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably for large |x|."""
    a = _lift(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        if a.requires_grad:
            # sigmoid(x), stable on both tails
            sig = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                           np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
            a._accumulate(g * sig)

    return _make(out, (a,), backward, "softplus")


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    a = _lift(a)
    out = np.maximum(a.data, floor)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > floor))

    return _make(out, (a,), backward, "clamp_min")


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out, (a,), backward, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis] if isinstance(axis, int) else int(np.prod([a.data.shape[i] for i in axis]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def log_sum_exp(a, axis=None, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))), stable for large inputs; backward is softmax."""
    a = _lift(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_keep = np.log(total) + m
    if keepdims:
        out = out_keep
    elif axis is None:
        out = out_keep.reshape(())
    else:
        out = out_keep.squeeze(axis=axis)
    soft = shifted / total

    def backward(g):
        if a.requires_grad:
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(soft * g)

    return _make(out, (a,), backward, "log_sum_exp")


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax over one axis, via exp(x - logsumexp(x))."""
    return exp(sub(a, log_sum_exp(a, axis=axis, keepdims=True)))


def norm(a) -> Tensor:
    """Euclidean norm of the flattened tensor."""
    return sqrt(tsum(mul(a, a)))


# -- Cholesky and triangular solves ------------------------------------------


def cholesky(a) -> Tensor:
    """Lower Cholesky factor of a symmetric PSD matrix.

    Raises NumericalError when the factorization fails; callers that want
    jitter recovery should catch it and retry with a larger diagonal shift.
    """
    a = _lift(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky: expected square matrix, got {a.shape}")
    try:
        low = np.linalg.cholesky(a.data)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"cholesky: matrix of shape {a.shape} not positive definite") from err

    def backward(g):
        if not a.requires_grad:
            return
        # Reverse-mode rule for A = L L^T (symmetrized, since A is built
        # as an explicitly symmetric function of its inputs).
        middle = np.tril(low.T @ g)
        middle[np.diag_indices_from(middle)] *= 0.5
        tmp = solve_triangular(low, middle, lower=True, trans="T")
        grad_a = solve_triangular(low, tmp.T, lower=True, trans="T").T
        a._accumulate(0.5 * (grad_a + grad_a.T))

    return _make(low, (a,), backward, "cholesky")


def triangular_solve(l, b, *, trans: bool = False) -> Tensor:
    """Solve L x = b (or L^T x = b when trans) for lower-triangular L."""
    l, b = _lift(l), _lift(b)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise ShapeError(f"triangular_solve: L must be square, got {l.shape}")
    if b.shape[0] != l.shape[0]:
        raise ShapeError(f"triangular_solve: {l.shape} vs {b.shape}")
    x = solve_triangular(l.data, b.data, lower=True, trans="T" if trans else "N")

    def backward(g):
        gb = solve_triangular(l.data, g, lower=True, trans="N" if trans else "T")
        if b.requires_grad:
            b._accumulate(gb)
        if l.requires_grad:
            x2 = x if x.ndim == 2 else x[:, None]
            gb2 = gb if gb.ndim == 2 else gb[:, None]
            if trans:
                gl = -(x2 @ gb2.T)
            else:
                gl = -(gb2 @ x2.T)
            l._accumulate(np.tril(gl))

    return _make(x, (l, b), backward, "triangular_solve")


# -- optimizer ---------------------------------------------------------------


class AdamState:
    """Per-parameter Adam moments plus hyperparameters."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError(f"Adam learning_rate must be > 0, got {learning_rate}")
        self.step_count = 0
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment = [np.zeros_like(p.data) for p in params]
        self.second_moment = [np.zeros_like(p.data) for p in params]


class Adam:
    """Standard Adam with bias correction, applied in place to Tensors."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(self.params, learning_rate, beta1, beta2, epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        s = self.state
        s.step_count += 1
        bc1 = 1.0 - s.beta1**s.step_count
        bc2 = 1.0 - s.beta2**s.step_count
        scale = s.learning_rate / bc1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            m = s.first_moment[i]
            v = s.second_moment[i]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            denom = np.sqrt(v / bc2)
            denom += s.epsilon
            p.data -= scale * m / denom
