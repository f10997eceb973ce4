"""Minimal reverse-mode autodiff over dense numpy arrays.

Every differentiable operation returns a new :class:`Tensor` holding its
parents and a closure that maps the output gradient to parent gradients.
``backward`` runs a topological sweep and sums gradients across multiple
uses. Storage defaults to float32; reductions accumulate in float64.
Graph recording only happens when some input requires gradients, so
evaluation-mode code pays no tape overhead.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional float array, optionally tracked on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar used when assembling losses --

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __mul__(self, scalar):
        return mul_scalar(self, float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return mul_scalar(self, 1.0 / float(scalar))

    def sum(self):
        return sum_all(self)


def parameter(data, dtype=np.float32):
    """A leaf tensor that collects gradients."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _node(data, parents, backward):
    req = _grad_enabled and any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def sum_all(a: Tensor) -> Tensor:
    total = np.sum(a.data, dtype=np.float64)
    out = np.asarray(total, dtype=a.dtype)

    def backward(g):
        return (np.full(a.shape, g, dtype=a.dtype),)

    return _node(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _node(np.maximum(a.data, 0), (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Elementwise clip; gradient is zero outside [lo, hi]."""
    if lo > hi:
        raise ValueError(f"clamp bounds reversed: lo={lo} > hi={hi}")
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * mask,)

    return _node(np.clip(a.data, lo, hi), (a,), backward)


def round_ties_even(a: Tensor) -> Tensor:
    """Elementwise rounding with ties-to-even; gradient is zero."""
    return _node(np.rint(a.data), (a,), lambda g: (np.zeros(a.shape, a.dtype),))


def add_uniform_noise(a: Tensor, lo: float, hi: float, seed) -> Tensor:
    """Add i.i.d. uniform noise from [lo, hi); gradient is the identity.

    ``seed`` may be an integer or a ``numpy.random.Generator``; an integer
    makes the op self-contained and bitwise reproducible.
    """
    if lo > hi:
        raise ValueError(f"noise bounds reversed: lo={lo} > hi={hi}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(
        np.random.PCG64(seed)
    )
    noise = rng.uniform(lo, hi, size=a.shape).astype(a.dtype)
    return _node(a.data + noise, (a,), lambda g: (g,))


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; fills ``grad`` on the graph."""
    if loss.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative post-order topological sort
    order: List[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.asarray(1.0, dtype=loss.dtype)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.dtype, copy=True)
            else:
                parent.grad += g


@dataclass
class AdamState:
    """Optimizer state for a fixed list of parameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: List[Tensor], state: AdamState) -> None:
    """One Adam update with bias correction; clears gradients afterwards."""
    if not state.m:
        state.m = [np.zeros(p.shape, p.dtype) for p in params]
        state.v = [np.zeros(p.shape, p.dtype) for p in params]
    if len(state.m) != len(params):
        raise ValueError("AdamState was initialized for a different parameter set")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} has no gradient; run backward first")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


def zero_grads(params: List[Tensor]) -> None:
    for p in params:
        p.grad = None
