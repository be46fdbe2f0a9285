"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Only the operations needed by the MLP models and the perturbation
optimizers are provided. Each Tensor records its parents and a backward
closure; ``backward`` replays the chain rule over a topological order of
the graph. All arithmetic is 64-bit and deterministic.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class Tensor:
    """A shaped float64 array with optional gradient tracking.

    ``grad`` is populated by ``backward`` and always matches ``data`` in
    shape. Tensors created by operations hold references to their parents,
    forming the computation graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        if self.data.shape != other.data.shape:
            raise ShapeError(f"add: {self.data.shape} vs {other.data.shape}")
        out = Tensor(self.data + other.data, _parents=(self, other))

        def back(g):
            self._accumulate(g)
            other._accumulate(g)

        out._backward = back
        return out

    def __sub__(self, other):
        other = _as_tensor(other)
        if self.data.shape != other.data.shape:
            raise ShapeError(f"sub: {self.data.shape} vs {other.data.shape}")
        out = Tensor(self.data - other.data, _parents=(self, other))

        def back(g):
            self._accumulate(g)
            other._accumulate(-g)

        out._backward = back
        return out

    def __mul__(self, other):
        other = _as_tensor(other)
        if other.data.shape not in ((), self.data.shape):
            raise ShapeError(f"mul: {self.data.shape} vs {other.data.shape}")
        out = Tensor(self.data * other.data, _parents=(self, other))

        def back(g):
            self._accumulate(g * other.data)
            other._accumulate(np.sum(g * self.data).reshape(other.data.shape)
                              if other.data.shape == () else g * self.data)

        out._backward = back
        return out

    __rmul__ = __mul__

    def scale(self, c: float) -> "Tensor":
        """Multiply by a python scalar constant (no gradient to c)."""
        out = Tensor(self.data * c, _parents=(self,))

        def back(g):
            self._accumulate(g * c)

        out._backward = back
        return out

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum(), _parents=(self,))

        def back(g):
            self._accumulate(np.full_like(self.data, g))

        out._backward = back
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = Tensor(self.data.mean(), _parents=(self,))

        def back(g):
            self._accumulate(np.full_like(self.data, g / n))

        out._backward = back
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """An untracked leaf tensor."""
    return Tensor(data)


def parameter(data) -> Tensor:
    """A tracked leaf tensor (receives gradients)."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# -- neural-network operations --------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x: (batch, in), w: (in, out), b: (out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"affine expects 2-d operands, got {x.shape} and {w.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine: input width {x.data.shape[1]} != weight rows {w.data.shape[0]}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine: bias shape {b.data.shape} != ({w.data.shape[1]},)")
    out = Tensor(x.data @ w.data + b.data, _parents=(x, w, b))

    def back(g):
        x._accumulate(g @ w.data.T)
        w._accumulate(x.data.T @ g)
        b._accumulate(g.sum(axis=0))

    out._backward = back
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,))

    def back(g):
        x._accumulate(g * (x.data > 0.0))

    out._backward = back
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, numerically stable for large |x|."""
    s = _sigmoid_values(x.data)
    out = Tensor(s, _parents=(x,))

    def back(g):
        x._accumulate(g * s * (1.0 - s))

    out._backward = back
    return out


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v, dtype=np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target].

    Stabilized by per-row max subtraction. ``targets`` is an integer array
    of class indices in [0, C).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (batch, C) logits, got {logits.shape}")
    batch, c = logits.data.shape
    if targets.shape != (batch,):
        raise ShapeError(f"targets shape {targets.shape} != ({batch},)")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
        raise ValueError(f"target out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    nll = -(shifted[np.arange(batch), targets]
            - np.log(exp.sum(axis=1)))
    out = Tensor(nll.mean(), _parents=(logits,))

    def back(g):
        grad = probs.copy()
        grad[np.arange(batch), targets] -= 1.0
        logits._accumulate(g * grad / batch)

    out._backward = back
    return out


def softmax_values(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no graph)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences (squared L2, averaged).

    The mean (rather than sum) keeps the loss scale independent of the
    feature dimensionality.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l2_distance: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    out = Tensor((diff * diff).mean(), _parents=(a, b))

    def back(g):
        d = g * 2.0 * diff / n
        a._accumulate(d)
        b._accumulate(-d)

    out._backward = back
    return out


# -- backward pass ----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every tensor reachable from ``loss``.

    Each operation's backward closure runs exactly once, in reverse
    topological order.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = []
    seen = set()

    def visit(t):
        stack = [(t, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

    visit(loss)
    loss.grad = np.float64(1.0)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# -- optimizers --------------------------------------------------------------


def sgd_step(params: list, lr: float) -> None:
    """In-place p <- p - lr * p.grad for each tracked parameter."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


class AdamState:
    """First/second moment buffers and step counter for one parameter list."""

    def __init__(self, params: list):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: list, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    t = state.t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params: list) -> None:
    for p in params:
        p.grad = None
