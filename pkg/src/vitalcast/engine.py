"""Dense float64 tensors with reverse-mode automatic differentiation.

A deliberately small CPU engine: every value is a numpy array wrapped in a
:class:`Tensor` node, ops build an acyclic graph of backward closures, and
``Tensor.backward`` runs exact reverse-mode accumulation in topological
order.  64-bit floats throughout; the dynamic-programming losses downstream
are precision-sensitive and the models here are desk-scale.

Ops are pure: the same inputs always produce bit-identical outputs, and a
node whose inputs require no gradient is folded into a plain constant so
inference builds no graph at all.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over axes that numpy broadcasting introduced or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of the computation graph.

    ``data`` is a row-major float64 array, ``requires_grad`` marks trainable
    leaves, and interior nodes carry the parent references plus a backward
    rule mapping the output gradient to one gradient per parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_rule")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._rule: Callable | None = None

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

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], rule: Callable) -> "Tensor":
        if not any(p.requires_grad for p in parents):
            return Tensor(data)
        out = Tensor(data)
        out.requires_grad = True
        out._parents = parents
        out._rule = rule
        return out

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._rule is None:
                continue
            for parent, g in zip(node._parents, node._rule(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        out = a.data + b.data
        return Tensor._node(out, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._node(-a.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        out = a.data * b.data
        return Tensor._node(out, (a, b), lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return Tensor._lift(other) * self ** -1.0

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        out = a.data ** p
        return Tensor._node(out, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(
                f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
        if a.data.shape[-1] != b.data.shape[-2]:
            raise DimensionError(
                f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def rule(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
            return ga, gb

        return Tensor._node(out, (a, b), rule)

    def __getitem__(self, idx):
        a = self
        out = a.data[idx]

        def rule(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return (ga,)

        return Tensor._node(np.array(out, copy=True), (a,), rule)

    # -- reductions / shaping --------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def rule(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).copy(),)

        return Tensor._node(out, (a,), rule)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        out = a.data.reshape(*shape)
        return Tensor._node(out, (a,), lambda g: (g.reshape(a.data.shape),))

    def swapaxes(self, ax1: int, ax2: int):
        a = self
        out = np.swapaxes(a.data, ax1, ax2)
        return Tensor._node(np.ascontiguousarray(out), (a,),
                            lambda g: (np.swapaxes(g, ax1, ax2),))

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._node(out, (a,), lambda g: (g * out,))

    def log(self):
        a = self
        out = np.log(a.data)
        return Tensor._node(out, (a,), lambda g: (g / a.data,))

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._node(out, (a,), lambda g: (g * (1.0 - out * out),))


# -- neural ops ---------------------------------------------------------------


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine projection: x @ weights + bias, differentiable in all three."""
    x, weights, bias = Tensor._lift(x), Tensor._lift(weights), Tensor._lift(bias)
    if x.shape[-1] != weights.shape[0]:
        raise DimensionError(
            f"linear: input {x.shape} does not conform with weights {weights.shape}")
    if weights.shape[1] != bias.shape[-1]:
        raise DimensionError(
            f"linear: weights {weights.shape} do not conform with bias {bias.shape}")
    return x @ weights + bias


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: one of relu, elu, sigmoid."""
    x = Tensor._lift(x)
    if kind == "relu":
        out = np.maximum(x.data, 0.0)
        return Tensor._node(out, (x,), lambda g: (g * (x.data > 0),))
    if kind == "elu":
        out = np.where(x.data >= 0.0, x.data, np.expm1(x.data))
        return Tensor._node(out, (x,),
                            lambda g: (g * np.where(x.data >= 0.0, 1.0, out + 1.0),))
    if kind == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-x.data))
        return Tensor._node(out, (x,), lambda g: (g * out * (1.0 - out),))
    raise ValueError(f"unknown activation kind: {kind!r}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def elu(x: Tensor) -> Tensor:
    return activation(x, "elu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the last axis: first half times sigmoid(second half)."""
    x = Tensor._lift(x)
    d = x.shape[-1]
    if d % 2 != 0:
        raise DimensionError(f"glu needs an even last dimension, got {x.shape}")
    h = d // 2
    return x[..., :h] * sigmoid(x[..., h:])


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine gain+shift.

    The variance denominator is the feature count (population variance); `eps`
    keeps constant rows finite.
    """
    x, gain, shift = Tensor._lift(x), Tensor._lift(gain), Tensor._lift(shift)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + shift


def max_pool_1d(x: Tensor, kernel: int) -> Tensor:
    """Non-overlapping max pooling over the last axis (stride = kernel).

    A final partial window is reduced over its actual elements.  The gradient
    routes to the first maximal index of each window.
    """
    x = Tensor._lift(x)
    if kernel <= 0:
        raise ValueError(f"pooling kernel must be positive, got {kernel}")
    length = x.shape[-1]
    n_windows = -(-length // kernel)
    chunks = []
    argmaxes = []
    bounds = []
    for w in range(n_windows):
        lo, hi = w * kernel, min((w + 1) * kernel, length)
        seg = x.data[..., lo:hi]
        chunks.append(seg.max(axis=-1))
        argmaxes.append(seg.argmax(axis=-1))
        bounds.append(lo)
    out = np.stack(chunks, axis=-1)

    def rule(g):
        gx = np.zeros_like(x.data)
        for w, lo in enumerate(bounds):
            idx = np.expand_dims(argmaxes[w] + lo, -1)
            np.put_along_axis(gx, idx, np.expand_dims(g[..., w], -1), axis=-1)
        return (gx,)

    return Tensor._node(out, (x,), rule)


_INTERP_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _interp_matrix(m: int, target_len: int) -> np.ndarray:
    """Weights mapping m knots, placed uniformly over [0, target_len-1], to
    target_len piecewise-linear samples.  Identity when m == target_len."""
    key = (m, target_len)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    w = np.zeros((m, target_len))
    if m == 1:
        w[0, :] = 1.0
    else:
        step = (target_len - 1) / (m - 1)
        for t in range(target_len):
            j = min(int(t / step), m - 2)
            frac = (t - j * step) / step
            w[j, t] += 1.0 - frac
            w[j + 1, t] += frac
    _INTERP_CACHE[key] = w
    return w


def interpolate_linear(x: Tensor, target_len: int) -> Tensor:
    """Piecewise-linear upsampling of the last axis to `target_len` points."""
    x = Tensor._lift(x)
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    w = _interp_matrix(x.shape[-1], target_len)
    out = x.data @ w
    return Tensor._node(out, (x,), lambda g: (g @ w.T,))


def softmax(x: Tensor) -> Tensor:
    """Last-axis softmax with max-subtraction for stability."""
    return masked_softmax(x, None)


def masked_softmax(x: Tensor, mask: np.ndarray | None) -> Tensor:
    """Softmax over the last axis restricted to positions where `mask` is True.

    Masked positions get probability exactly 0; each row must keep at least
    one unmasked entry.
    """
    x = Tensor._lift(x)
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("masked_softmax: some row has no unmasked entry")
        neg = np.where(mask, x.data, -np.inf)
        shifted = neg - neg.max(axis=-1, keepdims=True)
        e = np.zeros_like(x.data)
        np.exp(shifted, out=e, where=mask)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return Tensor._node(out, (x,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(Tensor._lift(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._node(out, tensors, rule)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(Tensor._lift(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def rule(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=axis))
                     for i in range(len(tensors)))

    return Tensor._node(out, tensors, rule)


# -- optimizer ------------------------------------------------------------------


class Adam:
    """Adaptive-moment optimizer with bias correction.

    Moments live per-parameter with the parameter's shape; `step_count`
    increases by one per update.  Updates are in-place on the leaf tensors so
    the optimizer state stays attached across training steps.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


# -- gradient verification --------------------------------------------------------


def finite_difference_gradient(f: Callable[[np.ndarray], float],
                               x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def uniform_init(rng: np.random.Generator, fan_in: int, *shape: int) -> np.ndarray:
    """Seeded uniform initialization in +-sqrt(1/fan_in)."""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
