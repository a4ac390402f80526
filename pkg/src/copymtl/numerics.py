"""Minimal reverse-mode differentiation on top of numpy.

A :class:`Tensor` wraps a float64 ``numpy.ndarray`` and remembers the
operation that produced it.  :func:`backward` walks that record in reverse
topological order and adds gradients into every reachable :class:`Param`.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946

NEG_INF = -1e30

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
# when set, piecewise ops append the side of their kink each input lies on
_kink_trace: contextvars.ContextVar[list | None] = contextvars.ContextVar("kink_trace", default=None)


class NumericError(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


@contextlib.contextmanager
def no_grad():
    """Run forward computations without recording them."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """An array plus the recipe for pushing gradients back to its inputs.

    ``backward_fn`` receives the upstream gradient and returns one gradient
    (or ``None``) per entry of ``parents``.
    """

    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "_consumed")
    __array_priority__ = 100

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = bool(self.parents)
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Param(Tensor):
    """A named learnable array with its own gradient buffer."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.float64, copy=True))
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not _grad_enabled.get() or not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents, backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.value
    return _node(np.log(x), (a,), lambda g: (g / x,))


def selu(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    trace = _kink_trace.get()
    if trace is not None:
        trace.append(x > 0)
    neg_part = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, SELU_SCALE * x, neg_part)
    deriv = np.where(x > 0, SELU_SCALE, neg_part + SELU_SCALE * SELU_ALPHA)
    return _node(out, (a,), lambda g: (g * deriv,))


# --- shape and reduction ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def backward(g):
        if bv.ndim == 1:
            ga = g[..., None] * bv
            gb = np.tensordot(g, av, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
        elif av.ndim == 1:
            ga = g @ bv.T
            gb = np.outer(av, g)
        else:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _node(av @ bv, (a, b), backward)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.value.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    return _node(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, backward)


# --- normalisers -------------------------------------------------------------

def logsumexp_np(x: np.ndarray, axis=-1, keepdims=False) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax_np(x: np.ndarray, axis=-1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty array")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    x = a.value
    out = logsumexp_np(x, axis=axis)

    def backward(g):
        p = np.exp(x - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * p,)

    return _node(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.value
    out = x - logsumexp_np(x, axis=axis, keepdims=True)

    def backward(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.value.size == 0:
        raise ValueError("softmax of an empty array")
    out = softmax_np(a.value, axis=axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


# --- LSTM ---------------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  ``weight`` maps ``[x; h]`` to the stacked i, f, o, g gates."""
    hidden = h.shape[-1]
    if x.shape[-1] + hidden != weight.shape[0] or weight.shape[1] != 4 * hidden:
        raise ValueError(
            f"lstm_cell: input {x.shape[-1]} + hidden {hidden} does not fit weight {weight.shape}")
    z = concat([x, h], axis=-1) @ weight + bias
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    o = sigmoid(z[..., 2 * hidden:3 * hidden])
    g = tanh(z[..., 3 * hidden:])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


# --- the tape walk --------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Add d(loss)/d(param) into ``param.grad`` for every reachable Param."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; recompute the forward pass")
    if not loss.requires_grad:
        loss._consumed = True
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    loss._consumed = True


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.grad.fill(0.0)


def clip_grad_norm(params: Sequence[Param], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if not np.isfinite(total):
        raise NumericError("non-finite gradient norm")
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


# --- initialisation and Adam --------------------------------------------------

def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int | None = None) -> np.ndarray:
    fan_in = shape[0] if fan_in is None else fan_in
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Param], state: AdamState) -> None:
    """Bias-corrected Adam update; leaves ``grad`` untouched."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- finite differences -----------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    probed: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def skip_fraction(self) -> float:
        total = sum(self.probed.values())
        return sum(self.skipped.values()) / total if total else 0.0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    Central differences at h=1e-5 carry ~1e-10 * |loss| of round-off, so entries
    smaller than ``floor`` are effectively judged on absolute error.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradient_check(forward_fn: Callable[[], Tensor], params: Sequence[Param], tolerance: float = 1e-4,
                   h: float = 1e-5, max_entries: int | None = None,
                   rng: np.random.Generator | None = None, floor: float = 1e-5) -> GradCheckReport:
    """Compare backprop gradients of ``forward_fn()`` against central differences.

    With ``max_entries`` set, each param is probed at that many coordinates: the
    largest-gradient one plus a random sample.

    A probe whose +h and -h evaluations put some SELU input on opposite sides of
    zero straddles a kink, where the central difference averages two different
    slopes.  Such coordinates are left out of ``errors`` and counted in
    ``skipped``.
    """
    zero_grads(params)
    loss = forward_fn()
    if not np.isfinite(loss.value).all():
        raise NumericError("gradient_check: non-finite loss")
    backward(loss)
    rng = rng if rng is not None else np.random.default_rng(0)

    def evaluate() -> tuple[float, list]:
        trace: list = []
        token = _kink_trace.set(trace)
        try:
            with no_grad():
                value = forward_fn().item()
        finally:
            _kink_trace.reset(token)
        if not np.isfinite(value):
            raise NumericError("gradient_check: non-finite loss under perturbation")
        return value, trace

    def same_side(a: list, b: list) -> bool:
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    errors, probed, skipped = {}, {}, {}
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            coords = np.arange(flat.size)
        else:
            top = int(np.argmax(np.abs(analytic.reshape(-1))))
            others = rng.choice(flat.size, size=max_entries - 1, replace=False)
            coords = np.unique(np.concatenate([[top], others]))
        numeric = np.empty(len(coords))
        smooth = np.ones(len(coords), dtype=bool)
        for k, j in enumerate(coords):
            orig = flat[j]
            flat[j] = orig + h
            up, up_sides = evaluate()
            flat[j] = orig - h
            down, down_sides = evaluate()
            flat[j] = orig
            numeric[k] = (up - down) / (2 * h)
            smooth[k] = same_side(up_sides, down_sides)
        err = relative_error(analytic.reshape(-1)[coords][smooth], numeric[smooth], floor)
        name = p.name or str(id(p))
        errors[name] = float(err.max()) if err.size else 0.0
        probed[name] = len(coords)
        skipped[name] = int((~smooth).sum())
    zero_grads(params)
    return GradCheckReport(errors, tolerance, probed, skipped)
