"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Value` wraps an ndarray (0-d for plain scalars) together with the
vector-Jacobian products of the primitive that produced it.  Graphs are built
dynamically, one per ray batch, and differentiated with :func:`backward`.
Broadcasting follows numpy; adjoints are summed back onto operand shapes.

    >>> p = Parameter("p", 3.0)
    >>> backward(p * p)["p"]
    array(6.)
"""

from __future__ import annotations

import contextlib
import threading
from collections.abc import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "NonFiniteGradientError",
    "Value",
    "Parameter",
    "const",
    "no_grad",
    "is_grad_enabled",
    "add",
    "mul",
    "neg",
    "div",
    "exp",
    "log",
    "sin",
    "cos",
    "relu",
    "softplus",
    "sigmoid",
    "power",
    "clamp_min",
    "flush_tiny_grad",
    "sum",
    "mean",
    "matmul",
    "concat",
    "cumsum",
    "backward",
    "finite_difference_check",
    "Adam",
    "lr_schedule",
]


class DomainError(ValueError):
    """A primitive was evaluated outside its domain (log of x <= 0, x / 0)."""

    def __init__(self, op: str, operand):
        self.op = op
        self.operand = operand
        super().__init__(f"{op}: operand outside domain: {operand!r}")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, iteration: int, name: str):
        self.iteration = iteration
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r} at iteration {iteration}")


_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording the graph (forward-only)."""
    prev = is_grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


def _as_array(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    return a


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Value:
    """Graph node: ``data`` (ndarray), ``grad`` (adjoint, filled by backward).

    ``parents`` holds ``(node, vjp)`` pairs, where ``vjp`` maps this node's
    adjoint to the contribution for ``node``.
    """

    __slots__ = ("data", "grad", "parents", "op", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, data, parents=(), op: str = "leaf", requires_grad: bool = True):
        self.data = _as_array(data)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Value(op={self.op!r}, data={self.data!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    __add__ = lambda self, o: add(self, o)  # noqa: E731
    __radd__ = lambda self, o: add(o, self)  # noqa: E731
    __sub__ = lambda self, o: add(self, neg(o))  # noqa: E731
    __rsub__ = lambda self, o: add(o, neg(self))  # noqa: E731
    __mul__ = lambda self, o: mul(self, o)  # noqa: E731
    __rmul__ = lambda self, o: mul(o, self)  # noqa: E731
    __truediv__ = lambda self, o: div(self, o)  # noqa: E731
    __rtruediv__ = lambda self, o: div(o, self)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __pow__ = lambda self, k: power(self, k)  # noqa: E731
    __matmul__ = lambda self, o: matmul(self, o)  # noqa: E731
    __rmatmul__ = lambda self, o: matmul(o, self)  # noqa: E731

    def __getitem__(self, idx) -> Value:
        x = self
        out = x.data[idx]

        def vjp(g):
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g) if _is_advanced(idx) else _assign_add(full, idx, g)
            return full

        return _node(out, ((x, vjp),), "getitem")

    def reshape(self, *shape) -> Value:
        x = self
        return _node(x.data.reshape(*shape), ((x, lambda g: g.reshape(x.shape)),), "reshape")

    def sum(self, axis=None, keepdims=False) -> Value:
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> Value:
        return mean(self, axis=axis, keepdims=keepdims)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _assign_add(full, idx, g):
    full[idx] += g


class Parameter(Value):
    """Named trainable leaf.  The element count is fixed at construction."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=_as_array(data).dtype), op="param", requires_grad=True)
        self.name = name

    @property
    def values(self) -> np.ndarray:
        """Flat view of the parameter entries."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def const(x) -> Value:
    """Wrap data as a leaf that never receives an adjoint."""
    return x if isinstance(x, Value) else Value(x, requires_grad=False)


def _node(data, parents, op: str) -> Value:
    live = tuple((p, f) for p, f in parents if p.requires_grad)
    if not live or not is_grad_enabled():
        return Value(data, op=op, requires_grad=False)
    return Value(data, live, op=op, requires_grad=True)


# ---------------------------------------------------------------- primitives


def add(a, b) -> Value:
    a, b = const(a), const(b)
    return _node(
        a.data + b.data,
        ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))),
        "add",
    )


def mul(a, b) -> Value:
    a, b = const(a), const(b)
    return _node(
        a.data * b.data,
        (
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ),
        "mul",
    )


def neg(a) -> Value:
    a = const(a)
    return _node(-a.data, ((a, lambda g: -g),), "neg")


def div(a, b) -> Value:
    a, b = const(a), const(b)
    if np.any(b.data == 0):
        raise DomainError("div", float(b.data[b.data == 0].flat[0]))
    out = a.data / b.data
    return _node(
        out,
        (
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.data, b.shape)),
        ),
        "div",
    )


def exp(a) -> Value:
    a = const(a)
    out = np.exp(a.data)
    return _node(out, ((a, lambda g: g * out),), "exp")


def log(a) -> Value:
    a = const(a)
    if np.any(a.data <= 0):
        raise DomainError("log", float(a.data[a.data <= 0].flat[0]))
    return _node(np.log(a.data), ((a, lambda g: g / a.data),), "log")


def sin(a) -> Value:
    a = const(a)
    return _node(np.sin(a.data), ((a, lambda g: g * np.cos(a.data)),), "sin")


def cos(a) -> Value:
    a = const(a)
    return _node(np.cos(a.data), ((a, lambda g: -g * np.sin(a.data)),), "cos")


def relu(a) -> Value:
    a = const(a)
    on = a.data > 0
    return _node(np.maximum(a.data, 0), ((a, lambda g: g * on),), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split branches keep exp() from overflowing
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)


def softplus(a) -> Value:
    """log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|)."""
    a = const(a)
    out = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))
    return _node(out, ((a, lambda g: g * _sigmoid(a.data)),), "softplus")


def sigmoid(a) -> Value:
    a = const(a)
    out = _sigmoid(a.data)
    return _node(out, ((a, lambda g: g * out * (1 - out)),), "sigmoid")


def power(a, k: float) -> Value:
    if isinstance(k, Value):
        raise TypeError("power: only constant exponents are supported")
    a = const(a)
    if k < 0 and np.any(a.data == 0):
        raise DomainError("power", a.data)
    return _node(a.data**k, ((a, lambda g: g * k * a.data ** (k - 1)),), "power")


def flush_tiny_grad(a) -> Value:
    """Identity whose backward zeroes adjoints smaller than sqrt(tiny) of the dtype.

    Products of two numbers above that bound stay out of the subnormal range,
    where x86 arithmetic is an order of magnitude slower.  Placed where
    adjoints enter a deep stack of matmuls.
    """
    a = const(a)
    lo = float(np.sqrt(np.finfo(a.dtype).tiny))
    return _node(a.data, ((a, lambda g: np.where(np.abs(g) < lo, 0, g).astype(g.dtype, copy=False)),), "flush")


def clamp_min(a, lo: float) -> Value:
    a = const(a)
    keep = a.data >= lo
    return _node(np.where(keep, a.data, lo).astype(a.dtype), ((a, lambda g: g * keep),), "clamp_min")


def sum(a, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    a = const(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape)

    return _node(out, ((a, vjp),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Value:
    a = const(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b) -> Value:
    a, b = const(a), const(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    return _node(
        a.data @ b.data,
        ((a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)),
        "matmul",
    )


def concat(values: Sequence, axis: int = -1) -> Value:
    vs = [const(v) for v in values]
    out = np.concatenate([v.data for v in vs], axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vs])
    parents = []
    for v, lo, hi in zip(vs, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(lo, hi)
        parents.append((v, lambda g, s=tuple(sl): g[s]))
    return _node(out, parents, "concat")


def cumsum(a, axis: int = -1, exclusive: bool = False) -> Value:
    """Running sum along ``axis``; ``exclusive`` shifts it so entry i sums j < i."""
    a = const(a)
    c = np.cumsum(a.data, axis=axis)
    if exclusive:
        c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), np.delete(c, -1, axis=axis)], axis=axis)

    def vjp(g):
        r = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        if exclusive:
            r = r - g
        return r

    return _node(c, ((a, vjp),), "cumsum")


# ------------------------------------------------------------------ backward


def _topological(root: Value) -> list[Value]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Value, params: Iterable[Parameter] | None = None) -> dict[str, np.ndarray]:
    """Populate ``grad`` on every node reachable from the scalar ``root``.

    Returns a name -> gradient map over the Parameters found in the graph,
    plus zero entries for any ``params`` the root does not depend on.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            # keep gradients in the parent's precision (float64 constants upcast)
            contrib = np.asarray(vjp(g), dtype=parent.data.dtype)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib
    grads = {}
    for node in order:
        if isinstance(node, Parameter):
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            grads[node.name] = node.grad
    for p in params or ():
        if p.name not in grads:
            p.grad = np.zeros_like(p.data)
            grads[p.name] = p.grad
    return grads


def finite_difference_check(
    f: Callable[[], Value | Sequence[Value]],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    eps_floor: float = 1e-4,
) -> float:
    """Max relative error between backward() and central differences.

    ``f`` rebuilds its graph from the current parameter data on each call and
    returns a scalar Value or a sequence of them (each is checked).  The error
    of one entry is |analytic - numeric| / (|analytic| + eps_floor).
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    outs = f()
    outs = [outs] if isinstance(outs, Value) else list(outs)
    analytic = []
    for out in outs:
        backward(out, params)
        analytic.append([p.grad.copy() for p in params])

    def evaluate():
        with no_grad():
            r = f()
        return np.array([float(v) for v in ([r] if isinstance(r, Value) else r)])

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = evaluate()
            flat[j] = orig - eps
            down = evaluate()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            for k in range(len(outs)):
                a = analytic[k][pi].reshape(-1)[j]
                worst = max(worst, abs(a - numeric[k]) / (abs(a) + eps_floor))
    return worst


# ----------------------------------------------------------------- optimizer


def lr_schedule(
    t: int,
    base: float,
    final: float,
    total_iters: int,
    warmup_iters: int = 0,
    warmup_mult: float = 0.01,
) -> float:
    """Linear warm-up from ``warmup_mult * base`` then log-linear decay to ``final``."""
    frac = min(max(t / max(total_iters, 1), 0.0), 1.0)
    lr = base * (final / base) ** frac
    if warmup_iters > 0 and t < warmup_iters:
        lr *= warmup_mult + (1 - warmup_mult) * t / warmup_iters
    return lr


class Adam:
    """Adam with bias correction; ``step`` raises before touching any parameter
    if a gradient is non-finite."""

    def __init__(self, params: Sequence[Parameter], schedule: Callable[[int], float],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray], iteration: int) -> float:
        for p in self.params:
            if not np.all(np.isfinite(grads[p.name])):
                raise NonFiniteGradientError(iteration, p.name)
        lr = self.schedule(iteration)
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p in self.params:
            g = grads[p.name]
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return lr

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"adam/t": np.array(self.t)}
        for name in self.m:
            state[f"adam/m/{name}"] = self.m[name]
            state[f"adam/v/{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.t = int(state["adam/t"])
        for name in self.m:
            self.m[name] = np.array(state[f"adam/m/{name}"])
            self.v[name] = np.array(state[f"adam/v/{name}"])
