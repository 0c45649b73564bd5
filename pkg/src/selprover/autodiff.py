"""Reverse-mode autodiff over plain numpy arrays, parameter store, Adam.

A tiny tape: ``Value`` wraps an ndarray, remembers its parents and a backward
closure, and ``Tape.backward`` runs the closures in reverse topological
order. Scalar results are 0-d arrays. Only what the prover, the embedding
pretrainer, and the GRU generator need is implemented; this is not a general
tensor library.

Subgradient convention for min/max: the gradient flows to the single
attaining operand, ties broken toward the earliest one. Left-folded
reductions preserve that rule.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Value:
    """Node in the computation graph: data, grad, and a backward closure."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents: tuple = (), backward=None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Value(shape={self.data.shape}, name={self.name!r})"

    # operators delegate to module functions
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def constant(x, name: str = "const") -> Value:
    return Value(x, name=name)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data + b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad += _unbroadcast(g, b.data.shape)

    out._backward = bw
    return out


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data - b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad -= _unbroadcast(g, b.data.shape)

    out._backward = bw
    return out


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data * b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g * b.data, a.data.shape)
        b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = bw
    return out


def matmul(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul is 2-d only, got {a.data.shape} @ {b.data.shape}")
    out = Value(a.data @ b.data, (a, b))

    def bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward = bw
    return out


def vsum(a: Value, axis=None) -> Value:
    a = as_value(a)
    out = Value(a.data.sum(axis=axis), (a,))

    def bw(g):
        if axis is None:
            a.grad += np.broadcast_to(g, a.data.shape)
        else:
            a.grad += np.broadcast_to(np.expand_dims(g, axis), a.data.shape)

    out._backward = bw
    return out


def vmean(a: Value, axis=None) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / max(1, n))


def exp(a: Value) -> Value:
    a = as_value(a)
    out = Value(np.exp(a.data), (a,))

    def bw(g):
        a.grad += g * out.data

    out._backward = bw
    return out


def log(a: Value) -> Value:
    a = as_value(a)
    out = Value(np.log(a.data), (a,))

    def bw(g):
        a.grad += g / a.data

    out._backward = bw
    return out


def sigmoid(a: Value) -> Value:
    a = as_value(a)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = Value(s, (a,))

    def bw(g):
        a.grad += g * out.data * (1.0 - out.data)

    out._backward = bw
    return out


def tanh(a: Value) -> Value:
    a = as_value(a)
    out = Value(np.tanh(a.data), (a,))

    def bw(g):
        a.grad += g * (1.0 - out.data * out.data)

    out._backward = bw
    return out


def softplus(a: Value) -> Value:
    """log(1 + e^x), computed stably."""
    a = as_value(a)
    out = Value(np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data))), (a,))

    def bw(g):
        x = a.data
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        a.grad += g * sig

    out._backward = bw
    return out


def clamp(a: Value, lo: float, hi: float) -> Value:
    """Clip with pass-through gradient strictly inside [lo, hi]."""
    a = as_value(a)
    out = Value(np.clip(a.data, lo, hi), (a,))

    def bw(g):
        inside = (a.data > lo) & (a.data < hi)
        a.grad += g * inside

    out._backward = bw
    return out


def concat_cols(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(np.concatenate([a.data, b.data], axis=1), (a, b))
    na = a.data.shape[1]

    def bw(g):
        a.grad += g[:, :na]
        b.grad += g[:, na:]

    out._backward = bw
    return out


def slice_cols(a: Value, start: int, stop: int) -> Value:
    a = as_value(a)
    out = Value(a.data[:, start:stop], (a,))

    def bw(g):
        a.grad[:, start:stop] += g

    out._backward = bw
    return out


def gather_rows(a: Value, idx) -> Value:
    idx = np.asarray(idx, dtype=np.int64)
    out = Value(a.data[idx], (a,))

    def bw(g):
        np.add.at(a.grad, idx, g)

    out._backward = bw
    return out


def pick_row(a: Value, i: int) -> Value:
    """Single row as a 1-d vector."""
    a = as_value(a)
    out = Value(a.data[i], (a,))

    def bw(g):
        a.grad[i] += g

    out._backward = bw
    return out


def minimum2(a: Value, b: Value) -> Value:
    """Elementwise min; gradient to the attaining operand, ties to ``a``."""
    a, b = as_value(a), as_value(b)
    take_a = a.data <= b.data
    out = Value(np.where(take_a, a.data, b.data), (a, b))

    def bw(g):
        a.grad += _unbroadcast(g * take_a, a.data.shape)
        b.grad += _unbroadcast(g * ~take_a, b.data.shape)

    out._backward = bw
    return out


def maximum2(a: Value, b: Value) -> Value:
    """Elementwise max; gradient to the attaining operand, ties to ``a``."""
    a, b = as_value(a), as_value(b)
    take_a = a.data >= b.data
    out = Value(np.where(take_a, a.data, b.data), (a, b))

    def bw(g):
        a.grad += _unbroadcast(g * take_a, a.data.shape)
        b.grad += _unbroadcast(g * ~take_a, b.data.shape)

    out._backward = bw
    return out


def min_list(values: Sequence[Value]) -> Value:
    """Left-folded min over scalars: earliest operand wins ties."""
    if not values:
        raise ValueError("min_list needs at least one value")
    out = values[0]
    for v in values[1:]:
        out = minimum2(out, v)
    return out


def max_list(values: Sequence[Value]) -> Value:
    if not values:
        raise ValueError("max_list needs at least one value")
    out = values[0]
    for v in values[1:]:
        out = maximum2(out, v)
    return out


def sum_list(values: Sequence[Value]) -> Value:
    """Fused sum of scalar values; avoids deep add chains."""
    vals = [as_value(v) for v in values]
    out = Value(np.sum([v.data for v in vals]) if vals else 0.0, tuple(vals))

    def bw(g):
        for v in vals:
            v.grad += _unbroadcast(np.asarray(g), v.data.shape)

    out._backward = bw
    return out


def softmax(a: Value, axis: int = -1) -> Value:
    a = as_value(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Value(s, (a,))

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a.grad += s * (g - dot)

    out._backward = bw
    return out


def cross_entropy_logits(logits: Value, targets) -> Value:
    """Mean negative log-softmax at the target index per row."""
    logits = as_value(logits)
    t = np.asarray(targets, dtype=np.int64)
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = Value(-logp[np.arange(n), t].mean(), (logits,))

    def bw(g):
        soft = np.exp(logp)
        soft[np.arange(n), t] -= 1.0
        logits.grad += (float(g) / n) * soft

    out._backward = bw
    return out


def gaussian_kernel(u, v):
    """exp(-||u - v||^2), bandwidth fixed so the exponent coefficient is 1.

    Accepts two ``Value`` vectors (differentiable result) or two plain
    arrays (float result). Dimension mismatch is a contract violation.
    """
    if isinstance(u, Value) or isinstance(v, Value):
        u, v = as_value(u), as_value(v)
        if u.data.shape != v.data.shape:
            raise ValueError(f"dim mismatch: {u.data.shape} vs {v.data.shape}")
        d = sub(u, v)
        return exp(mul(vsum(mul(d, d)), -1.0))
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dim mismatch: {u.shape} vs {v.shape}")
    d = u - v
    return float(np.exp(-np.dot(d, d)))


# ---------------------------------------------------------------------------
# parameter store + tape
# ---------------------------------------------------------------------------


class ParameterStore:
    """Named dense float64 parameter arrays plus optimizer state.

    ``step_count`` is global across parameters and drives Adam bias
    correction; ``rejected_updates`` counts per-parameter updates skipped
    because their gradient was not finite.
    """

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.rejected_updates = 0
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        self.params[name] = np.asarray(array, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.params[name]
        except KeyError:
            raise KeyError(f"unknown parameter: {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.step_count = self.step_count
        other.rejected_updates = self.rejected_updates
        other._adam_m = {k: v.copy() for k, v in self._adam_m.items()}
        other._adam_v = {k: v.copy() for k, v in self._adam_v.items()}
        return other

    def save(self, path) -> None:
        """Exact round-trip dump: parameters, optimizer state, counters."""
        blobs = {f"p_{k}": v for k, v in self.params.items()}
        blobs.update({f"m_{k}": v for k, v in self._adam_m.items()})
        blobs.update({f"v_{k}": v for k, v in self._adam_v.items()})
        blobs["_meta"] = np.array([self.step_count, self.rejected_updates],
                                  dtype=np.int64)
        np.savez(path, **blobs)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        store = cls()
        with np.load(path) as data:
            for key in data.files:
                if key == "_meta":
                    meta = data[key]
                    store.step_count = int(meta[0])
                    store.rejected_updates = int(meta[1])
                elif key.startswith("p_"):
                    store.params[key[2:]] = data[key]
                elif key.startswith("m_"):
                    store._adam_m[key[2:]] = data[key]
                elif key.startswith("v_"):
                    store._adam_v[key[2:]] = data[key]
        return store


class Tape:
    """Tracks leaf parameters touched by one recorded computation."""

    def __init__(self, store: ParameterStore):
        self.store = store
        self.leaves: dict[str, Value] = {}

    def leaf(self, name: str) -> Value:
        v = self.leaves.get(name)
        if v is None:
            v = Value(self.store[name], name=name)
            self.leaves[name] = v
        return v

    def rows(self, name: str, idx) -> Value:
        return gather_rows(self.leaf(name), idx)

    def row(self, name: str, i: int) -> Value:
        return pick_row(self.leaf(name), int(i))

    def backward(self, root: Value) -> None:
        """Reverse-topological sweep seeding d(root)/d(root) = 1."""
        if root.data.shape != ():
            raise ValueError("backward expects a scalar root")
        topo: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(root, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        root.grad = np.ones_like(root.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: leaf.grad for name, leaf in self.leaves.items()}

    def grad_global_norm(self) -> float:
        total = 0.0
        for leaf in self.leaves.values():
            total += float(np.sum(leaf.grad * leaf.grad))
        return float(np.sqrt(total))


def clip_gradients(tape: Tape, max_norm: float) -> float:
    """Scale all recorded gradients so the global norm is <= max_norm."""
    norm = tape.grad_global_norm()
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for leaf in tape.leaves.values():
            leaf.grad *= scale
    return norm


def adam_step(store: ParameterStore, tape: Tape, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              param_filter: Callable[[str], bool] | None = None) -> None:
    """Adam with bias correction over parameters holding nonzero gradients.

    A parameter whose gradient contains NaN/Inf is skipped for this step and
    counted in ``store.rejected_updates``. ``param_filter`` restricts which
    names may move (used when one phase trains a parameter subset).
    """
    b1, b2 = betas
    store.step_count += 1
    t = store.step_count
    for name, leaf in tape.leaves.items():
        if param_filter is not None and not param_filter(name):
            continue
        g = leaf.grad
        if not np.any(g):
            continue
        if not np.all(np.isfinite(g)):
            store.rejected_updates += 1
            continue
        m = store._adam_m.get(name)
        if m is None:
            m = store._adam_m[name] = np.zeros_like(store.params[name])
        v = store._adam_v.get(name)
        if v is None:
            v = store._adam_v[name] = np.zeros_like(store.params[name])
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        store.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def finite_difference_check(f: Callable[[ParameterStore, Tape], Value],
                            store: ParameterStore, eps: float = 1e-5,
                            max_coords: int = 40,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(store, tape)`` must rebuild the same scalar deterministically.
    Coordinates are sampled per touched parameter. The caller is responsible
    for probing away from min/max ties, where the subgradient is one of the
    valid choices but the two-sided difference straddles the kink.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    tape = Tape(store)
    out = f(store, tape)
    tape.backward(out)
    grads = {k: v.copy() for k, v in tape.gradients().items()}
    names = sorted(grads)
    worst = 0.0
    for name in names:
        flat = store.params[name].reshape(-1)
        n = flat.size
        k = min(max_coords // max(1, len(names)) + 1, n)
        coords = rng.choice(n, size=k, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = f(store, Tape(store)).item()
            flat[c] = orig - eps
            lo = f(store, Tape(store)).item()
            flat[c] = orig
            fd = (hi - lo) / (2.0 * eps)
            g = float(grads[name].reshape(-1)[c])
            err = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
            worst = max(worst, err)
    return worst
