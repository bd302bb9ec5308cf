"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape when one is active (``with Tape() as tape``)
and at least one input requires a gradient. Outside a tape every op is a plain
numpy computation, which is what inference and finite-difference probes use.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "BackwardError",
    "tensor",
    "constant",
    "backward",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "relu",
    "leaky_relu",
    "exp",
    "log",
    "clamp",
    "sigmoid",
    "tanh",
    "sqrt",
    "softplus",
    "square",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "matmul",
    "softmax",
    "channel_stats",
    "l2_norm",
    "OptState",
    "Adam",
    "grad_check",
    "pinned_branches",
    "branch",
    "EPS_STATS",
    "named_tensors",
]

EPS_STATS = 1e-5


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


class Tensor:
    """N-d float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------- tape


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    needs: tuple[bool, ...] = ()  # requires_grad of each input when recorded


class BranchPins:
    """Records the piece selections of kinked ops, then replays them.

    Finite differences across a relu or bilinear-cell boundary measure an
    average of two one-sided slopes. Replaying the recorded selections keeps
    every probe on the smooth piece the analytic gradient belongs to.
    """

    def __init__(self) -> None:
        self.pieces: list[np.ndarray] = []
        self.replaying = False
        self.cursor = 0

    def take(self, piece: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.pieces.append(piece)
            return piece
        if self.cursor >= len(self.pieces):
            raise BackwardError("replayed computation has more kinked ops than the recorded one")
        stored = self.pieces[self.cursor]
        self.cursor += 1
        if stored.shape != piece.shape:
            raise BackwardError("replayed computation diverged from the recorded one")
        return stored

    def replay(self) -> None:
        self.replaying = True
        self.cursor = 0


_PINS: list[BranchPins] = []


class pinned_branches:
    def __enter__(self) -> BranchPins:
        pins = BranchPins()
        _PINS.append(pins)
        return pins

    def __exit__(self, *exc) -> None:
        _PINS.pop()


def branch(piece: np.ndarray) -> np.ndarray:
    """Identity unless branch pinning is active, in which case it records or replays ``piece``."""
    return _PINS[-1].take(piece) if _PINS else piece


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], fn) -> None:
        if self.consumed:
            raise BackwardError("tape already consumed by backward(); record a new one")
        out._is_leaf = False
        self.records.append(_Record(out, inputs, fn, tuple(t.requires_grad for t in inputs)))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise BackwardError("backward() called twice on the same tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            for t, need in zip(rec.inputs, rec.needs):
                if need and t._is_leaf:
                    leaves[id(t)] = t
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for t, need, gi in zip(rec.inputs, rec.needs, rec.backward(g)):
                if gi is None or not need:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"gradient shape {gi.shape} != tensor shape {t.shape}")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        if loss._is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            g = grads.get(key)
            t.grad = np.zeros_like(t.data) if g is None else np.array(g, dtype=np.float64)
        self.records.clear()
        self.consumed = True


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def _active() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], fn) -> Tensor:
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.record(out, inputs, fn)
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --------------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b)

    def fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), fn)


def scale(a, s: float) -> Tensor:
    a = constant(a)
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def square(a) -> Tensor:
    a = constant(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a) -> Tensor:
    a = constant(a)
    mask = branch(a.data > 0)
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = constant(a)
    factor = np.where(branch(a.data > 0), 1.0, slope)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a, eps: float = 0.0) -> Tensor:
    a = constant(a)
    shifted = a.data + eps
    if np.any(shifted <= 0):
        raise DomainError("log of non-positive input; pass eps to shift the domain")
    return _result(np.log(shifted), (a,), lambda g: (g / shifted,))


def sqrt(a, eps: float = 0.0) -> Tensor:
    a = constant(a)
    shifted = a.data + eps
    if np.any(shifted < 0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(shifted)

    def fn(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _result(out, (a,), fn)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = constant(a)
    below = branch(a.data < lo) if lo is not None else np.zeros(a.shape, dtype=bool)
    above = branch(a.data > hi) if hi is not None else np.zeros(a.shape, dtype=bool)
    out = np.where(below, lo, np.where(above, hi, a.data))
    inside = ~(below | above)
    return _result(out, (a,), lambda g: (g * inside,))


def sigmoid(a) -> Tensor:
    a = constant(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form keeps exp() from overflowing on either tail
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    a = constant(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _result(out, (a,), lambda g: (g * _sigmoid(x),))


_UNARY = {
    "relu": relu,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "sqrt": sqrt,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, scale, relu, exp, log, clamp, sigmoid, tanh, sqrt."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scale":
        return scale(a, b)
    if kind == "clamp":
        lo, hi = b if b is not None else (None, None)
        return clamp(a, lo, hi)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ----------------------------------------------------------------------- structure


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = constant(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(sum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = constant(a)
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = constant(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(constant(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def fn(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _result(out, tensors, fn)


# -------------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast like numpy.matmul."""
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), fn)


def softmax(x, axis: int = -1) -> Tensor:
    x = constant(x)
    (ax,) = _norm_axis(axis, x.ndim)
    out = x.data - x.data.max(axis=ax, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=ax, keepdims=True)

    def fn(g):
        gx = g * out
        gx -= out * gx.sum(axis=ax, keepdims=True)
        return (gx,)

    return _result(out, (x,), fn)


def l2_norm(x, axis=-1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as zero."""
    x = constant(x)
    axes = _norm_axis(axis, x.ndim)
    n = np.sqrt((x.data * x.data).sum(axis=axes))

    def fn(g):
        nk = np.expand_dims(n, axes)
        gk = np.expand_dims(g, axes)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(nk > 0, x.data / nk, 0.0)
        return (gk * d,)

    return _result(n, (x,), fn)


def channel_stats(x, eps: float = EPS_STATS) -> tuple[Tensor, Tensor]:
    """Per-(sample, channel) spatial mean and sqrt(variance + eps) of an NCHW tensor."""
    x = constant(x)
    if x.ndim != 4:
        raise ShapeError(f"channel_stats needs a 4-d NCHW tensor, got shape {x.shape}")
    mu = mean(x, axis=(2, 3))
    centred = sub(x, reshape(mu, mu.shape + (1, 1)))
    var = mean(square(centred), axis=(2, 3))
    return mu, sqrt(var, eps)


# ----------------------------------------------------------------------- optimizer


@dataclass
class OptState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction over a named parameter table."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = OptState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape or st.m[name].shape != p.data.shape:
                raise ShapeError(f"optimizer shape mismatch for {name}")
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


# ---------------------------------------------------------------------- grad check


def grad_check(
    f: Callable,
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    pin_branches: bool = False,
) -> float:
    """Max relative error between taped gradients and central differences.

    ``x`` may be a single tensor or a list of tensors; ``f`` receives it
    unchanged and must return a scalar tensor. With ``max_coords`` only that
    many coordinates per tensor are probed, chosen by ``seed``. With
    ``pin_branches`` every probe reuses the relu masks, clamp regions and
    bilinear cells of the analytic pass.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    flags = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
    pins = BranchPins()
    if pin_branches:
        _PINS.append(pins)

    def probe() -> float:
        pins.cursor = 0
        value = f(x).item()
        if pin_branches and pins.cursor != len(pins.pieces):
            raise BackwardError("replayed computation has fewer kinked ops than the recorded one")
        return value

    try:
        with Tape() as tape:
            out = f(x)
        if out.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
        tape.backward(out)
        pins.replay()
        analytic = [t.grad.copy() for t in xs]
        rng = np.random.default_rng(seed)
        worst = 0.0
        for t, ga in zip(xs, analytic):
            flat = t.data.reshape(-1)
            n = flat.size
            coords = np.arange(n) if max_coords is None or max_coords >= n else rng.choice(n, max_coords, replace=False)
            for i in coords:
                saved = flat[i]
                flat[i] = saved + eps
                fp = probe()
                flat[i] = saved - eps
                fm = probe()
                flat[i] = saved
                num = (fp - fm) / (2 * eps)
                a = ga.reshape(-1)[i]
                err = abs(a - num) / max(1e-8, abs(a) + abs(num))
                worst = max(worst, err)
        return worst
    finally:
        if pin_branches:
            _PINS.remove(pins)
        for t, flag in zip(xs, flags):
            t.requires_grad = flag


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


def named_tensors(obj, prefix: str = "", trainable_only: bool = True) -> dict[str, Tensor]:
    """Walk dataclasses, dicts and lists collecting tensors by dotted path.

    A tensor reachable under several paths (shared weights) is reported once,
    under the first path found.
    """
    found: dict[str, Tensor] = {}
    seen: set[int] = set()

    def visit(node, path):
        if isinstance(node, Tensor):
            if id(node) not in seen and (node.requires_grad or not trainable_only):
                seen.add(id(node))
                found[path] = node
        elif is_dataclass(node):
            for f in fields(node):
                visit(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(node, dict):
            for k, v in node.items():
                visit(v, f"{path}.{k}" if path else str(k))
        elif isinstance(node, (list, tuple)):
            for i, v in enumerate(node):
                visit(v, f"{path}.{i}" if path else str(i))

    visit(obj, prefix)
    return found
