"""Tape-based reverse-mode automatic differentiation over float64 arrays.

Operations record a node on the active :class:`Tape` only when at least one
input is tracked.  Outside a tape every primitive is a plain numpy
computation, which keeps inference cheap.

Broadcasting is restricted to a row vector (shape ``(k,)`` or ``(1, k)``)
added to or multiplied into an ``(n, k)`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class ContractError(ValueError):
    """A caller broke an API precondition."""


class NumericalInstabilityError(FloatingPointError):
    """A non-finite value appeared where finite values are required."""


_ACTIVE: List["Tape"] = []


class Tensor:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: Optional["Tape"] = None, index: Optional[int] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        if np.isscalar(other):
            return shift(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return shift(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        if np.isscalar(other):
            return shift(scale(self, -1.0), other)
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: str
    inputs: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    shape: Tuple[int, ...]


@dataclass
class Tape:
    """Ordered record of tracked operations.

    Use as a context manager; leaves are registered with :meth:`watch`.
    Nodes are appended in execution order, so reverse iteration is a valid
    reverse topological order.
    """

    nodes: List[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def watch(self, value) -> Tensor:
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(_Node("leaf", (), lambda g: (), arr.shape))
        return Tensor(arr, self, len(self.nodes) - 1)

    def record(self, op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
        self.nodes.append(_Node(op, tuple(inputs), vjp, out.shape))
        return Tensor(out, self, len(self.nodes) - 1)

    def gradient(self, root: Tensor, wrt: Iterable[Tensor]) -> List[np.ndarray]:
        """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

        Tensors that ``root`` does not depend on receive zeros.
        """
        wrt = list(wrt)
        if root.tape is not self:
            raise ContractError("backward: root is not tracked on this tape")
        if root.value.size != 1:
            raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
        grads: Dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
        for idx in range(root.index, -1, -1):
            g = grads.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            if not node.inputs:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or inp.tape is not self:
                    continue
                prev = grads.get(inp.index)
                grads[inp.index] = gi if prev is None else prev + gi
        out = []
        for t in wrt:
            if t.tape is not self:
                out.append(np.zeros_like(t.value))
            else:
                out.append(grads.get(t.index, np.zeros_like(t.value)))
        return out


def backward(root: Tensor, wrt: Iterable[Tensor]) -> List[np.ndarray]:
    if root.tape is None:
        raise ContractError("backward: root is not tracked on a tape")
    return root.tape.gradient(root, wrt)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    tape = next((t.tape for t in inputs if t.tape is not None), None)
    if tape is None:
        return Tensor(out)
    return tape.record(op, out, inputs, vjp)


def _is_row(shape) -> bool:
    return len(shape) == 1 or (len(shape) == 2 and shape[0] == 1)


def _check_binary(op: str, a: Tensor, b: Tensor) -> bool:
    """Return True if ``b`` is a row vector broadcast over matrix ``a``."""
    if a.shape == b.shape:
        return False
    if len(a.shape) == 2 and _is_row(b.shape) and b.shape[-1] == a.shape[1]:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    return g.sum(axis=0).reshape(shape)


# primitives ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    need_a, need_b = a.tracked, b.tracked

    def vjp(g):
        return (g @ bv.T if need_a else None), (av.T @ g if need_b else None)

    return _emit("matmul", av @ bv, (a, b), vjp)


def linear(x, W, b) -> Tensor:
    """``x @ W + b`` with a row-vector bias, as a single node."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: incompatible shapes {x.shape}, {W.shape} and {b.shape}")
    xv, wv = x.value, W.value
    need_x = x.tracked
    out = xv @ wv
    out += b.value

    def vjp(g):
        return (g @ wv.T if need_x else None), xv.T @ g, g.sum(axis=0)

    return _emit("linear", out, (x, W, b), vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim < b.value.ndim:
        a, b = b, a
    bcast = _check_binary("add", a, b)
    bshape = b.shape

    def vjp(g):
        return g, (_unbroadcast(g, bshape) if bcast else g)

    return _emit("add", a.value + b.value, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bcast = _check_binary("sub", a, b)
    bshape = b.shape

    def vjp(g):
        return g, (-_unbroadcast(g, bshape) if bcast else -g)

    return _emit("sub", a.value - b.value, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bcast = _check_binary("mul", a, b)
    av, bv, bshape = a.value, b.value, b.shape

    def vjp(g):
        gb = g * av
        return g * bv, (_unbroadcast(gb, bshape) if bcast else gb)

    return _emit("mul", av * bv, (a, b), vjp)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _emit("scale", x.value * c, (x,), lambda g: (g * c,))


def shift(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit("shift", x.value + float(c), (x,), lambda g: (g,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _emit("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.value)
    return _emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    s = _sigmoid(v)
    return _emit("silu", v * s, (x,), lambda g: (g * (s + v * s * (1.0 - s)),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.value)
    return _emit("exp", e, (x,), lambda g: (g * e,))


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    return _emit("sum", np.asarray(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.value.size
    return _emit("mean", np.asarray(x.value.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def mse(pred, target) -> Tensor:
    """Mean over rows of the squared Euclidean norm of ``pred - target``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: incompatible shapes {pred.shape} and {target.shape}")
    diff = pred.value - target.value
    n = diff.shape[0] if diff.ndim > 0 else 1
    out = np.asarray((diff * diff).sum() / n)

    def vjp(g):
        d = (2.0 * float(g) / n) * diff
        return d, -d

    return _emit("mse", out, (pred, target), vjp)


def concat(parts: Sequence, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if axis != 1 or any(p.value.ndim != 2 for p in parts):
        raise ShapeError(f"concat: expected matrices along axis 1, got {[p.shape for p in parts]}")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.value for p in parts], axis=1)

    def vjp(g):
        return [g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]

    return _emit("concat", out, parts, vjp)


def l2norm_rows(x, eps: float = 1e-12) -> Tensor:
    """Divide each row by ``max(||row||, eps)``."""
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ShapeError(f"l2norm_rows: expected a matrix, got shape {x.shape}")
    v = x.value
    norm = np.sqrt((v * v).sum(axis=1, keepdims=True))
    clipped = norm <= eps
    denom = np.where(clipped, eps, norm)
    out = v / denom

    def vjp(g):
        proj = (g * out).sum(axis=1, keepdims=True)
        return (np.where(clipped, g, g - out * proj) / denom,)

    return _emit("l2norm_rows", out, (x,), vjp)


def _sq_dist(av: np.ndarray, bv: np.ndarray, near: float) -> np.ndarray:
    na = np.einsum("ij,ij->i", av, av)
    nb = np.einsum("ij,ij->i", bv, bv)
    d2 = av @ bv.T
    d2 *= -2.0
    d2 += na[:, None]
    d2 += nb[None, :]
    close = d2 <= near * (na[:, None] + nb[None, :])
    n_close = int(np.count_nonzero(close))
    if n_close > close.size // 8:
        # mostly coincident clouds: dense differences are cheaper than scattering
        for lo in range(0, av.shape[0], 256):
            diff = av[lo:lo + 256, None, :] - bv[None, :, :]
            d2[lo:lo + 256] = np.einsum("ijk,ijk->ij", diff, diff)
    elif n_close:
        i, j = np.nonzero(close)
        diff = av[i] - bv[j]
        d2[i, j] = np.einsum("ij,ij->i", diff, diff)
    return np.maximum(d2, 0.0, out=d2)


def pairwise_dist(a, b, near: float = 1e-4) -> Tensor:
    """Euclidean distances between rows of ``a`` (n, d) and ``b`` (m, d).

    Uses the Gram expansion, then recomputes pairs closer than ``near``
    (relative to the row norms) from explicit differences, so coincident
    rows give exactly 0 and small distances keep full precision.  The
    arguments are put in a fixed order first, so swapping them yields the
    exact transpose.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_dist: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    if (bv.shape[0], bv.tobytes()) < (av.shape[0], av.tobytes()):
        dist = np.sqrt(_sq_dist(bv, av, near)).T
    else:
        dist = np.sqrt(_sq_dist(av, bv, near))

    def vjp(g):
        w = np.divide(g, dist, out=np.zeros_like(dist), where=dist > 0)
        ga = av * w.sum(axis=1)[:, None] - w @ bv
        gb = bv * w.sum(axis=0)[:, None] - w.T @ av
        return ga, gb

    return _emit("pairwise_dist", dist, (a, b), vjp)


def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit("take_rows", x.value[index], (x,), vjp)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and faster than exp-based variants
    return 0.5 + 0.5 * np.tanh(0.5 * v)


# optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # flat moment buffers that ``m``/``v`` are views of, keyed by parameter order
    _flat: Optional[Tuple[tuple, np.ndarray, np.ndarray]] = field(default=None, repr=False, compare=False)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def _flatten(d: Mapping[str, np.ndarray], names) -> np.ndarray:
    return np.concatenate([np.ravel(d[k]) for k in names]) if names else np.zeros(0)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and new state."""
    if lr <= 0:
        raise ContractError(f"adam_step: lr must be positive, got {lr}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"adam_step: gradient for {name!r} has shape {g.shape}, expected {params[name].shape}")
    names = tuple(params)
    g = _flatten(grads, names)
    if not np.all(np.isfinite(g)):
        bad = next(k for k in names if not np.all(np.isfinite(grads[k])))
        raise NumericalInstabilityError(f"non-finite gradient for parameter {bad!r}")
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    shapes = [params[k].shape for k in names]
    bounds = np.cumsum([0] + [params[k].size for k in names])[1:-1]

    def unflat(x):
        return {k: part.reshape(shp) for k, part, shp in zip(names, np.split(x, bounds), shapes)}

    if state._flat is not None and state._flat[0] == names:
        m, v = state._flat[1] * b1, state._flat[2] * b2
    else:
        m, v = _flatten(state.m, names) * b1, _flatten(state.v, names) * b2
    m += (1.0 - b1) * g
    g *= g
    g *= 1.0 - b2
    v += g
    denom = v / (1.0 - b2**step)
    np.sqrt(denom, out=denom)
    denom += state.eps
    np.divide(m, denom, out=denom)
    denom *= lr / (1.0 - b1**step)
    p = _flatten(params, names)
    p -= denom
    return unflat(p), AdamState(unflat(m), unflat(v), step, b1, b2, state.eps, (names, m, v))


# gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: Dict[str, float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def grad_check(
    closure: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    with Tape() as tape:
        leaves = {k: tape.watch(v) for k, v in params.items()}
        loss = as_tensor(closure(leaves))
        if loss.tracked:
            analytic = dict(zip(leaves, tape.gradient(loss, leaves.values())))
        else:
            analytic = {k: np.zeros_like(v) for k, v in params.items()}

    def f(p):
        return float(as_tensor(closure(p)).value)

    errors = {}
    for name, base in params.items():
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        for i in range(base.size):
            probe = dict(params)
            up, down = base.copy(), base.copy()
            up.reshape(-1)[i] += step
            down.reshape(-1)[i] -= step
            probe[name] = up
            fp = f(probe)
            probe[name] = down
            flat[i] = (fp - f(probe)) / (2.0 * step)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if base.size else 0.0
    return GradCheckReport(errors, tolerance)
