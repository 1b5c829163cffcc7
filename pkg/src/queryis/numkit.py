"""Dense float64 arrays with a reverse-mode tape.

Every op accepts :class:`Array` or anything ``np.asarray`` understands.  An op
is recorded on a :class:`Tape` when at least one input is tracked by that tape;
otherwise it is plain numpy evaluation.  Backward walks the records in exact
reverse order of creation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

PROB_EPS = 1e-7


class ShapeError(ValueError):
    pass


class Array:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.tracked else ""
        return f"Array(shape={self.shape}{tag})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Record:
    out: int
    inputs: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Single-owner record of one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self._count = 0
        self.params: dict[str, Array] = {}
        self._grads: list[np.ndarray | None] | None = None

    def _new_node(self) -> int:
        self._count += 1
        return self._count - 1

    def watch(self, value) -> Array:
        return Array(value, self, self._new_node())

    def param(self, name: str, value) -> Array:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        arr = self.watch(np.array(value, dtype=np.float64))
        self.params[name] = arr
        return arr

    def bind(self, params: Mapping[str, np.ndarray]) -> dict[str, Array]:
        return {k: self.param(k, v) for k, v in params.items()}

    def record(self, out_data, inputs: Sequence[Array], backward) -> Array:
        out = Array(out_data, self, self._new_node())
        self.records.append(_Record(out.node, tuple(a.node if a.tape is self else None for a in inputs), backward))
        return out

    def backward(self, out: Array, seed=None) -> None:
        if out.tape is not self:
            raise ValueError("output was not produced on this tape")
        grads: list[np.ndarray | None] = [None] * self._count
        grads[out.node] = np.ones_like(out.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for rec in reversed(self.records):
            g = grads[rec.out]
            if g is None:
                continue
            for node, gi in zip(rec.inputs, rec.backward(g)):
                if node is None or gi is None:
                    continue
                grads[node] = gi if grads[node] is None else grads[node] + gi
        self._grads = grads

    def grad(self, arr: Array) -> np.ndarray:
        if self._grads is None:
            raise RuntimeError("backward has not been run")
        g = self._grads[arr.node] if arr.tape is self else None
        return np.zeros_like(arr.data) if g is None else g

    def gradients(self) -> dict[str, np.ndarray]:
        return {k: self.grad(v) for k, v in self.params.items()}


def constants(params: Mapping[str, np.ndarray]) -> dict[str, Array]:
    return {k: Array(v) for k, v in params.items()}


def as_array(x) -> Array:
    return x if isinstance(x, Array) else Array(x)


def _tape_of(arrays: Iterable[Array]) -> Tape | None:
    tape = None
    for a in arrays:
        if a.tracked:
            if tape is not None and a.tape is not tape:
                raise ValueError("inputs belong to different tapes")
            tape = a.tape
    return tape


def make_op(forward: Callable, backward: Callable) -> Callable:
    """Build a differentiable op from raw numpy rules.

    ``forward(*datas) -> out`` and ``backward(g, out, *datas) -> grads`` with
    one entry per input.
    """

    def op(*inputs):
        arrs = [as_array(a) for a in inputs]
        datas = [a.data for a in arrs]
        out = forward(*datas)
        tape = _tape_of(arrs)
        if tape is None:
            return Array(out)
        return tape.record(out, arrs, lambda g: backward(g, out, *datas))

    return op


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from e


def _binary(fwd, bwd_a, bwd_b):
    def backward(g, out, a, b):
        return _unbroadcast(bwd_a(g, out, a, b), a.shape), _unbroadcast(bwd_b(g, out, a, b), b.shape)

    raw = make_op(fwd, backward)

    def op(a, b):
        a, b = as_array(a), as_array(b)
        _check_broadcast(a, b)
        return raw(a, b)

    return op


add = _binary(np.add, lambda g, o, a, b: g, lambda g, o, a, b: g)
sub = _binary(np.subtract, lambda g, o, a, b: g, lambda g, o, a, b: -g)
mul = _binary(np.multiply, lambda g, o, a, b: g * b, lambda g, o, a, b: g * a)
div = _binary(np.divide, lambda g, o, a, b: g / b, lambda g, o, a, b: -g * a / (b * b))


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not chain")
    return a @ b


matmul = make_op(_matmul_fwd, lambda g, o, a, b: (g @ b.T, a.T @ g))
transpose = make_op(lambda a: a.T.copy(), lambda g, o, a: (g.T,))
relu = make_op(lambda a: np.maximum(a, 0.0), lambda g, o, a: (g * (a > 0),))
exp = make_op(np.exp, lambda g, o, a: (g * o,))
log = make_op(np.log, lambda g, o, a: (g / a,))


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


sigmoid = make_op(_sigmoid, lambda g, o, a: (g * o * (1.0 - o),))


def _softmax_rows(a):
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}")
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


softmax_rows = make_op(_softmax_rows, lambda g, o, a: (o * (g - (g * o).sum(axis=1, keepdims=True)),))


def clip(x, lo: float, hi: float) -> Array:
    return make_op(
        lambda a: np.clip(a, lo, hi),
        lambda g, o, a: (g * ((a >= lo) & (a <= hi)),),
    )(x)


def clamp_prob(x) -> Array:
    return clip(x, PROB_EPS, 1.0 - PROB_EPS)


def total(x) -> Array:
    """Sum of all entries, returned with shape ()."""
    return make_op(lambda a: np.asarray(a.sum()), lambda g, o, a: (np.broadcast_to(g, a.shape).copy(),))(x)


def mean(x) -> Array:
    n = as_array(x).data.size
    return mul(total(x), 1.0 / n)


def sum_axis(x, axis: int) -> Array:
    """Sum along ``axis`` keeping the dimension, so results broadcast back."""
    return make_op(
        lambda a: a.sum(axis=axis, keepdims=True),
        lambda g, o, a: (np.broadcast_to(g, a.shape).copy(),),
    )(x)


def gather_rows(x, idx) -> Array:
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g, o, a):
        out = np.zeros_like(a)
        np.add.at(out, idx, g)
        return (out,)

    return make_op(lambda a: a[idx], backward)(x)


def segment_mean(x, segments, num_segments: int) -> Array:
    """Mean of the rows of ``x`` sharing a segment id (every segment nonempty)."""
    seg = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("segment_mean: empty segment")

    def forward(a):
        out = np.zeros((num_segments,) + a.shape[1:])
        np.add.at(out, seg, a)
        return out / counts.reshape((-1,) + (1,) * (a.ndim - 1))

    def backward(g, o, a):
        return ((g / counts.reshape((-1,) + (1,) * (a.ndim - 1)))[seg],)

    return make_op(forward, backward)(x)


def slice_cols(x, start: int, stop: int) -> Array:
    def backward(g, o, a):
        out = np.zeros_like(a)
        out[:, start:stop] = g
        return (out,)

    return make_op(lambda a: a[:, start:stop].copy(), backward)(x)


def concat_cols(parts: Sequence) -> Array:
    arrs = [as_array(p) for p in parts]
    widths = np.cumsum([0] + [a.shape[1] for a in arrs])

    def backward(g, o, *datas):
        return [g[:, widths[i] : widths[i + 1]] for i in range(len(datas))]

    return make_op(lambda *ds: np.concatenate(ds, axis=1), backward)(*arrs)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Array:
    """Row-wise normalization with learned scale and offset."""

    def forward(a, gm, bt):
        mu = a.mean(axis=1, keepdims=True)
        var = a.var(axis=1, keepdims=True)
        return (a - mu) / np.sqrt(var + eps) * gm + bt

    def backward(g, o, a, gm, bt):
        c = a.shape[1]
        mu = a.mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(a.var(axis=1, keepdims=True) + eps)
        xhat = (a - mu) * inv
        gx = g * gm
        da = inv / c * (c * gx - gx.sum(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True))
        return da, _unbroadcast(g * xhat, gm.shape), _unbroadcast(g, bt.shape)

    return make_op(forward, backward)(x, gamma, beta)


# --- small networks -----------------------------------------------------------


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(rng, prefix: str, fan_in: int, fan_out: int) -> dict[str, np.ndarray]:
    return {f"{prefix}.weight": glorot(rng, fan_in, fan_out), f"{prefix}.bias": np.zeros(fan_out)}


def linear(x, p: Mapping[str, Array], prefix: str) -> Array:
    return add(matmul(x, p[f"{prefix}.weight"]), p[f"{prefix}.bias"])


def init_mlp(rng, prefix: str, sizes: Sequence[int]) -> dict[str, np.ndarray]:
    out = {}
    for i in range(len(sizes) - 1):
        out.update(init_linear(rng, f"{prefix}.{i}", sizes[i], sizes[i + 1]))
    return out


def mlp_depth(p: Mapping[str, object], prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.weight" in p:
        n += 1
    return n


def mlp_forward(x, p: Mapping[str, Array], prefix: str, final_relu: bool = False) -> Array:
    """Affine layers ``prefix.0 .. prefix.{d-1}`` with ReLU between them."""
    depth = mlp_depth(p, prefix)
    if depth == 0:
        raise KeyError(f"no layers under {prefix!r}")
    h = as_array(x)
    for i in range(depth):
        w = p[f"{prefix}.{i}.weight"]
        if h.shape[1] != w.shape[0]:
            raise ShapeError(f"{prefix}.{i}: input width {h.shape[1]} vs weight {w.shape}")
        h = linear(h, p, f"{prefix}.{i}")
        if i < depth - 1 or final_relu:
            h = relu(h)
    return h


# --- finite-difference checking -------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[[dict[str, Array]], Array],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` with central differences.

    The relative error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    With ``max_coords`` set, a random subset of coordinates per parameter is probed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    out = f(tape.bind(params))
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    tape.backward(out)
    analytic = tape.gradients()

    def value(ps):
        return float(f(constants(ps)).data.reshape(()))

    worst = (0.0, "", ())
    checked = 0
    rng = rng or np.random.default_rng(0)
    for name, base in params.items():
        coords = list(np.ndindex(base.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            orig = base[idx]
            base[idx] = orig + eps
            fp = value(params)
            base[idx] = orig - eps
            fm = value(params)
            base[idx] = orig
            num = (fp - fm) / (2 * eps)
            ana = float(analytic[name][idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if rel > worst[0]:
                worst = (rel, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], checked, tol)
