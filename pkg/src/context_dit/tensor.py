"""Dense-tensor engine with reverse-mode autodiff.

Tensors wrap numpy arrays (float64 by default, float32 selectable) and record
a backward closure per operation; `Tensor.backward()` walks the recorded graph
in reverse topological order. A counter-based RNG (`RngState`) and a central
finite-difference gradient checker (`finite_diff_check`) live here too, since
every other module leans on them for verification.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DeterminismError,
    FormatError,
    MaskError,
    NumericError,
    ShapeError,
    VocabError,
)

_GRAD_ENABLED = True

_U64 = (1 << 64) - 1


@contextmanager
def no_grad():
    """Disable graph recording inside the block (used by samplers and oracles)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy-backed tensor that remembers how it was computed.

    `data` is the value, `grad` the same-shape accumulator (allocated only when
    `requires_grad` is set). Interior nodes carry `_parents` and a `_backward`
    closure; leaves carry neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self._backward: Optional[Callable[[], None]] = None
        self._parents: tuple[Tensor, ...] = ()

    # --- conveniences -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{req})"

    def detach(self) -> "Tensor":
        """A view of the same storage with no graph attached."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    # --- autograd ---------------------------------------------------------
    def backward(self) -> None:
        """Populate `grad` on every reachable `requires_grad` tensor.

        Only scalar losses may seed a backward pass; repeated calls without an
        intervening `zero_grad` accumulate.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad += np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # --- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Finalize an op result; records the graph only while grads are enabled."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _accumulate(p: Tensor, g: np.ndarray) -> None:
    if p.requires_grad:
        p.grad += _unbroadcast(g, p.data.shape)


# --- elementwise suite ----------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = _node(a.data + b, (a,), None)
        if out._parents:
            out._backward = lambda: _accumulate(a, out.grad)
        return out
    b = _coerce(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    out = _node(data, (a, b), None)
    if out._parents:

        def _bw():
            _accumulate(a, out.grad)
            _accumulate(b, out.grad)

        out._backward = _bw
    return out


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = _node(a.data - b, (a,), None)
        if out._parents:
            out._backward = lambda: _accumulate(a, out.grad)
        return out
    b = _coerce(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc
    out = _node(data, (a, b), None)
    if out._parents:

        def _bw():
            _accumulate(a, out.grad)
            _accumulate(b, -out.grad)

        out._backward = _bw
    return out


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = _node(a.data * b, (a,), None)
        if out._parents:
            out._backward = lambda: _accumulate(a, out.grad * b)
        return out
    b = _coerce(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    out = _node(data, (a, b), None)
    if out._parents:

        def _bw():
            _accumulate(a, out.grad * b.data)
            _accumulate(b, out.grad * a.data)

        out._backward = _bw
    return out


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        if b == 0:
            raise NumericError("division by exact zero")
        return mul(a, 1.0 / b)
    b = _coerce(b)
    if np.any(b.data == 0.0):
        raise NumericError("division by exact zero")
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: cannot broadcast {a.shape} with {b.shape}") from exc
    out = _node(data, (a, b), None)
    if out._parents:

        def _bw():
            _accumulate(a, out.grad / b.data)
            _accumulate(b, -out.grad * a.data / (b.data * b.data))

        out._backward = _bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    return mul(a, float(s))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    out = _node(data, (a,), None)
    if out._parents:
        out._backward = lambda: _accumulate(a, out.grad * 0.5 / data)
    return out


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    out = _node(data, (a,), None)
    if out._parents:
        out._backward = lambda: _accumulate(a, out.grad * data)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU with its exact analytic derivative."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)
    out = _node(data, (a,), None)
    if out._parents:

        def _bw():
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner
            _accumulate(a, out.grad * local)

        out._backward = _bw
    return out


# --- matmul -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; batch dims broadcast, inner dims must agree."""
    b = _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc
    out = _node(data, (a, b), None)
    if out._parents:

        def _bw():
            g = out.grad
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
            _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

        out._backward = _bw
    return out


# --- softmax / layernorm ------------------------------------------------------


def softmax_lastdim(a: Tensor) -> Tensor:
    """Row-max-stabilized softmax over the last axis.

    Entries equal to -inf get weight exactly 0; a row that is all -inf has no
    distribution to normalize and raises MaskError.
    """
    x = a.data
    if x.shape[-1] < 1:
        raise ShapeError("softmax over an empty last dim")
    m = np.max(x, axis=-1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise MaskError("softmax row has every entry masked")
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    y = e / s
    out = _node(y, (a,), None)
    if out._parents:

        def _bw():
            g = out.grad
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accumulate(a, y * (g - dot))

        out._backward = _bw
    return out


def layernorm(
    x: Tensor,
    gain: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    for name, t in (("gain", gain), ("bias", bias)):
        if t is not None and t.shape != (d,):
            raise ShapeError(f"layernorm {name} shape {t.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    data = y
    if gain is not None:
        data = data * gain.data
    if bias is not None:
        data = data + bias.data
    parents = [x] + [t for t in (gain, bias) if t is not None]
    out = _node(data, parents, None)
    if out._parents:

        def _bw():
            g = out.grad
            dy = g * gain.data if gain is not None else g
            mean_dy = dy.mean(axis=-1, keepdims=True)
            mean_dyy = (dy * y).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (dy - mean_dy - y * mean_dyy))
            if gain is not None and gain.requires_grad:
                gain.grad += (g * y).reshape(-1, d).sum(axis=0)
            if bias is not None and bias.requires_grad:
                bias.grad += g.reshape(-1, d).sum(axis=0)

        out._backward = _bw
    return out


# --- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    out = _node(np.asarray(data), (a,), None)
    if out._parents:

        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape))

        out._backward = _bw
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --- shape ops ------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    out = _node(data, (a,), None)
    if out._parents:
        out._backward = lambda: _accumulate(a, out.grad.reshape(a.data.shape))
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    out = _node(data, (a,), None)
    if out._parents:
        inverse = tuple(np.argsort(axes))
        out._backward = lambda: _accumulate(a, np.transpose(out.grad, inverse))
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [(_coerce(t)) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat shapes incompatible") from exc
    out = _node(data, tensors, None)
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]

        def _bw():
            offset = 0
            for t, n in zip(tensors, sizes):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(offset, offset + n)
                _accumulate(t, out.grad[tuple(idx)])
                offset += n

        out._backward = _bw
    return out


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx]
    out = _node(data, (a,), None)
    if out._parents:

        def _bw():
            g = np.zeros_like(a.data)
            g[idx] = out.grad
            _accumulate(a, g)

        out._backward = _bw
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup into `table`; out-of-range ids are a vocabulary error."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise VocabError(
            f"id out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}"
        )
    data = table.data[ids]
    out = _node(data, (table,), None)
    if out._parents:

        def _bw():
            if table.requires_grad:
                np.add.at(table.grad, ids, out.grad)

        out._backward = _bw
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over every element; shapes must match exactly."""
    b = _coerce(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = sub(a, b)
    return tmean(mul(diff, diff))


def assert_finite(t: Tensor, context: str = "") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values{' in ' + context if context else ''}")
    return t


# --- counter-based RNG -----------------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _U64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return (z ^ (z >> 31)) & _U64


@dataclass
class RngState:
    """Deterministic stream addressed by (seed, position).

    Every draw keys a fresh Philox generator with the pair and then advances
    `position`, so a stream restored from a checkpoint continues bit-exactly.
    """

    seed: int
    position: int = 0

    def _next_generator(self) -> np.random.Generator:
        key = np.array([self.seed & _U64, self.position & _U64], dtype=np.uint64)
        self.position += 1
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape=()) -> np.ndarray:
        return self._next_generator().standard_normal(shape, dtype=np.float64)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._next_generator().uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._next_generator().integers(low, high, size=shape)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._next_generator().choice(n, size=size, replace=replace)

    def derive(self, tag) -> "RngState":
        """Independent child stream; `tag` may be an int or a short string."""
        if isinstance(tag, str):
            t = 0
            for ch in tag.encode("utf-8"):
                t = _splitmix64(t ^ ch)
        else:
            t = int(tag) & _U64
        return RngState(seed=_splitmix64((self.seed & _U64) ^ _splitmix64(t)))

    def state_dict(self) -> dict:
        return {"seed": int(self.seed), "position": int(self.position)}

    @classmethod
    def from_state_dict(cls, d: dict) -> "RngState":
        return cls(seed=int(d["seed"]), position=int(d["position"]))


def randn(rng: RngState, shape) -> Tensor:
    """I.i.d. standard-normal tensor; advances the stream by one draw."""
    return Tensor(rng.normal(tuple(shape)))


# --- finite-difference gradient oracle ----------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    per_param: dict = field(default_factory=dict)
    max_rel_err: float = 0.0
    tol: float = 1e-4
    passed: bool = False

    def worst(self) -> str:
        if not self.per_param:
            return "<empty>"
        name = max(self.per_param, key=self.per_param.get)
        return f"{name}: {self.per_param[name]:.3e}"


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Check analytic grads of the scalar `f()` against central differences.

    `f` must be deterministic (verified by evaluating it twice) and close over
    `params`; perturbations are applied in place and restored afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]

    with no_grad():
        v1 = float(f())
        v2 = float(f())
    if v1 != v2:
        raise DeterminismError(f"f() returned {v1!r} then {v2!r} for the same inputs")

    for _, p in named:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in named}

    report = GradCheckReport(tol=tol)
    for name, p in named:
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = float(f())
            flat[i] = orig - h
            with no_grad():
                fm = float(f())
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            rel = abs(a[i] - num) / max(abs(a[i]), abs(num), 1e-12)
            worst = max(worst, rel)
        report.per_param[name] = worst
    report.max_rel_err = max(report.per_param.values(), default=0.0)
    report.passed = report.max_rel_err < tol
    return report


# --- flat binary serialization ---------------------------------------------------

# Wire format: u32 rank, then u32 per dim, then the little-endian float64 payload.


def array_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def array_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one serialized array; returns (array, next offset)."""
    try:
        (rank,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", buf, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        end = offset + 8 * n
        if end > len(buf):
            raise FormatError("serialized tensor truncated")
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(dims)
        return arr.astype(np.float64), end
    except struct.error as exc:
        raise FormatError("serialized tensor header malformed") from exc
