"""Dense float64 tensors with taped reverse-mode differentiation.

Everything is float64 and row-major.  Operations executed while a Tape is
active are recorded in execution order (which is already topological); a
backward pass walks the record once, in reverse, accumulating gradients
in place.  A tape can be consumed by backward() exactly once.

Broadcasting is deliberately narrow: elementwise ops accept equal shapes or
one operand whose shape is a trailing suffix of the other's (scalar included).
Anything fancier is rejected so every backward rule stays auditable.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .rng import Rng, gumbel


class TensorError(Exception):
    """Base class for tensor-engine failures."""


class ShapeError(TensorError):
    """Operand shapes incompatible for an op kind."""

    def __init__(self, kind: str, *shapes):
        super().__init__(f"{kind}: incompatible shapes {[tuple(s) for s in shapes]}")
        self.kind = kind
        self.shapes = shapes


class NumericError(TensorError):
    """Domain violation (e.g. log of a non-positive value)."""


class TapeError(TensorError):
    """Backward misuse: empty tape, reuse, non-scalar loss."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    `requires_grad` marks tensors gradients flow into: parameter leaves
    (set explicitly) and any tape-recorded intermediate.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of the same values; gradients stop here."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # small operator sugar used by model code; constants are wrapped
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; ops run inside record themselves.  The record
    order is topological by construction, so backward() visits each node
    exactly once in reverse.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into t.grad for every recorded tensor."""
        if loss.data.size != 1:
            raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self._nodes:
            raise TapeError("backward on an empty tape")
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward")
        if loss._tape is not self:
            raise TapeError("loss tensor was not recorded on this tape")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, bw in reversed(self._nodes):
            if out.grad is not None:
                bw(out.grad)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Run the backward pass of the tape that recorded `loss`."""
    if loss._tape is None:
        raise TapeError("loss tensor is not attached to any tape")
    loss._tape.backward(loss)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], bw: Callable[[np.ndarray], None]) -> Tensor:
    """Create the op output, recording it when a tape is active and any
    parent participates in differentiation."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape._nodes.append((out, bw))
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic with suffix-only broadcasting
# ---------------------------------------------------------------------------

def _suffix_broadcast(kind: str, a: Tensor, b: Tensor):
    """Check shapes; return axes to sum over when reducing grads back."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return (), ()
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return tuple(range(len(sb) - len(sa))), ()
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return (), tuple(range(len(sa) - len(sb)))
    raise ShapeError(kind, sa, sb)


def _reduce_to(g: np.ndarray, axes: tuple) -> np.ndarray:
    return g.sum(axis=axes) if axes else g


def add(a: Tensor, b: Tensor) -> Tensor:
    ra, rb = _suffix_broadcast("add", a, b)

    def bw(g):
        _accum(a, _reduce_to(g, ra))
        _accum(b, _reduce_to(g, rb))

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    ra, rb = _suffix_broadcast("sub", a, b)

    def bw(g):
        _accum(a, _reduce_to(g, ra))
        _accum(b, -_reduce_to(g, rb))

    return _make(a.data - b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ra, rb = _suffix_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, _reduce_to(g * bd, ra))
        _accum(b, _reduce_to(g * ad, rb))

    return _make(ad * bd, (a, b), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; 1-D operands are promoted then squeezed back."""
    if a.data.ndim > 2 or b.data.ndim > 2 or a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul", a.shape, b.shape)
    a2 = a.data[None, :] if a.data.ndim == 1 else a.data
    b2 = b.data[:, None] if b.data.ndim == 1 else b.data
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a2 @ b2
    if a.data.ndim == 1:
        out = out[0]
    if b.data.ndim == 1:
        out = out[..., 0]

    def bw(g):
        g2 = g
        if a.data.ndim == 1:
            g2 = g2[None, ...]
        if b.data.ndim == 1:
            g2 = g2[..., None]
        ga = g2 @ b2.T
        gb = a2.T @ g2
        _accum(a, ga[0] if a.data.ndim == 1 else ga)
        _accum(b, gb[:, 0] if b.data.ndim == 1 else gb)

    return _make(out, (a, b), bw)


def l2_norm(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Vector 2-norm over the whole tensor, or along one axis.

    Subgradient at the origin is zero.
    """
    if axis is None:
        n = np.sqrt((x.data ** 2).sum())

        def bw(g):
            if n > 0.0:
                _accum(x, (float(g) / n) * x.data)

        return _make(np.asarray(n), (x,), bw)

    ax = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= ax < x.data.ndim:
        raise ShapeError("l2_norm", x.shape)
    n = np.sqrt((x.data ** 2).sum(axis=ax))

    def bw(g):
        denom = np.where(n == 0.0, 1.0, n)
        scale = np.where(n == 0.0, 0.0, g / denom)
        _accum(x, np.expand_dims(scale, ax) * x.data)

    return _make(n, (x,), bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    # stable two-sided form never exponentiates a large positive value
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def bw(g):
        _accum(x, g * s * (1.0 - s))

    return _make(s, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - t * t))

    return _make(t, (x,), bw)


def relu(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, g * (x.data > 0))

    return _make(np.maximum(x.data, 0.0), (x,), bw)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def bw(g):
        _accum(x, g * e)

    return _make(e, (x,), bw)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericError(f"log: non-positive input (min={x.data.min():g})")

    def bw(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), bw)


def abs_(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, g * np.sign(x.data))

    return _make(np.abs(x.data), (x,), bw)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient passes where x >= floor."""

    def bw(g):
        _accum(x, g * (x.data >= floor))

    return _make(np.maximum(x.data, floor), (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accum(x, s * (g - inner))

    return _make(s, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and structure
# ---------------------------------------------------------------------------

def sum_(x: Tensor, axis: Optional[int] = None) -> Tensor:
    def bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape).copy())
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(x.data.sum(axis=axis), (x,), bw)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    if n == 0:
        raise ShapeError("mean", x.shape)

    def bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g / n, x.shape).copy())
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy())

    return _make(x.data.mean(axis=axis), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat")
    base = list(tensors[0].shape)
    offsets = [0]
    for t in tensors:
        s = list(t.shape)
        if len(s) != len(base) or s[:axis] + s[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError("concat", *[t.shape for t in tensors])
        offsets.append(offsets[-1] + s[axis])
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), bw)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= axis < x.data.ndim) or not (0 <= start < stop <= x.shape[axis]):
        raise ShapeError("slice", x.shape)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[idx] += g

    return _make(x.data[idx], (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError("reshape", x.shape, shape)

    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), bw)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` (vocab x dim) by an integer id array."""
    if table.data.ndim != 2:
        raise ShapeError("embedding_lookup", table.shape)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise NumericError(f"embedding_lookup: id {bad} outside vocab of size {table.shape[0]}")

    def bw(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.ravel(), g.reshape(-1, table.shape[1]))

    return _make(table.data[ids], (table,), bw)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each trailing-dim row x[..., t, :] by the scalar s[..., t]."""
    if s.shape != x.shape[:-1]:
        raise ShapeError("scale_rows", x.shape, s.shape)
    sd = s.data[..., None]

    def bw(g):
        _accum(x, g * sd)
        _accum(s, (g * x.data).sum(axis=-1))

    return _make(x.data * sd, (x, s), bw)


def masked_mean(states: Tensor, mask: Tensor) -> Tensor:
    """Weighted mean over the positions axis: sum_t m_t*s_t / max(sum_t m_t, 1).

    `states` is (..., L, D), `mask` is (..., L); the max(., 1) guard makes the
    all-zero mask return a zero vector instead of dividing by zero.
    """
    if mask.shape != states.shape[:-1] or states.data.ndim < 2:
        raise ShapeError("masked_mean", states.shape, mask.shape)
    msum = mask.data.sum(axis=-1)
    denom = np.maximum(msum, 1.0)
    wsum = (states.data * mask.data[..., None]).sum(axis=-2)
    out = wsum / denom[..., None]

    def bw(g):
        inv = 1.0 / denom[..., None]
        _accum(states, g[..., None, :] * mask.data[..., None] * inv[..., None, :] if states.data.ndim > 2
               else mask.data[:, None] * (g * inv))
        # denominator only varies with the mask where the guard is inactive
        active = (msum > 1.0)[..., None]
        gm = ((g * inv)[..., None, :] * (states.data - np.where(active, out, 0.0)[..., None, :])).sum(axis=-1)
        _accum(mask, gm)

    return _make(out, (states, mask), bw)


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class ids.

    Row max is subtracted before exponentiation, so logits up to ~1e3 in
    magnitude stay finite.
    """
    d = logits.data
    if d.ndim == 1:
        d = d[None, :]
        lab = np.asarray([labels], dtype=np.int64)
    elif d.ndim == 2:
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (d.shape[0],):
            raise ShapeError("cross_entropy_with_logits", logits.shape, lab.shape)
    else:
        raise ShapeError("cross_entropy_with_logits", logits.shape)
    if lab.size and (lab.min() < 0 or lab.max() >= d.shape[1]):
        raise NumericError(f"cross_entropy_with_logits: label outside {d.shape[1]} classes")
    z = d - d.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(d.shape[0])
    losses = lse - z[rows, lab]
    out = losses.mean()

    def bw(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[rows, lab] -= 1.0
        p *= float(g) / d.shape[0]
        _accum(logits, p[0] if logits.data.ndim == 1 else p)

    return _make(np.asarray(out), (logits,), bw)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward the hard values, backpropagate as if the output were `soft`."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError("straight_through", soft.shape, hard.shape)

    def bw(g):
        _accum(soft, g)

    return _make(hard, (soft,), bw)


def gumbel_sample(rng: Rng, shape) -> Tensor:
    """I.i.d. standard Gumbel noise as a constant tensor."""
    return Tensor(gumbel(rng, shape))


# ---------------------------------------------------------------------------
# generic dispatcher
# ---------------------------------------------------------------------------

_OPS = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "matmul": matmul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "abs": abs_,
    "clamp_min": clamp_min,
    "softmax": softmax,
    "sum": sum_,
    "mean": mean,
    "concat": concat,
    "slice": slice_axis,
    "reshape": reshape,
    "embedding_lookup": embedding_lookup,
    "scale_rows": scale_rows,
    "masked_mean": masked_mean,
    "l2_norm": l2_norm,
    "cross_entropy_with_logits": cross_entropy_with_logits,
    "straight_through": straight_through,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Apply an op by kind name; the same entry points the ops above use."""
    if kind not in _OPS:
        raise TensorError(f"unknown op kind {kind!r}")
    if kind == "concat":
        return concat(inputs[0] if len(inputs) == 1 and isinstance(inputs[0], (list, tuple)) else list(inputs), **attrs)
    return _OPS[kind](*inputs, **attrs)


def op_kinds() -> list[str]:
    return sorted(_OPS)
