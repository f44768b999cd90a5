"""Finite-difference verification of every differentiable op kind.

For each op we build random small instances, reduce the output to a scalar,
and compare taped gradients against central differences (h=1e-5).  Ops with
intended forward/backward mismatch (straight_through) or no gradient path
(gumbel_sample) are excluded by construction.

Kinked ops (abs, relu, clamp_min, masked_mean's denominator guard) are
sampled away from their kinks; the kink behaviour itself is pinned by unit
tests, not by finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng


@dataclass
class OpCheck:
    kind: str
    instances: int
    max_rel_err: float
    passed: bool


def numeric_grad(f, t: T.Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar-valued f() w.r.t. t's entries."""
    g = np.zeros_like(t.data)
    flat = t.data.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f()
        flat[i] = keep - h
        fm = f()
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1e-3, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / scale).max()) if analytic.size else 0.0


def check_case(build, leaves: list[T.Tensor], h: float = 1e-5) -> float:
    """Compare taped grads of loss=build() against finite differences.

    `build` must recompute the loss from the current leaf values each call.
    Returns the worst relative error over all leaves.
    """
    for leaf in leaves:
        leaf.zero_grad()
    with T.Tape() as tape:
        loss = build()
    tape.backward(loss)
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = numeric_grad(lambda: float(build().data), leaf, h=h)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def _rand(rng: Rng, shape, lo=-2.0, hi=2.0) -> T.Tensor:
    return T.Tensor(lo + (hi - lo) * rng.uniform(shape), requires_grad=True)


def _away_from(x: np.ndarray, kink: float, margin: float) -> np.ndarray:
    # push entries out of the FD window around a kink
    close = np.abs(x - kink) < margin
    return np.where(close, kink + margin * np.where(x >= kink, 1.0, -1.0) * 2.0, x)


def _dims(rng: Rng, ndim: int) -> tuple:
    return tuple(int(d) for d in rng.choice(4, ndim) + 1)


def _instance(kind: str, rng: Rng):
    """Build (loss-builder, leaves) for one random instance of `kind`."""
    if kind in ("add", "sub", "mul"):
        shape = _dims(rng, 2)
        a = _rand(rng, shape)
        b = _rand(rng, shape[1:] if rng.uniform() < 0.4 else shape)
        op = getattr(T, kind)
        return lambda: T.sum_(op(a, b)), [a, b]
    if kind == "neg":
        a = _rand(rng, _dims(rng, 2))
        return lambda: T.sum_(T.neg(a)), [a]
    if kind == "matmul":
        m, k, n = _dims(rng, 3)
        a = _rand(rng, (m, k))
        b = _rand(rng, (k, n))
        return lambda: T.sum_(T.matmul(a, b)), [a, b]
    if kind in ("sigmoid", "tanh", "exp"):
        a = _rand(rng, _dims(rng, 2))
        op = getattr(T, kind)
        return lambda: T.sum_(op(a)), [a]
    if kind == "log":
        a = _rand(rng, _dims(rng, 2), lo=0.2, hi=3.0)
        return lambda: T.sum_(T.log(a)), [a]
    if kind == "abs":
        a = _rand(rng, _dims(rng, 2))
        a.data = _away_from(a.data, 0.0, 1e-3)
        return lambda: T.sum_(T.abs_(a)), [a]
    if kind == "relu":
        a = _rand(rng, _dims(rng, 2))
        a.data = _away_from(a.data, 0.0, 1e-3)
        return lambda: T.sum_(T.relu(a)), [a]
    if kind == "clamp_min":
        a = _rand(rng, _dims(rng, 2))
        a.data = _away_from(a.data, 0.5, 1e-3)
        return lambda: T.sum_(T.clamp_min(a, 0.5)), [a]
    if kind == "softmax":
        shape = _dims(rng, 2)
        a = _rand(rng, shape)
        w = T.Tensor(rng.normal(shape))
        return lambda: T.sum_(T.mul(T.softmax(a, axis=-1), w)), [a]
    if kind in ("sum", "mean"):
        shape = _dims(rng, 2)
        a = _rand(rng, shape)
        axis = None if rng.uniform() < 0.4 else rng.randint(2)
        op = T.sum_ if kind == "sum" else T.mean
        return lambda: T.sum_(op(a, axis=axis)), [a]
    if kind == "concat":
        d = int(rng.choice(3, 1)[0]) + 1
        a = _rand(rng, (int(rng.choice(3, 1)[0]) + 1, d))
        b = _rand(rng, (int(rng.choice(3, 1)[0]) + 1, d))
        w = T.Tensor(rng.normal((a.shape[0] + b.shape[0], d)))
        return lambda: T.sum_(T.mul(T.concat([a, b], axis=0), w)), [a, b]
    if kind == "slice":
        m, n = _dims(rng, 2)
        a = _rand(rng, (m + 2, n))
        start = rng.randint(m)
        return lambda: T.sum_(T.slice_axis(a, 0, start, start + 2)), [a]
    if kind == "reshape":
        m, n = _dims(rng, 2)
        a = _rand(rng, (m, n))
        return lambda: T.sum_(T.exp(T.reshape(a, (n * m,)))), [a]
    if kind == "embedding_lookup":
        vocab, d = 5, int(rng.choice(3, 1)[0]) + 2
        table = _rand(rng, (vocab, d))
        ids = rng.choice(vocab, 6).reshape(2, 3)
        return lambda: T.sum_(T.embedding_lookup(table, ids)), [table]
    if kind == "scale_rows":
        b, l, d = _dims(rng, 3)
        x = _rand(rng, (b, l, d))
        s = _rand(rng, (b, l))
        return lambda: T.sum_(T.scale_rows(x, s)), [x, s]
    if kind == "masked_mean":
        l, d = int(rng.choice(3, 1)[0]) + 2, int(rng.choice(3, 1)[0]) + 1
        states = _rand(rng, (l, d))
        m = _rand(rng, (l,), lo=0.05, hi=1.0)
        # keep the mask-sum away from the max(.,1) kink
        if abs(m.data.sum() - 1.0) < 0.05:
            m.data += 0.1
        return lambda: T.sum_(T.masked_mean(states, m)), [states, m]
    if kind == "l2_norm":
        shape = _dims(rng, 2)
        a = _rand(rng, shape, lo=0.3, hi=2.0)
        axis = None if rng.uniform() < 0.5 else 1
        return lambda: T.sum_(T.l2_norm(a, axis=axis)), [a]
    if kind == "cross_entropy_with_logits":
        b, c = int(rng.choice(3, 1)[0]) + 1, int(rng.choice(3, 1)[0]) + 2
        logits = _rand(rng, (b, c))
        labels = rng.choice(c, b)
        return lambda: T.cross_entropy_with_logits(logits, labels), [logits]
    raise ValueError(f"no instance builder for op kind {kind!r}")


CHECKED_KINDS = (
    "add", "sub", "neg", "mul", "matmul", "sigmoid", "tanh", "relu", "exp",
    "log", "abs", "clamp_min", "softmax", "sum", "mean", "concat", "slice",
    "reshape", "embedding_lookup", "scale_rows", "masked_mean", "l2_norm",
    "cross_entropy_with_logits",
)


def run_grad_suite(instances: int = 20, h: float = 1e-5, tol: float = 1e-4,
                   seed: int = 0) -> list[OpCheck]:
    """Check every differentiable op kind on `instances` random cases each."""
    results = []
    for stream, kind in enumerate(CHECKED_KINDS):
        rng = Rng(seed, stream=stream)
        worst = 0.0
        for _ in range(instances):
            build, leaves = _instance(kind, rng)
            worst = max(worst, check_case(build, leaves, h=h))
        results.append(OpCheck(kind, instances, worst, worst < tol))
    return results


def random_dag_check(rng: Rng, max_ops: int = 5) -> float:
    """FD-check a random chain of smooth ops (dims <= 4) ending in a scalar."""
    shape = _dims(rng, 2)
    leaves = [_rand(rng, shape), _rand(rng, shape)]
    plan = [int(v) for v in rng.choice(6, max_ops)]

    def build():
        cur = leaves[0]
        for pick in plan:
            if pick == 0:
                cur = T.add(cur, leaves[1])
            elif pick == 1:
                cur = T.mul(cur, leaves[1])
            elif pick == 2:
                cur = T.tanh(cur)
            elif pick == 3:
                cur = T.sigmoid(cur)
            elif pick == 4:
                cur = T.softmax(cur, axis=-1)
            else:
                cur = T.sub(cur, leaves[1])
        return T.mean(cur)

    return check_case(build, leaves)
