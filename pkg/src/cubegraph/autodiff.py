"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Every operation validates shapes up front and records a backward closure;
backward() replays the closures in reverse topological order. The primitive
set is deliberately small: matrix multiply, (broadcast) add, elementwise
multiply, LeakyReLU / ReLU / sigmoid / tanh / exp, segment softmax, segment
sum and mean over row groups, row gather, concatenation, mean over rows,
plain sum, and a weighted binary cross-entropy loss. Segment groups must be
contiguous, sorted, and non-empty.
"""

from __future__ import annotations

import os
from typing import Callable

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple = (),
        backward_fn: Callable | None = None,
        op: str = "leaf",
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"


def _ordered_ops(root: Tensor) -> list[Tensor]:
    """Topological order of the computation record ending at root."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    order = _ordered_ops(loss)
    for t in order:
        t.grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for t in reversed(order):
        if t.backward_fn is not None and t.grad is not None:
            t.backward_fn(t.grad)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b), op="matmul")

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out.backward_fn = back
    return out


def _broadcast_ok(x: np.ndarray, y: np.ndarray) -> bool:
    """Same shape, or y a row vector (k,) / (1, k) broadcast over rows of x."""
    if x.shape == y.shape:
        return True
    if x.ndim == 2 and y.shape in ((x.shape[1],), (1, x.shape[1])):
        return True
    return False


def _reduce_to(shape: tuple, g: np.ndarray) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    if not (_broadcast_ok(a.data, b.data) or _broadcast_ok(b.data, a.data)):
        raise ValueError(f"add: incompatible shapes {a.data.shape} + {b.data.shape}")
    out = Tensor(a.data + b.data, parents=(a, b), op="add")

    def back(g):
        _accumulate(a, _reduce_to(a.data.shape, g))
        _accumulate(b, _reduce_to(b.data.shape, g))

    out.backward_fn = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not (_broadcast_ok(a.data, b.data) or _broadcast_ok(b.data, a.data)):
        raise ValueError(f"mul: incompatible shapes {a.data.shape} * {b.data.shape}")
    out = Tensor(a.data * b.data, parents=(a, b), op="mul")

    def back(g):
        _accumulate(a, _reduce_to(a.data.shape, g * b.data))
        _accumulate(b, _reduce_to(b.data.shape, g * a.data))

    out.backward_fn = back
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    out = Tensor(x.data * factor, parents=(x,), op="leaky_relu")
    out.backward_fn = lambda g: _accumulate(x, g * factor)
    return out


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, parents=(x,), op="sigmoid")
    out.backward_fn = lambda g: _accumulate(x, g * s * (1.0 - s))
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, parents=(x,), op="tanh")
    out.backward_fn = lambda g: _accumulate(x, g * (1.0 - t * t))
    return out


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    out = Tensor(e, parents=(x,), op="exp")
    out.backward_fn = lambda g: _accumulate(x, g * e)
    return out


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    if axis not in (0, 1):
        raise ValueError(f"concat: axis must be 0 or 1, got {axis}")
    ref = tensors[0].data
    for t in tensors[1:]:
        if t.data.ndim != ref.ndim or t.data.shape[1 - axis] != ref.shape[1 - axis]:
            raise ValueError(
                f"concat: shape {t.data.shape} incompatible with {ref.shape} on axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors), op="concat")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, g[lo:hi] if axis == 0 else g[:, lo:hi])

    out.backward_fn = back
    return out


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2 or index.ndim != 1:
        raise ValueError(f"gather_rows: need a 2-D source and 1-D index, got {x.data.shape}, {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.data.shape[0]):
        raise ValueError("gather_rows: index out of range")
    out = Tensor(x.data[index], parents=(x,), op="gather_rows")
    # scatter-add via sorted reduceat: much faster than np.add.at and still
    # deterministic because the summation order is fixed by the stable sort
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.flatnonzero(np.r_[True, np.diff(sorted_idx) > 0]) if index.size else np.zeros(0, np.int64)

    def back(g):
        acc = np.zeros_like(x.data)
        if index.size:
            acc[sorted_idx[starts]] = np.add.reduceat(g[order], starts, axis=0)
        _accumulate(x, acc)

    out.backward_fn = back
    return out


def _check_segments(segments: np.ndarray, rows: int, num_segments: int) -> np.ndarray:
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (rows,):
        raise ValueError(f"segment ids must be one per row, got {segments.shape} for {rows} rows")
    if rows == 0:
        raise ValueError("segment ops need at least one row")
    if np.any(np.diff(segments) < 0):
        raise ValueError("segment ids must be sorted ascending")
    present = np.unique(segments)
    if len(present) != num_segments or present[0] != 0 or present[-1] != num_segments - 1:
        raise ValueError(f"segments must cover 0..{num_segments - 1} without gaps")
    return segments


def _segment_starts(segments: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, np.diff(segments) > 0])


def segment_sum(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    segments = _check_segments(segments, x.data.shape[0], num_segments)
    starts = _segment_starts(segments)
    out = Tensor(np.add.reduceat(x.data, starts, axis=0), parents=(x,), op="segment_sum")
    out.backward_fn = lambda g: _accumulate(x, g[segments])
    return out


def segment_mean(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    segments = _check_segments(segments, x.data.shape[0], num_segments)
    starts = _segment_starts(segments)
    counts = np.diff(np.r_[starts, len(segments)]).astype(np.float64)
    out = Tensor(
        np.add.reduceat(x.data, starts, axis=0) / counts[:, None],
        parents=(x,),
        op="segment_mean",
    )
    out.backward_fn = lambda g: _accumulate(x, g[segments] / counts[segments][:, None])
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Mean across rows, emitted as a (1, k) tensor."""
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise ValueError(f"mean_rows: need a non-empty 2-D tensor, got {x.data.shape}")
    n = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True), parents=(x,), op="mean_rows")
    out.backward_fn = lambda g: _accumulate(x, np.repeat(g, n, axis=0) / n)
    return out


def segment_softmax(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Column-wise softmax within contiguous row groups."""
    segments = _check_segments(segments, x.data.shape[0], num_segments)
    if x.data.ndim != 2:
        raise ValueError(f"segment_softmax: need a 2-D tensor, got {x.data.shape}")
    starts = _segment_starts(segments)
    peak = np.maximum.reduceat(x.data, starts, axis=0)
    shifted = np.exp(x.data - peak[segments])
    denom = np.add.reduceat(shifted, starts, axis=0)
    alpha = shifted / denom[segments]
    out = Tensor(alpha, parents=(x,), op="segment_softmax")

    def back(g):
        inner = np.add.reduceat(g * alpha, starts, axis=0)
        _accumulate(x, alpha * (g - inner[segments]))

    out.backward_fn = back
    return out


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), parents=(x,), op="sum")
    out.backward_fn = lambda g: _accumulate(x, np.full(x.data.shape, float(g)))
    return out


def bce_loss(p: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean weighted binary cross-entropy of probabilities against 0/1 targets.

    Probabilities are clipped to [1e-12, 1 - 1e-12]; gradients vanish in the
    clipped region, matching the flattened forward value.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != p.data.shape:
        raise ValueError(f"bce_loss: target shape {targets.shape} != prediction shape {p.data.shape}")
    if weights is None:
        weights = np.ones_like(targets)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != targets.shape:
        raise ValueError(f"bce_loss: weight shape {weights.shape} != target shape {targets.shape}")
    eps = 1e-12
    clipped = np.clip(p.data, eps, 1.0 - eps)
    n = p.data.size
    value = -(weights * (targets * np.log(clipped) + (1.0 - targets) * np.log1p(-clipped))).sum() / n
    out = Tensor(value, parents=(p,), op="bce_loss")
    live = (p.data > eps) & (p.data < 1.0 - eps)

    def back(g):
        dp = weights * (-(targets / clipped) + (1.0 - targets) / (1.0 - clipped)) / n
        _accumulate(p, float(g) * dp * live)

    out.backward_fn = back
    return out


def finite_difference_check(
    build_loss: Callable[[], Tensor],
    params: list[Tensor],
    h: float = 1e-5,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    build_loss must recompute the scalar loss from the current parameter
    values. Relative error per entry is |a - n| / max(1e-8, |a| + |n|).
    """
    loss = build_loss()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().data)
            flat[i] = orig - h
            down = float(build_loss().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(ga.ravel()[i])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst


CHECKPOINT_MAGIC = "cubegraph-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, params: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    """Flat text format: a version line, sorted meta lines, then one
    shape line and one value line per parameter. repr() round-trips floats
    exactly, which keeps reruns byte-identical."""
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    for key in sorted(meta or {}):
        value = str((meta or {})[key])
        if "\n" in value or " " in key:
            raise ValueError(f"meta entry {key!r} must be a single line with a space-free key")
        lines.append(f"meta {key} {value}")
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        dims = " ".join(str(s) for s in arr.shape)
        lines.append(f"param {name} {dims}".rstrip())
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint file not found: {path}")
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"not a checkpoint file: {path}")
    version = lines[0].split()[1]
    if int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} in {path}")
    params: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            i += 1
        elif line.startswith("param "):
            head = line.split()
            name = head[1]
            shape = tuple(int(s) for s in head[2:])
            values = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
            expected = int(np.prod(shape)) if shape else 1
            if values.size != expected:
                raise ValueError(f"checkpoint {path}: parameter {name} has {values.size} values, expected {expected}")
            params[name] = values.reshape(shape)
            i += 2
        elif not line.strip():
            i += 1
        else:
            raise ValueError(f"checkpoint {path}: unrecognized line {i + 1}: {line[:40]!r}")
    return params, meta
