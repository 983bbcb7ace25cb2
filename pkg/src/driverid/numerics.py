"""Dense float64 tensors with tape-based reverse-mode differentiation.

The operation set is exactly what the embedding network and its training
loop need: affine maps, causal dilated convolution, elementwise plumbing,
squared-distance reductions and a fused softmax cross entropy.  Everything
is 64-bit so finite-difference checks are trustworthy.

Recording model: ops executed while a :class:`Tape` is active are appended
to it in execution order, which is a topological order by construction.
``backward`` replays the list once, in reverse, accumulating gradients into
``Tensor.grad``.  Tensors are immutable once created except for gradient
accumulation; independent tapes share no mutable state, so separate tapes
may run on separate threads.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _conv_kernels
from .errors import InvalidParameterError, ShapeMismatchError

_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of executed operations; inputs always precede users."""

    def __init__(self):
        self.ops: list[_OpRecord] = []

    def record(self, op: "_OpRecord") -> None:
        self.ops.append(op)

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False


class _OpRecord:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tensor:
    """Dense float64 array, optionally carrying a gradient buffer.

    ``node`` points at the tape record that produced this tensor, when one
    did; leaves have ``node is None``.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def _participates(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _record(inputs: tuple, out: Tensor, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is None or not any(_participates(t) for t in inputs):
        return out
    rec = _OpRecord(inputs, out, backward_fn)
    out.node = rec
    tape.record(rec)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every participating tensor reachable from loss.

    Visits each recorded op exactly once, in reverse execution order.
    Intermediate gradients are released as soon as their op is processed.
    Must run inside the ``with Tape():`` block that recorded the loss.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = _active_tape()
    if tape is None:
        raise InvalidParameterError("backward called with no active tape")
    if loss.node is None or loss.node not in tape.ops:
        raise InvalidParameterError("loss is not connected to the active tape")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.ops):
        g = rec.output.grad
        if g is None:
            continue
        needs = tuple(_participates(t) for t in rec.inputs)
        grads = rec.backward_fn(g, needs)
        for t, gi in zip(rec.inputs, grads):
            if gi is None:
                continue
            if t.grad is None:
                # Backward rules may hand back the upstream gradient itself
                # (add) or a view of it (concat); those must not be shared.
                t.grad = gi.copy() if (gi is g or gi.base is g) else gi
            else:
                t.grad += gi
        if not rec.output.requires_grad:
            rec.output.grad = None


# -- elementwise and structural ops ----------------------------------------

def add(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ShapeMismatchError(f"add: shapes {x.data.shape} and {y.data.shape} differ")
    out = Tensor(x.data + y.data)

    def bwd(g, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return _record((x, y), out, bwd)


def sub(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ShapeMismatchError(f"sub: shapes {x.data.shape} and {y.data.shape} differ")
    out = Tensor(x.data - y.data)

    def bwd(g, needs):
        return (g if needs[0] else None, -g if needs[1] else None)

    return _record((x, y), out, bwd)


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + float(c))

    def bwd(g, needs):
        return (g,)

    return _record((x,), out, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)

    def bwd(g, needs):
        return (g * c,)

    return _record((x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def bwd(g, needs):
        return (g * (out.data > 0.0),)

    return _record((x,), out, bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean())

    def bwd(g, needs):
        return (np.full(x.data.shape, float(g) / n),)

    return _record((x,), out, bwd)


def dropout(x: Tensor, p: float, training: bool, rng: "CounterRng") -> Tensor:
    """Zero each element with probability p, scale survivors by 1/(1-p).

    Identity in eval mode.  The mask comes from one counter step of ``rng``,
    so a fixed master seed reproduces the exact mask sequence.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.uniform(x.data.shape) >= p
    inv = 1.0 / (1.0 - p)
    out = Tensor(x.data * keep * inv)

    def bwd(g, needs):
        return (g * keep * inv,)

    return _record((x,), out, bwd)


def last_frame(x: Tensor) -> Tensor:
    """[B, C, L] -> [B, C], the hidden vector at the final time step."""
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"last_frame expects [B,C,L], got {x.data.shape}")
    out = Tensor(np.ascontiguousarray(x.data[:, :, -1]))

    def bwd(g, needs):
        gx = np.zeros_like(x.data)
        gx[:, :, -1] = g
        return (gx,)

    return _record((x,), out, bwd)


def concat_features(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate [B, d_i] blocks along the feature axis."""
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeMismatchError(
            f"concat_features expects [B,d] blocks with equal B, got {[p.data.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.data.shape[1] for p in parts]

    def bwd(g, needs):
        grads = []
        lo = 0
        for w, need in zip(widths, needs):
            grads.append(g[:, lo:lo + w] if need else None)
            lo += w
        return tuple(grads)

    return _record(tuple(parts), out, bwd)


# -- affine and convolution -------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out[b,o] = sum_i x[b,i] w[i,o] + b[o]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatchError(
            f"linear: x {x.data.shape} incompatible with w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeMismatchError(
            f"linear: bias {b.data.shape} incompatible with w {w.data.shape}")
    out = Tensor(x.data @ w.data + b.data)

    def bwd(g, needs):
        gx = g @ w.data.T if needs[0] else None
        gw = x.data.T @ g if needs[1] else None
        gb = g.sum(axis=0) if needs[2] else None
        return (gx, gw, gb)

    return _record((x, w, b), out, bwd)


def conv1d_causal(x: Tensor, w: Tensor, b: Tensor, dilation: int = 1) -> Tensor:
    """Causal dilated convolution; output length equals input length.

    Left zero-padding of (K-1)*dilation frames, so out[...,t] never depends
    on inputs at frames later than t.
    """
    if dilation < 1:
        raise InvalidParameterError(f"dilation must be >= 1, got {dilation}")
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatchError(
            f"conv1d_causal: x {x.data.shape} incompatible with w {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeMismatchError(
            f"conv1d_causal: bias {b.data.shape} incompatible with w {w.data.shape}")
    k = w.data.shape[2]
    out = Tensor(_conv_kernels.forward(x.data, w.data, b.data, dilation))

    def bwd(g, needs):
        g = np.ascontiguousarray(g)
        gx = _conv_kernels.grad_input(g, w.data, dilation) if needs[0] else None
        gw = _conv_kernels.grad_weight(g, x.data, k, dilation) if needs[1] else None
        gb = g.sum(axis=(0, 2)) if needs[2] else None
        return (gx, gw, gb)

    return _record((x, w, b), out, bwd)


# -- distances and losses ---------------------------------------------------

def squared_l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """sum_d (a[d]-b[d])^2 for two equal-length vectors; scalar output."""
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"squared_l2_distance: shapes {a.data.shape} and {b.data.shape}")
    diff = a.data - b.data
    out = Tensor(np.sum(diff * diff))

    def bwd(g, needs):
        ga = (2.0 * float(g)) * diff if needs[0] else None
        gb = (-2.0 * float(g)) * diff if needs[1] else None
        return (ga, gb)

    return _record((a, b), out, bwd)


def squared_l2_distance_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise squared distance for [B, D] operands; output [B]."""
    if a.data.ndim != 2 or a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"squared_l2_distance_rows: shapes {a.data.shape} and {b.data.shape}")
    diff = a.data - b.data
    out = Tensor(np.sum(diff * diff, axis=1))

    def bwd(g, needs):
        scaled = 2.0 * g[:, None] * diff
        ga = scaled if needs[0] else None
        gb = -scaled if needs[1] else None
        return (ga, gb)

    return _record((a, b), out, bwd)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross entropy over rows; labels are integer class ids."""
    z = logits.data
    if z.ndim != 2 or len(labels) != z.shape[0]:
        raise ShapeMismatchError(
            f"softmax_cross_entropy: logits {z.shape} vs {len(labels)} labels")
    labels = np.asarray(labels, dtype=np.intp)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    out = Tensor(-logp[rows, labels].mean())

    def bwd(g, needs):
        gz = probs.copy()
        gz[rows, labels] -= 1.0
        gz *= float(g) / z.shape[0]
        return (gz,)

    return _record((logits,), out, bwd)


# -- reproducible dropout stream --------------------------------------------

class CounterRng:
    """Counter-based uniform stream: draw i depends only on (seed, i)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0

    def uniform(self, shape) -> np.ndarray:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.counter,))
        self.counter += 1
        return np.random.default_rng(ss).random(shape)


# -- gradient verification ---------------------------------------------------

def finite_difference_check(f: Callable[[], Tensor],
                            params: Iterable[Tensor],
                            h: float = 1e-5) -> float:
    """Max relative disagreement between tape gradients and central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    tensor.  Relative error for one parameter element is
    |analytic - numeric| / max(1, |numeric|); the max over all elements of
    all params is returned.
    """
    if h <= 0:
        raise InvalidParameterError(f"step h must be positive, got {h}")
    params = list(params)
    for p in params:
        p.grad = None
    with Tape():
        loss = f()
        if loss.node is not None:
            backward(loss)
        elif loss.data.size != 1:
            raise ShapeMismatchError(
                f"finite_difference_check expects a scalar loss, got {loss.data.shape}")
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            dn = f().item()
            flat[i] = orig
            numeric = (up - dn) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    for p in params:
        p.grad = None
    return worst
