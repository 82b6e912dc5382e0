"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every differentiable operation in execution order; replaying
the record backwards accumulates adjoints into each participating Tensor's
``grad``. Shapes follow numpy broadcasting rules and adjoints of broadcast
operands are summed back down to the operand shape.

Ops run in "eval mode" (no recording, plain numpy) whenever no tape is
active, which is how validation passes and metric evaluations stay cheap.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "backward", "grad_check", "forward_op",
    "const", "add", "sub", "mul", "hadamard", "neg", "matmul", "node_linear",
    "sigmoid", "tanh", "softplus", "exp", "log", "leaky_relu", "clamp",
    "tsum", "mean", "logsumexp", "softmax", "log_softmax", "transpose",
    "reshape", "index_last", "narrow", "gather_rows", "gather_axis1",
    "straight_through", "trace_expm",
]

_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    tapes = _stack()
    return tapes[-1] if tapes else None


class Tensor:
    """Dense float64 array with optional gradient participation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # owned copy; g may be a view or shared
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)

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

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered operation record for one forward pass (one thread)."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out, backward_fn):
        self._entries.append((out, backward_fn))

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

        Intermediate grads are reset per call; leaf grads accumulate across
        calls (callers zero them between optimizer steps).
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        for out, _ in self._entries:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)


def backward(loss, tape):
    tape.backward(loss)


def const(x):
    """Tensor that does not participate in gradients."""
    return Tensor(x, requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, requires_grad, backward_fn):
    out = Tensor(data, requires_grad=requires_grad)
    if requires_grad:
        tape = active_tape()
        if tape is not None:
            tape.record(out, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}")


def add(a, b):
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a, b) from None

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, a.requires_grad or b.requires_grad, bw)


def sub(a, b):
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_error("sub", a, b) from None

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, a.requires_grad or b.requires_grad, bw)


def mul(a, b):
    """Elementwise (Hadamard) product with broadcasting."""
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a, b) from None

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, a.requires_grad or b.requires_grad, bw)


hadamard = mul


def neg(a):
    def bw(g):
        a.accumulate(-g)

    return _make(-a.data, a.requires_grad, bw)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} vs {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, a.requires_grad or b.requires_grad, bw)


def node_linear(x, w, b):
    """Stacked per-net affine map: out[..., j, h] = sum_i x[..., j, i] w[j, h, i] + b[j, h].

    One batched matmul instead of a python loop over nets; this is the hot
    op of every conditional forward pass.
    """
    if x.data.shape[-2] != w.data.shape[0] or x.data.shape[-1] != w.data.shape[2]:
        raise ShapeError(f"node_linear: x {x.data.shape} vs w {w.data.shape}")
    wt = np.swapaxes(w.data, 1, 2)  # (J, I, H)
    data = np.matmul(x.data[..., None, :], wt).squeeze(-2) + b.data

    def bw(g):
        if x.requires_grad:
            gx = np.matmul(g[..., None, :], w.data).squeeze(-2)
            x.accumulate(gx)
        if w.requires_grad:
            lead = int(np.prod(g.shape[:-2], dtype=np.int64))
            gf = g.reshape(lead, g.shape[-2], g.shape[-1])
            xf = x.data.reshape(lead, x.data.shape[-2], x.data.shape[-1])
            gw = np.matmul(gf.transpose(1, 2, 0), xf.transpose(1, 0, 2))
            w.accumulate(gw)
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, x.requires_grad or w.requires_grad or b.requires_grad, bw)


def sigmoid(a):
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ea = np.exp(a.data[~pos])
    data[~pos] = ea / (1.0 + ea)

    def bw(g):
        a.accumulate(g * data * (1.0 - data))

    return _make(data, a.requires_grad, bw)


def tanh(a):
    data = np.tanh(a.data)

    def bw(g):
        a.accumulate(g * (1.0 - data * data))

    return _make(data, a.requires_grad, bw)


def softplus(a):
    """log(1 + e^x), computed stably; output is strictly positive."""
    data = np.logaddexp(0.0, a.data)

    def bw(g):
        a.accumulate(g / (1.0 + np.exp(-a.data)))

    return _make(data, a.requires_grad, bw)


def exp(a):
    data = np.exp(a.data)

    def bw(g):
        a.accumulate(g * data)

    return _make(data, a.requires_grad, bw)


def log(a):
    data = np.log(a.data)

    def bw(g):
        a.accumulate(g / a.data)

    return _make(data, a.requires_grad, bw)


def leaky_relu(a, slope=0.01):
    data = np.where(a.data > 0, a.data, slope * a.data)

    def bw(g):
        a.accumulate(g * np.where(a.data > 0, 1.0, slope))

    return _make(data, a.requires_grad, bw)


def clamp(a, lo, hi):
    """Clip values to [lo, hi]; gradient passes only where unclipped."""
    data = np.clip(a.data, lo, hi)

    def bw(g):
        mask = (a.data >= lo) & (a.data <= hi)
        a.accumulate(g * mask)

    return _make(data, a.requires_grad, bw)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape))

    return _make(data, a.requires_grad, bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape) / n)

    return _make(data, a.requires_grad, bw)


def logsumexp(a, axis=-1, keepdims=False):
    """Overflow-safe log-sum-exp via max shift."""
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a.data - m)
    t = s.sum(axis=axis, keepdims=True)
    out = m + np.log(t)
    data = out if keepdims else np.squeeze(out, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(g * (s / t))

    return _make(data, a.requires_grad, bw)


def softmax(a, axis=-1):
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a.accumulate(data * (g - dot))

    return _make(data, a.requires_grad, bw)


def log_softmax(a, axis=-1):
    m = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    data = z - lse

    def bw(g):
        a.accumulate(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, a.requires_grad, bw)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got {a.data.shape}")
    data = a.data.T

    def bw(g):
        a.accumulate(g.T)

    return _make(data, a.requires_grad, bw)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def bw(g):
        a.accumulate(g.reshape(a.data.shape))

    return _make(data, a.requires_grad, bw)


def index_last(a, i):
    """Select index i of the last axis."""
    data = a.data[..., i]

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[..., i] = g
        a.accumulate(ga)

    return _make(data, a.requires_grad, bw)


def narrow(a, start, stop):
    """Slice [start:stop] of the last axis."""
    data = a.data[..., start:stop]

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[..., start:stop] = g
        a.accumulate(ga)

    return _make(data, a.requires_grad, bw)


def gather_rows(a, idx):
    """out = a[idx] with integer index array idx over axis 0."""
    idx = np.asarray(idx)
    data = a.data[idx]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a.accumulate(ga)

    return _make(data, a.requires_grad, bw)


def gather_axis1(a, idx):
    """out[b, j, :] = a[b, idx[b, j], :] for a of shape (B, S, O)."""
    idx = np.asarray(idx)
    data = np.take_along_axis(a.data, idx[..., None], axis=1)

    def bw(g):
        ga = np.zeros_like(a.data)
        rows = np.arange(a.data.shape[0])[:, None]
        np.add.at(ga, (rows, idx), g)
        a.accumulate(ga)

    return _make(data, a.requires_grad, bw)


def straight_through(hard, soft):
    """Forward the hard values; route the gradient to the soft relaxation."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.data.shape:
        raise ShapeError(f"straight_through: {hard.shape} vs {soft.data.shape}")

    def bw(g):
        soft.accumulate(g)

    return _make(hard, soft.requires_grad, bw)


def matrix_exp(m):
    """e^M by scaling-and-squaring around a degree-10 Taylor core.

    The matrices here are small with modest norms (entries in [0, 1]), so a
    fixed scaling schedule driving the 1-norm below 1/4 is accurate to
    ~1e-13 relative.
    """
    norm = np.linalg.norm(m, 1)
    s = 0 if norm <= 0.25 else int(np.ceil(np.log2(norm / 0.25)))
    a = m / (2.0 ** s)
    e = np.eye(m.shape[0]) + a
    term = a
    for k in range(2, 11):
        term = term @ a / k
        e += term
    for _ in range(s):
        e = e @ e
    return e


def trace_expm(a):
    """tr(e^A) - d for a nonnegative square matrix, with d(tr e^A)/dA = (e^A)^T."""
    m = a.data
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"trace_expm: expected square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("trace_expm: non-finite entries")
    e = matrix_exp(m)
    data = np.trace(e) - m.shape[0]

    def bw(g):
        a.accumulate(g * e.T)

    return _make(data, a.requires_grad, bw)


_OPS = {
    "add": add, "sub": sub, "mul": mul, "hadamard": hadamard, "matmul": matmul,
    "sigmoid": sigmoid, "tanh": tanh, "softplus": softplus, "softmax": softmax,
    "log": log, "exp": exp, "sum": tsum, "logsumexp": logsumexp,
}


def forward_op(kind, *inputs):
    """Dispatch an op by name (the supported differentiable primitive set)."""
    if kind not in _OPS:
        raise KeyError(f"unknown op kind: {kind!r}")
    return _OPS[kind](*inputs)


def grad_check(f, point, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f must be a deterministic scalar-valued function of `point`; the error
    per coordinate is |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    point.zero_grad()
    with Tape() as tape:
        out = f(point)
        if out.data.size != 1:
            raise ShapeError(f"grad_check: f must be scalar-valued, got {out.data.shape}")
        if not np.isfinite(out.data):
            raise ValueError("grad_check: f is not finite at point")
        tape.backward(out)
    analytic = np.zeros_like(point.data) if point.grad is None else point.grad.copy()
    flat = point.data.reshape(-1)
    aflat = analytic.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(point).data)
        flat[i] = orig - h
        fm = float(f(point).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("grad_check: f is not finite at perturbed point")
        num = (fp - fm) / (2.0 * h)
        err = abs(aflat[i] - num) / (abs(aflat[i]) + abs(num) + 1e-12)
        worst = max(worst, err)
    return worst
