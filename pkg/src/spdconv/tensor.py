"""Dense tensors with tape-based reverse-mode autodiff.

Arrays are numpy, laid out (n, c, h, w) row-major for feature maps and
(n, features) once flattened.  Operations preserve the input dtype, so
float32 is used for training and float64 for gradient checking.

Differentiable calls made while a :class:`Tape` is active (``with Tape()
as tape:``) are recorded in execution order; :func:`backward` replays the
record in reverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    op: str


@dataclass
class Tape:
    """Ordered record of differentiable ops executed while active."""

    records: list[_Record] = field(default_factory=list)
    # ids of recorded outputs; records keep those tensors alive
    live: set[int] = field(default_factory=set, repr=False)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        return backward(self, loss)

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


_TAPES: list[Tape] = []


def _active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op result, recording it on the active tape when any input is live."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is None:
        return out
    if any(t.requires_grad or id(t) in tape.live for t in inputs):
        tape.records.append(_Record(tuple(inputs), out, backward_fn, op))
        tape.live.add(id(out))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``.

    Gradients of tensors with ``requires_grad`` are accumulated into their
    ``.grad``.  Returns the full id -> gradient map (intermediates included).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        leaves[id(loss)] = loss
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{rec.op}: gradient shape {gi.shape} != input shape {t.shape}")
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
            if t.requires_grad:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(t.dtype, copy=False)
        t.grad = g if t.grad is None else t.grad + g
    return grads


# --------------------------------------------------------------------------
# elementwise and reductions
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def tsum(x: Tensor) -> Tensor:
    return make_result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    base = xs[0].shape
    for x in xs[1:]:
        if len(x.shape) != len(base) or any(
            d != e for i, (d, e) in enumerate(zip(x.shape, base)) if i != axis
        ):
            raise ShapeError(f"concat: shape {x.shape} incompatible with {base} on axis {axis}")
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bw, "concat")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bw(g):
        return (g * (s * (1 + x.data * (1 - s))),)

    return make_result(x.data * s, (x,), bw, "silu")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "silu":
        return silu(x)
    if kind in ("identity", "none"):
        return x
    raise ValueError(f"unknown activation kind {kind!r}")


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    area = h * w

    def bw(g):
        return (np.broadcast_to(g / area, x.shape).astype(x.dtype),)

    return make_result(x.data.mean(axis=(2, 3), keepdims=True), (x,), bw, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias``; rank-4 inputs are flattened per sample."""
    if x.data.ndim != 2:
        x = flatten(x)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input features {x.shape[1]} != weight in_features {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(out, inputs, bw, "linear")


# --------------------------------------------------------------------------
# convolution and pooling
# --------------------------------------------------------------------------

@dataclass
class ConvParams:
    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if len(self.weight.shape) != 4:
            raise ShapeError(f"conv weight must be (c_out, c_in, k_h, k_w), got {self.weight.shape}")


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # (n, c, kh, kw, oh, ow) view-free gather, one strided slice per kernel tap
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding."""
    if len(x.shape) != 4:
        raise ShapeError(f"conv2d expects (n, c, h, w) input, got {x.shape}")
    w = params.weight
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    s, p = params.stride, params.padding
    if c != ci:
        raise ShapeError(f"conv2d: input channels {c} != weight c_in {ci}")
    if h + 2 * p < kh:
        raise ShapeError(f"conv2d: padded height {h + 2 * p} smaller than kernel height {kh}")
    if wd + 2 * p < kw:
        raise ShapeError(f"conv2d: padded width {wd + 2 * p} smaller than kernel width {kw}")
    oh, ow = conv_out_size(h, kh, s, p), conv_out_size(wd, kw, s, p)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _windows(xp, kh, kw, s, oh, ow)
    # (n, oh, ow, co) -> (n, co, oh, ow)
    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    b = params.bias
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        gcols = np.tensordot(w.data, g, axes=([0], [1]))  # (ci, kh, kw, n, oh, ow)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += gcols[:, i, j].transpose(1, 0, 2, 3)
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        grads = [gx, gw.astype(w.dtype)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, inputs, bw, "conv2d")


def max_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Window max; ties route the gradient to the first maximum in scan order."""
    n, c, h, w = x.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"max_pool2d: window {k} larger than input {h}x{w} (padding {padding})")
    oh, ow = conv_out_size(h, k, stride, padding), conv_out_size(w, k, stride, padding)
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x.data
    win = _windows(xp, k, k, stride, oh, ow).reshape(n, c, k * k, oh, ow)
    idx = win.argmax(axis=2)
    out = np.take_along_axis(win, idx[:, :, None], axis=2)[:, :, 0]

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for t in range(k * k):
            i, j = divmod(t, k)
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += np.where(idx == t, g, 0)
        return (gxp[:, :, p:p + h, p:p + w] if p else gxp,)

    return make_result(out, (x,), bw, "max_pool2d")


def upsample_nearest(x: Tensor, scale: int) -> Tensor:
    out = x.data.repeat(scale, axis=2).repeat(scale, axis=3)
    n, c, h, w = x.shape

    def bw(g):
        return (g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)),)

    return make_result(out, (x,), bw, "upsample")


# --------------------------------------------------------------------------
# batch norm
# --------------------------------------------------------------------------

@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("batch-norm epsilon must be > 0")
        if not 0 < self.momentum < 1:
            raise ValueError("batch-norm momentum must lie in (0, 1)")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")


def batch_norm(x: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over (n, h, w).

    Training mode normalizes with the biased batch variance and folds the
    unbiased one into the running estimate.
    """
    c = x.shape[1]
    if state.gamma.shape != (c,) or state.beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} input channels but parameters of shape {state.gamma.shape}")
    axes = (0, 2, 3)
    bshape = (1, c, 1, 1)
    gamma, beta = state.gamma, state.beta
    if training:
        m = x.data.size // c
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        mom = state.momentum
        unbiased = var * m / max(m - 1, 1)
        state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean
        state.running_var[...] = (1 - mom) * state.running_var + mom * unbiased
    else:
        mean, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    out = out.astype(x.dtype, copy=False)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = inv.reshape(bshape) * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return make_result(out, (x, gamma, beta), bw, "batch_norm")


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    data = np.exp(log_softmax(x.data))

    def bw(g):
        return (data * (g - (g * data).sum(axis=1, keepdims=True)),)

    return make_result(data, (x,), bw, "softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"cross_entropy: label {bad} outside [0, {k})")
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1
        return ((grad * (g / n)).astype(logits.dtype),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), bw, "cross_entropy")
