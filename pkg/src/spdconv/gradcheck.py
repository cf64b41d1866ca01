"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, mul, tsum


def numeric_grad(f: Callable[[], np.ndarray], arr: np.ndarray, eps: float, proj=None) -> np.ndarray:
    """Fourth-order central differences of ``sum(proj * f())`` w.r.t. ``arr``.

    Uses ``(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h``, whose
    truncation error is O(h^4), so a step large enough to keep round-off
    small does not leave a visible h^2 bias on small gradients.  ``arr`` is
    perturbed in place.  Outputs are differenced elementwise before
    projecting, which keeps the round-off relative to the change rather than
    to the loss magnitude.
    """
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)

    def at(i, v):
        flat[i] = v
        return f()

    for i in range(flat.size):
        orig = flat[i]
        near = at(i, orig + eps) - at(i, orig - eps)
        far = at(i, orig + 2 * eps) - at(i, orig - 2 * eps)
        flat[i] = orig
        diff = (8 * near - far) / (12 * eps)
        gflat[i] = (diff * proj).sum() if proj is not None else diff.sum()
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    Non-scalar outputs are reduced by a fixed random projection so every
    output element contributes; its stream is keyed apart from ``seed`` so it
    never coincides with inputs drawn from the same seed.  Inputs should be
    float64; only those with ``requires_grad`` are checked.
    """
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = op(*inputs)
        proj = None
        if out.data.size > 1:
            proj = Tensor(np.random.default_rng([seed, 0x9E37]).standard_normal(out.shape).astype(out.dtype))
            loss = tsum(mul(out, proj))
        else:
            loss = out if out.data.ndim == 0 else tsum(out)
    backward(tape, loss)

    def f() -> np.ndarray:
        return op(*inputs).data

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(f, t.data, eps, None if proj is None else proj.data)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


# --------------------------------------------------------------------------
# the standard operator suite
# --------------------------------------------------------------------------

def _away_from_zero(rng, shape, gap=0.1):
    # activations with a kink at 0 are only differentiable away from it
    u = rng.standard_normal(shape)
    return np.sign(u) * (gap + np.abs(u))


def _distinct(rng, shape, gap=0.01):
    # max pooling needs a unique maximum per window, separated by more than eps
    return rng.permutation(np.arange(int(np.prod(shape)))).reshape(shape) * gap


def gradient_suite(seed: int, eps: float = 1e-4) -> dict[str, float]:
    """Worst relative error per operator for one seed, all in float64."""
    from . import tensor as T
    from .spd import SpdConvBlock, space_to_depth, spd_conv_forward

    rng = np.random.default_rng([seed, 0x6C])
    f64 = lambda a, grad=True: Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)  # noqa: E731
    normal = lambda *s: rng.standard_normal(s)  # noqa: E731
    out: dict[str, float] = {}

    x, w, b = f64(normal(2, 3, 6, 6)), f64(normal(4, 3, 3, 3)), f64(normal(4))
    out["conv2d_stride1"] = grad_check(lambda x, w, b: T.conv2d(x, T.ConvParams(w, b, 1, 1)), [x, w, b], eps, seed)
    x, w = f64(normal(2, 3, 7, 7)), f64(normal(5, 3, 3, 3))
    out["conv2d_stride2"] = grad_check(lambda x, w: T.conv2d(x, T.ConvParams(w, None, 2, 1)), [x, w], eps, seed)

    st = T.BatchNormState.create(3, dtype=np.float64)
    st.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
    st.beta.data[:] = normal(3)
    x = f64(normal(4, 3, 3, 3) * 2 + 1)
    out["batch_norm"] = grad_check(lambda x, g, be: T.batch_norm(x, st, True), [x, st.gamma, st.beta], eps, seed)

    out["relu"] = grad_check(T.relu, [f64(_away_from_zero(rng, (2, 3, 4, 4)))], eps, seed)
    out["silu"] = grad_check(T.silu, [f64(normal(2, 3, 4, 4) * 3)], eps, seed)
    out["max_pool2d"] = grad_check(lambda x: T.max_pool2d(x, 3, 2, 1), [f64(_distinct(rng, (2, 2, 6, 6)))], eps, seed)

    x, w, b = f64(normal(3, 2, 2, 2)), f64(normal(5, 8)), f64(normal(5))
    out["linear"] = grad_check(T.linear, [x, w, b], eps, seed)
    out["global_avg_pool"] = grad_check(T.global_avg_pool, [f64(normal(2, 3, 4, 5))], eps, seed)
    out["space_to_depth"] = grad_check(lambda x: space_to_depth(x, 2), [f64(normal(2, 3, 4, 6))], eps, seed)

    labels = rng.integers(0, 6, 5)
    out["cross_entropy"] = grad_check(lambda z: T.cross_entropy(z, labels), [f64(normal(5, 6) * 2)], eps, seed)

    block = SpdConvBlock.create(2, 4, scale=2, act="silu", rng=rng, dtype=np.float64)
    block.norm.gamma.data[:] = rng.uniform(0.5, 1.5, 4)
    block.norm.beta.data[:] = normal(4)
    params = [block.conv.weight, block.norm.gamma, block.norm.beta]
    out["spd_conv_block"] = grad_check(
        lambda x, *_: spd_conv_forward(x, block, training=True), [f64(normal(3, 2, 4, 4)), *params], eps, seed
    )
    return out
