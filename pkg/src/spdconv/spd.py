"""Space-to-depth, its inverse, and the SPD-Conv block."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    BatchNormState,
    ConvParams,
    ShapeError,
    Tensor,
    activation,
    batch_norm,
    conv2d,
    conv_out_size,
    make_result,
)


@dataclass(frozen=True)
class SpdSpec:
    scale: int
    mode: str = "strict"  # or "pad": zero-pad bottom/right up to a multiple of scale

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.mode not in ("strict", "pad"):
            raise ValueError(f"unknown SPD mode {self.mode!r}")

    def out_spatial(self, h: int, w: int) -> tuple[int, int]:
        s = self.scale
        if self.mode == "strict":
            for dim, size in (("height", h), ("width", w)):
                if size % s:
                    raise ShapeError(f"space_to_depth: {dim} {size} not divisible by scale {s}")
            return h // s, w // s
        return -(-h // s), -(-w // s)


def space_to_depth(x: Tensor, scale: int, mode: str = "strict") -> Tensor:
    """Rearrange each ``scale x scale`` neighbourhood into channels.

    Output channel block ``y * scale + x`` holds the sub-map
    ``X[:, :, x::scale, y::scale]`` (row offset ``x`` varies fastest), with the
    input channel order preserved inside each block.
    """
    spec = SpdSpec(scale, mode)
    n, c, h, w = x.shape
    oh, ow = spec.out_spatial(h, w)
    s = scale
    data = x.data
    ph, pw = oh * s - h, ow * s - w
    if ph or pw:
        data = np.pad(data, ((0, 0), (0, 0), (0, ph), (0, pw)))
    out = (
        data.reshape(n, c, oh, s, ow, s)
        .transpose(0, 5, 3, 1, 2, 4)
        .reshape(n, s * s * c, oh, ow)
    )

    def bw(g):
        gx = g.reshape(n, s, s, c, oh, ow).transpose(0, 3, 4, 2, 5, 1).reshape(n, c, oh * s, ow * s)
        return (np.ascontiguousarray(gx[:, :, :h, :w]),)

    return make_result(np.ascontiguousarray(out), (x,), bw, "space_to_depth")


def depth_to_space(x: Tensor, scale: int) -> Tensor:
    """Exact inverse of :func:`space_to_depth` (strict mode)."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    n, cs, h, w = x.shape
    s = scale
    if cs % (s * s):
        raise ShapeError(f"depth_to_space: channels {cs} not divisible by scale^2 = {s * s}")
    c = cs // (s * s)
    out = x.data.reshape(n, s, s, c, h, w).transpose(0, 3, 4, 2, 5, 1).reshape(n, c, h * s, w * s)

    def bw(g):
        gx = g.reshape(n, c, h, s, w, s).transpose(0, 5, 3, 1, 2, 4).reshape(n, cs, h, w)
        return (np.ascontiguousarray(gx),)

    return make_result(np.ascontiguousarray(out), (x,), bw, "depth_to_space")


@dataclass
class SpdConvBlock:
    """SPD followed by a stride-1 convolution, optional batch norm and activation.

    ``allow_expansion`` permits ``c_out >= scale**2 * c_in``, which a network
    stem on 3-channel images needs.
    """

    spd: SpdSpec
    conv: ConvParams
    norm: Optional[BatchNormState] = None
    act: Optional[str] = None
    allow_expansion: bool = False

    def __post_init__(self):
        if self.conv.stride != 1:
            raise ValueError(f"SPD-Conv requires a stride-1 convolution, got stride {self.conv.stride}")
        c_out, c_in = self.conv.weight.shape[:2]
        s2 = self.spd.scale ** 2
        if c_in % s2:
            raise ShapeError(f"conv c_in {c_in} is not a multiple of scale^2 = {s2}")
        if not self.allow_expansion and c_out >= c_in:
            raise ValueError(f"SPD-Conv expects C2 < scale^2*C1, got C2={c_out}, scale^2*C1={c_in}")

    @property
    def in_channels(self) -> int:
        return self.conv.weight.shape[1] // self.spd.scale ** 2

    @property
    def out_channels(self) -> int:
        return self.conv.weight.shape[0]

    @classmethod
    def create(
        cls,
        c_in: int,
        c_out: int,
        scale: int = 2,
        k: int = 3,
        norm: bool = True,
        act: Optional[str] = "relu",
        bias: bool = False,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
        allow_expansion: bool = False,
    ) -> "SpdConvBlock":
        rng = rng if rng is not None else np.random.default_rng(0)
        cin = scale * scale * c_in
        bound = np.sqrt(6.0 / (cin * k * k))
        weight = Tensor(rng.uniform(-bound, bound, (c_out, cin, k, k)).astype(dtype), requires_grad=True)
        b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        return cls(
            spd=SpdSpec(scale),
            conv=ConvParams(weight, b, stride=1, padding=k // 2),
            norm=BatchNormState.create(c_out, dtype=dtype) if norm else None,
            act=act,
            allow_expansion=allow_expansion,
        )


def spd_conv_forward(x: Tensor, block: SpdConvBlock, training: bool = False) -> Tensor:
    if x.shape[1] * block.spd.scale ** 2 != block.conv.weight.shape[1]:
        raise ShapeError(
            f"SPD-Conv: input channels {x.shape[1]} do not match block input channels {block.in_channels}"
        )
    y = conv2d(space_to_depth(x, block.spd.scale, block.spd.mode), block.conv)
    if block.norm is not None:
        y = batch_norm(y, block.norm, training)
    if block.act:
        y = activation(y, block.act)
    return y


# --------------------------------------------------------------------------
# sampling counts
# --------------------------------------------------------------------------

def conv_coverage(size: int, k: int, stride: int, pad: int = 0) -> np.ndarray:
    """How many sliding windows read each input position along one axis."""
    counts = np.zeros(size, dtype=np.int64)
    for o in range(conv_out_size(size, k, stride, pad)):
        lo = o * stride - pad
        counts[max(lo, 0):min(lo + k, size)] += 1
    return counts


def conv_coverage_2d(h: int, w: int, k: int, stride: int, pad: int = 0) -> np.ndarray:
    return np.outer(conv_coverage(h, k, stride, pad), conv_coverage(w, k, stride, pad))


def spd_coverage(h: int, w: int, scale: int) -> np.ndarray:
    """Times each input pixel appears in the space-to-depth output."""
    idx = np.arange(h * w, dtype=np.float64).reshape(1, 1, h, w)
    out = space_to_depth(Tensor(idx), scale).data.astype(np.int64).ravel()
    return np.bincount(out, minlength=h * w).reshape(h, w)
