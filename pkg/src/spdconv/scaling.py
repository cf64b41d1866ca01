"""Width/depth scaling rules for generating model variants.

Width: ``n_w * width_factor`` rounded to the *nearest* multiple of 8 (ties
round up), never below 8.  Switching to ceiling-to-multiple only needs a
change in :func:`round_to_multiple`.

Depth: ``ceil(n_d * depth_factor)``, applied literally.  For the medium
variant this gives ``ceil(9 * 0.67) = 7`` repeats, one more than the
``round`` convention some detector code bases use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .graph import Graph

# tolerate float noise such as 9 * 0.33 = 2.9699999999999998
_EPS = 1e-9


@dataclass(frozen=True)
class ScalingFactors:
    depth_factor: float
    width_factor: float

    def __post_init__(self):
        if not (self.depth_factor > 0 and self.width_factor > 0):
            raise ValueError("scaling factors must be > 0")


VARIANTS = {
    "n": ScalingFactors(0.33, 0.25),
    "s": ScalingFactors(0.33, 0.50),
    "m": ScalingFactors(0.67, 0.75),
    "l": ScalingFactors(1.00, 1.00),
}


def round_to_multiple(x: float, divisor: int = 8) -> int:
    return max(divisor, int(math.floor(x / divisor + 0.5 + _EPS)) * divisor)


def scale_width(n_w: int, width_factor: float) -> int:
    return round_to_multiple(n_w * width_factor, 8)


def scale_depth(n_d: int, depth_factor: float) -> int:
    return max(1, math.ceil(n_d * depth_factor - _EPS))


def scale_model(g: Graph, f: ScalingFactors) -> Graph:
    """Width-scale every conv / C3 output width, depth-scale every C3 repeat count."""
    if f.width_factor == 1 and f.depth_factor == 1:
        return g
    nodes = []
    for n in g.nodes:
        attrs = dict(n.attrs)
        if n.op in ("conv", "c3"):
            attrs["c_out"] = scale_width(attrs["c_out"], f.width_factor)
        if n.op == "c3":
            attrs["n"] = scale_depth(attrs["n"], f.depth_factor)
        nodes.append(replace(n, attrs=attrs))
    return Graph(tuple(nodes))
