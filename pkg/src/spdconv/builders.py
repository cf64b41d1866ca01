"""Reference architectures as graphs.

Baseline ResNets downsample five times: a strided stem conv, a stride-2
max pool, and one strided 3x3 conv in front of each of stages 3-5.  Their
SPD counterparts remove the pool and put an SPD layer in front of each of
the four convs, which then run at stride 1.  Residual shortcuts are identity
everywhere except where a bottleneck stage changes width.
"""
from __future__ import annotations

from typing import Optional

from .graph import Graph, Node
from .scaling import VARIANTS, round_to_multiple, scale_model


class _Builder:
    def __init__(self, input_shape):
        c, h, w = input_shape
        self.nodes: list[Node] = [Node("input", "input", {"c": c, "h": h, "w": w})]

    def add(self, id_, op, inputs, **attrs) -> str:
        if isinstance(inputs, str):
            inputs = (inputs,)
        self.nodes.append(Node(id_, op, attrs, tuple(inputs)))
        return id_

    def conv_bn(self, name, x, c_out, k, stride=1, act: Optional[str] = "relu", spd=False) -> str:
        if spd:
            x = self.add(f"{name}_spd", "spd", x, scale=2)
        x = self.add(name, "conv", x, c_out=c_out, k=k, stride=stride, pad=k // 2, bias=0)
        x = self.add(f"{name}_bn", "batchnorm", x)
        if act:
            x = self.add(f"{name}_{act}", "activation", x, kind=act)
        return x

    def graph(self) -> Graph:
        return Graph(tuple(self.nodes))


def _width(c: int, mult: float) -> int:
    return c if mult == 1 else round_to_multiple(c * mult, 8)


def _check(num_classes, width):
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if not width > 0:
        raise ValueError("width_multiplier must be > 0")


def _basic_block(b: _Builder, name: str, x: str, c: int) -> str:
    y = b.conv_bn(f"{name}a", x, c, 3)
    y = b.conv_bn(f"{name}b", y, c, 3, act=None)
    y = b.add(f"{name}_add", "add", (y, x))
    return b.add(f"{name}_relu", "activation", y, kind="relu")


def _bottleneck(b: _Builder, name: str, x: str, c_in: int, mid: int, c_out: int) -> str:
    y = b.conv_bn(f"{name}a", x, mid, 1)
    y = b.conv_bn(f"{name}b", y, mid, 3)
    y = b.conv_bn(f"{name}c", y, c_out, 1, act=None)
    short = x
    if c_in != c_out:
        short = b.conv_bn(f"{name}_proj", x, c_out, 1, act=None)
    y = b.add(f"{name}_add", "add", (y, short))
    return b.add(f"{name}_relu", "activation", y, kind="relu")


def _resnet(kind: str, num_classes: int, width: float, spd: bool, input_shape) -> Graph:
    _check(num_classes, width)
    b = _Builder(input_shape)
    stem = _width(64, width)
    x = b.conv_bn("conv1", "input", stem, 3, stride=1 if spd else 2, spd=spd)
    if not spd:
        x = b.add("pool1", "maxpool", x, k=3, stride=2, pad=1)
    c_prev = stem
    if kind == "resnet18":
        stages = [(64, 64, 2), (128, 128, 2), (256, 256, 2), (512, 512, 2)]
    else:
        stages = [(64, 256, 3), (128, 512, 4), (256, 1024, 6), (512, 2048, 3)]
    for si, (mid, out, reps) in enumerate(stages, start=2):
        mid, out = _width(mid, width), _width(out, width)
        if si > 2:
            # downsampling conv: strided in the baseline, SPD + stride 1 otherwise
            x = b.conv_bn(f"down{si}", x, out, 3, stride=1 if spd else 2, spd=spd)
            c_prev = out
        for r in range(1, reps + 1):
            name = f"conv{si}_{r}"
            if kind == "resnet18":
                x = _basic_block(b, name, x, out)
            else:
                x = _bottleneck(b, name, x, c_prev, mid, out)
            c_prev = out
    x = b.add("gap", "global_avg_pool", x)
    x = b.add("fc", "linear", x, c_out=num_classes, bias=1)
    x = b.add("prob", "softmax", x)
    b.add("output", "output", x)
    return b.graph()


def build_resnet18(num_classes: int = 10, width_multiplier: float = 1.0, input_shape=(3, 32, 32)) -> Graph:
    return _resnet("resnet18", num_classes, width_multiplier, False, input_shape)


def build_resnet18_spd(num_classes: int = 10, width_multiplier: float = 1.0, input_shape=(3, 32, 32)) -> Graph:
    return _resnet("resnet18", num_classes, width_multiplier, True, input_shape)


def build_resnet50(num_classes: int = 10, width_multiplier: float = 1.0, input_shape=(3, 32, 32)) -> Graph:
    return _resnet("resnet50", num_classes, width_multiplier, False, input_shape)


def build_resnet50_spd(num_classes: int = 10, width_multiplier: float = 1.0, input_shape=(3, 32, 32)) -> Graph:
    return _resnet("resnet50", num_classes, width_multiplier, True, input_shape)


def build_yolov5_skeleton(variant: str = "l", input_shape=(3, 640, 640)) -> Graph:
    """Backbone + neck of a YOLOv5-style detector, for shape/replacement checks.

    Five stride-2 convs in the backbone, two in the neck, each neck one
    followed by a concat.  C3 blocks are single ``c3`` nodes; the detection
    head is omitted and the three pyramid levels feed the output node.
    """
    b = _Builder(input_shape)
    act = "silu"

    def conv(name, x, c, k, s=1):
        return b.conv_bn(name, x, c, k, stride=s, act=act)

    x = conv("b0", "input", 64, 3, 2)           # P1/2
    x = conv("b1", x, 128, 3, 2)                # P2/4
    x = b.add("b2", "c3", x, c_out=128, n=3, shortcut=1)
    x = conv("b3", x, 256, 3, 2)                # P3/8
    p3 = b.add("b4", "c3", x, c_out=256, n=6, shortcut=1)
    x = conv("b5", p3, 512, 3, 2)               # P4/16
    p4 = b.add("b6", "c3", x, c_out=512, n=9, shortcut=1)
    x = conv("b7", p4, 1024, 3, 2)              # P5/32
    x = b.add("b8", "c3", x, c_out=1024, n=3, shortcut=1)
    # SPPF
    x = conv("sppf_cv1", x, 512, 1)
    m1 = b.add("sppf_m1", "maxpool", x, k=5, stride=1, pad=2)
    m2 = b.add("sppf_m2", "maxpool", m1, k=5, stride=1, pad=2)
    m3 = b.add("sppf_m3", "maxpool", m2, k=5, stride=1, pad=2)
    x = b.add("sppf_cat", "concat", (x, m1, m2, m3))
    x = conv("sppf_cv2", x, 1024, 1)
    # top-down
    h10 = conv("n10", x, 512, 1)
    x = b.add("n11", "upsample", h10, scale=2)
    x = b.add("n12", "concat", (x, p4))
    x = b.add("n13", "c3", x, c_out=512, n=3, shortcut=0)
    h14 = conv("n14", x, 256, 1)
    x = b.add("n15", "upsample", h14, scale=2)
    x = b.add("n16", "concat", (x, p3))
    out3 = b.add("n17", "c3", x, c_out=256, n=3, shortcut=0)
    # bottom-up
    x = conv("n18", out3, 256, 3, 2)
    x = b.add("n19", "concat", (x, h14))
    out4 = b.add("n20", "c3", x, c_out=512, n=3, shortcut=0)
    x = conv("n21", out4, 512, 3, 2)
    x = b.add("n22", "concat", (x, h10))
    out5 = b.add("n23", "c3", x, c_out=1024, n=3, shortcut=0)
    b.add("output", "output", (out3, out4, out5))
    return scale_model(b.graph(), VARIANTS[variant])


BUILDERS = {
    "resnet18": build_resnet18,
    "resnet18-spd": build_resnet18_spd,
    "resnet50": build_resnet50,
    "resnet50-spd": build_resnet50_spd,
}
