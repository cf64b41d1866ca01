"""Architecture IR: nodes, the text description format, shape inference.

Graph description format, one node per line::

    # comment
    x     = input(c=3, h=32, w=32)
    conv1 = conv(c_out=64, k=3, stride=2, pad=1) <- x
    cat   = concat() <- a, b

If no ``input`` node is declared, one named ``input`` is created from the
``input_shape`` argument of :func:`parse_graph`; if no ``output`` node is
declared, one consuming the last node (in dependency order) is appended.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional

from .tensor import ShapeError, conv_out_size

Shape = tuple  # (c, h, w) for feature maps, (features,) after linear


class GraphError(ValueError):
    """Invalid graph text or structure."""


# op -> (required attrs, defaults, min inputs, max inputs); None = unbounded
OP_SIGNATURES: dict[str, tuple[tuple[str, ...], dict[str, Any], int, Optional[int]]] = {
    "input": (("c", "h", "w"), {}, 0, 0),
    "conv": (("c_out", "k"), {"stride": 1, "pad": None, "bias": 0}, 1, 1),
    "maxpool": (("k",), {"stride": None, "pad": 0}, 1, 1),
    "batchnorm": ((), {"eps": 1e-5}, 1, 1),
    "activation": (("kind",), {}, 1, 1),
    "add": ((), {}, 2, None),
    "concat": ((), {}, 2, None),
    "spd": (("scale",), {"mode": "strict"}, 1, 1),
    "global_avg_pool": ((), {}, 1, 1),
    "linear": (("c_out",), {"bias": 1}, 1, 1),
    "softmax": ((), {}, 1, 1),
    "output": ((), {}, 1, None),
    # shape-level extras for the detector skeleton
    "upsample": (("scale",), {}, 1, 1),
    "c3": (("c_out", "n"), {"shortcut": 1}, 1, 1),
}

ACTIVATIONS = ("relu", "silu")


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    attrs: Mapping[str, Any] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()

    def attr(self, key: str):
        """Attribute value with op defaults applied."""
        if key in self.attrs:
            return self.attrs[key]
        if self.op == "conv" and key == "pad":
            return self.attrs["k"] // 2
        if self.op == "maxpool" and key == "stride":
            return self.attrs["k"]
        return OP_SIGNATURES[self.op][1][key]


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    shapes: Optional[Mapping[str, Shape]] = None

    def __post_init__(self):
        validate(self)

    @property
    def input_node(self) -> Node:
        return next(n for n in self.nodes if n.op == "input")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        a = self.input_node.attrs
        return (a["c"], a["h"], a["w"])

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def consumers(self, node_id: str) -> list[Node]:
        return [n for n in self.nodes if node_id in n.inputs]

    def count(self, op: str) -> int:
        return sum(n.op == op for n in self.nodes)

    def with_input_shape(self, shape: tuple[int, int, int]) -> "Graph":
        c, h, w = shape
        nodes = tuple(
            replace(n, attrs={"c": c, "h": h, "w": w}) if n.op == "input" else n for n in self.nodes
        )
        return Graph(nodes)


def validate(g: Graph) -> None:
    seen: set[str] = set()
    inputs = [n for n in g.nodes if n.op == "input"]
    if len(inputs) != 1:
        raise GraphError(f"graph must have exactly one input node, found {len(inputs)}")
    for n in g.nodes:
        if n.op not in OP_SIGNATURES:
            raise GraphError(f"node {n.id!r}: unknown op {n.op!r}")
        if n.id in seen:
            raise GraphError(f"duplicate node id {n.id!r}")
        required, defaults, lo, hi = OP_SIGNATURES[n.op]
        for key in required:
            if key not in n.attrs:
                raise GraphError(f"node {n.id!r}: {n.op} requires attribute {key!r}")
        for key in n.attrs:
            if key not in required and key not in defaults:
                raise GraphError(f"node {n.id!r}: unexpected attribute {key!r} for {n.op}")
        if len(n.inputs) < lo or (hi is not None and len(n.inputs) > hi):
            raise GraphError(f"node {n.id!r}: {n.op} takes {lo}..{hi or 'many'} inputs, got {len(n.inputs)}")
        for src in n.inputs:
            if src not in seen:
                raise GraphError(f"node {n.id!r}: input {src!r} is undefined or defined later")
        _validate_attrs(n)
        seen.add(n.id)


def _validate_attrs(n: Node) -> None:
    def positive(*keys):
        for key in keys:
            v = n.attr(key)
            if not isinstance(v, int) or v < 1:
                raise GraphError(f"node {n.id!r}: {key} must be a positive integer, got {v!r}")

    if n.op == "input":
        positive("c", "h", "w")
    elif n.op == "conv":
        positive("c_out", "k", "stride")
        if n.attr("pad") < 0:
            raise GraphError(f"node {n.id!r}: pad must be >= 0")
    elif n.op == "maxpool":
        positive("k", "stride")
    elif n.op == "activation" and n.attrs["kind"] not in ACTIVATIONS:
        raise GraphError(f"node {n.id!r}: unknown activation kind {n.attrs['kind']!r}")
    elif n.op == "spd":
        positive("scale")
        if n.attr("mode") not in ("strict", "pad"):
            raise GraphError(f"node {n.id!r}: spd mode must be strict or pad")
    elif n.op in ("linear", "upsample"):
        positive("c_out" if n.op == "linear" else "scale")
    elif n.op == "c3":
        positive("c_out", "n")


# --------------------------------------------------------------------------
# text format
# --------------------------------------------------------------------------

_LINE = re.compile(r"^(?P<id>[A-Za-z_][\w.\-]*)\s*=\s*(?P<op>\w+)\s*\((?P<args>[^)]*)\)\s*(?:<-\s*(?P<inputs>.+))?$")
_IDENT = re.compile(r"^[A-Za-z_][\w.\-]*$")


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if not _IDENT.match(text):
        raise ValueError(text)
    return text


def parse_graph(text: str, input_shape: Optional[tuple[int, int, int]] = None) -> Graph:
    """Parse the line-oriented description into a validated :class:`Graph`.

    Nodes may be listed in any order; they are stored topologically (stable
    with respect to the text).  Errors carry the offending line number.
    """
    entries: list[tuple[int, Node]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise GraphError(f"line {lineno}: syntax error: {raw.strip()!r}")
        op = m["op"]
        if op not in OP_SIGNATURES:
            raise GraphError(f"line {lineno}: unknown op {op!r}")
        attrs: dict[str, Any] = {}
        for part in filter(None, (p.strip() for p in m["args"].split(","))):
            key, sep, value = part.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not _IDENT.match(key):
                raise GraphError(f"line {lineno}: bad argument {part!r}")
            try:
                attrs[key] = _parse_value(value)
            except ValueError:
                raise GraphError(f"line {lineno}: bad value {value!r} for {key!r}") from None
        inputs = tuple(s.strip() for s in m["inputs"].split(",")) if m["inputs"] else ()
        if any(not _IDENT.match(s) for s in inputs):
            raise GraphError(f"line {lineno}: bad input list {m['inputs']!r}")
        entries.append((lineno, Node(m["id"], op, attrs, inputs)))

    ids = [n.id for _, n in entries]
    if not any(n.op == "input" for _, n in entries):
        if "input" in ids:
            raise GraphError("node id 'input' is reserved for the implicit input node")
        if input_shape is None:
            raise GraphError("no input node declared and no input_shape given")
        c, h, w = input_shape
        entries.insert(0, (0, Node("input", "input", {"c": c, "h": h, "w": w})))
        ids.insert(0, "input")
    known = set()
    for lineno, n in entries:
        if n.id in known:
            raise GraphError(f"line {lineno}: duplicate node id {n.id!r}")
        known.add(n.id)
    for lineno, n in entries:
        for src in n.inputs:
            if src not in known:
                raise GraphError(f"line {lineno}: node {n.id!r} references undefined input {src!r}")
    ordered = [n for _, n in _toposort(entries)]
    if not any(n.op == "output" for n in ordered):
        if "output" in known:
            raise GraphError("node id 'output' is reserved for the implicit output node")
        ordered.append(Node("output", "output", {}, (ordered[-1].id,)))
    return Graph(tuple(ordered))


def _toposort(entries: list[tuple[int, Node]]) -> list[tuple[int, Node]]:
    placed: set[str] = set()
    pending = list(entries)
    ordered = []
    while pending:
        rest = []
        for item in pending:
            if all(s in placed for s in item[1].inputs):
                ordered.append(item)
                placed.add(item[1].id)
            else:
                rest.append(item)
        if len(rest) == len(pending):
            lineno, n = rest[0]
            raise GraphError(f"line {lineno}: cycle through node {n.id!r}")
        pending = rest
    return ordered


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_graph(g: Graph) -> str:
    lines = []
    for n in g.nodes:
        args = ", ".join(f"{k}={_format_value(v)}" for k, v in n.attrs.items())
        line = f"{n.id} = {n.op}({args})"
        if n.inputs:
            line += " <- " + ", ".join(n.inputs)
        lines.append(line)
    return "\n".join(lines) + "\n"


def load_graph(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


# --------------------------------------------------------------------------
# shape inference and parameter counting
# --------------------------------------------------------------------------

def _spatial(shape: Shape, node: Node, src: str) -> tuple[int, int, int]:
    if len(shape) != 3:
        raise ShapeError(f"node {node.id!r}: expects a (c, h, w) feature map from {src!r}, got {shape}")
    return shape


def infer_shapes(g: Graph, input_shape: Optional[tuple[int, int, int]] = None) -> Graph:
    """Return ``g`` with ``shapes`` filled in for every node.

    Feature maps are (c, h, w); ``linear``/``softmax`` produce (features,).
    An ``output`` node with several inputs gets a tuple of their shapes.
    """
    if input_shape is not None:
        g = g.with_input_shape(input_shape)
    shapes: dict[str, Shape] = {}
    for n in g.nodes:
        ins = [shapes[s] for s in n.inputs]
        shapes[n.id] = node_shape(n, ins)
    return replace(g, shapes=shapes)


def node_shape(n: Node, ins: list[Shape]) -> Shape:
    op = n.op
    if op == "input":
        return (n.attrs["c"], n.attrs["h"], n.attrs["w"])
    if op == "output":
        return ins[0] if len(ins) == 1 else tuple(ins)
    if op in ("batchnorm", "activation"):
        return ins[0]
    if op == "softmax":
        return ins[0]
    if op == "linear":
        return (n.attrs["c_out"],)
    c, h, w = _spatial(ins[0], n, n.inputs[0])
    if op == "conv":
        k, s, p = n.attr("k"), n.attr("stride"), n.attr("pad")
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"node {n.id!r}: kernel {k} larger than padded input {h}x{w}")
        return (n.attrs["c_out"], conv_out_size(h, k, s, p), conv_out_size(w, k, s, p))
    if op == "maxpool":
        k, s, p = n.attr("k"), n.attr("stride"), n.attr("pad")
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"node {n.id!r}: pool window {k} larger than input {h}x{w}")
        return (c, conv_out_size(h, k, s, p), conv_out_size(w, k, s, p))
    if op == "spd":
        sc = n.attrs["scale"]
        if n.attr("mode") == "strict":
            for dim, size in (("height", h), ("width", w)):
                if size % sc:
                    raise ShapeError(f"node {n.id!r}: {dim} {size} not divisible by SPD scale {sc}")
            return (c * sc * sc, h // sc, w // sc)
        return (c * sc * sc, -(-h // sc), -(-w // sc))
    if op == "global_avg_pool":
        return (c, 1, 1)
    if op == "upsample":
        sc = n.attrs["scale"]
        return (c, h * sc, w * sc)
    if op == "c3":
        return (n.attrs["c_out"], h, w)
    if op == "add":
        for src, s in zip(n.inputs[1:], ins[1:]):
            if s != ins[0]:
                raise ShapeError(f"node {n.id!r}: add branch {src!r} has shape {s}, expected {ins[0]}")
        return ins[0]
    if op == "concat":
        total = 0
        for src, s in zip(n.inputs, ins):
            sc_, sh, sw = _spatial(s, n, src)
            if (sh, sw) != (h, w):
                raise ShapeError(f"node {n.id!r}: concat input {src!r} is {sh}x{sw}, expected {h}x{w}")
            total += sc_
        return (total, h, w)
    raise GraphError(f"no shape rule for op {op!r}")


def c3_hidden(c_out: int) -> int:
    return c_out // 2


def node_params(n: Node, in_shapes: list[Shape]) -> int:
    if n.op == "conv":
        c_in = in_shapes[0][0]
        k = n.attr("k")
        return n.attrs["c_out"] * c_in * k * k + (n.attrs["c_out"] if n.attr("bias") else 0)
    if n.op == "batchnorm":
        return 2 * in_shapes[0][0]
    if n.op == "linear":
        feats = math.prod(in_shapes[0])
        return n.attrs["c_out"] * feats + (n.attrs["c_out"] if n.attr("bias") else 0)
    if n.op == "c3":
        # cv1, cv2: 1x1 c_in->h; n x (1x1 h->h, 3x3 h->h); cv3: 1x1 2h->c_out; all conv+BN
        c_in, c_out, hid = in_shapes[0][0], n.attrs["c_out"], c3_hidden(n.attrs["c_out"])
        conv_bn = lambda ci, co, k: ci * co * k * k + 2 * co  # noqa: E731
        body = n.attrs["n"] * (conv_bn(hid, hid, 1) + conv_bn(hid, hid, 3))
        return 2 * conv_bn(c_in, hid, 1) + body + conv_bn(2 * hid, c_out, 1)
    return 0


def count_params(g: Graph) -> int:
    if g.shapes is None:
        g = infer_shapes(g)
    return sum(node_params(n, [g.shapes[s] for s in n.inputs]) for n in g.nodes)


def shape_table(g: Graph) -> list[tuple[str, str, Shape, int]]:
    """Rows of (id, op, output shape, parameter count)."""
    if g.shapes is None:
        g = infer_shapes(g)
    return [(n.id, n.op, g.shapes[n.id], node_params(n, [g.shapes[s] for s in n.inputs])) for n in g.nodes]


def weighted_nodes(g: Graph) -> Iterable[Node]:
    return (n for n in g.nodes if n.op in ("conv", "linear"))
