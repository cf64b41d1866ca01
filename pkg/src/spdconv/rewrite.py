"""Replace strided convolutions and pooling with SPD + stride-1 convolution."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import networkx as nx

from .graph import Graph, GraphError, Node, node_shape, count_params, infer_shapes
from .tensor import ShapeError


class RewriteError(GraphError):
    pass


@dataclass
class RewriteReport:
    replaced_convs: list[tuple[str, int]] = field(default_factory=list)
    replaced_pools: list[str] = field(default_factory=list)
    removed_pools: list[str] = field(default_factory=list)
    param_count_before: int = 0
    param_count_after: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.replaced_convs or self.replaced_pools or self.removed_pools)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["replaced_convs"] = [{"node": n, "stride": s} for n, s in self.replaced_convs]
        d["counts"] = {
            "replaced_convs": len(self.replaced_convs),
            "replaced_pools": len(self.replaced_pools),
            "removed_pools": len(self.removed_pools),
        }
        return d


def rewrite_spd(
    g: Graph,
    pool_mode: str = "spd",
    pool_kernel: int = 3,
    spd_mode: str = "strict",
) -> tuple[Graph, RewriteReport]:
    """Return a rewritten copy of ``g`` and a report of what changed.

    Each conv with stride ``s > 1`` becomes ``spd(scale=s)`` followed by the
    same conv at stride 1 with ``k // 2`` padding.  Max pools with stride > 1
    are, by ``pool_mode``, replaced by spd + a channel-preserving conv
    (``"spd"``), dropped (``"remove"``) or left alone (``"keep"``).
    """
    if pool_mode not in ("spd", "remove", "keep"):
        raise ValueError(f"unknown pool_mode {pool_mode!r}")
    shaped = infer_shapes(g)
    shapes = shaped.shapes
    report = RewriteReport(param_count_before=count_params(shaped))

    def targets(n: Node) -> bool:
        if n.op == "conv":
            return n.attr("stride") > 1
        return n.op == "maxpool" and n.attr("stride") > 1 and pool_mode == "spd"

    if spd_mode == "strict":
        offenders = []
        for n in g.nodes:
            if targets(n):
                c, h, w = shapes[n.inputs[0]]
                s = n.attr("stride")
                if h % s or w % s:
                    offenders.append(f"{n.id} (input {h}x{w}, stride {s})")
        if offenders:
            raise RewriteError("SPD would see non-divisible input at: " + ", ".join(offenders))

    alias: dict[str, str] = {}
    taken = {n.id for n in g.nodes}
    nodes: list[Node] = []

    def fresh(base: str) -> str:
        name = base
        i = 1
        while name in taken:
            i += 1
            name = f"{base}{i}"
        taken.add(name)
        return name

    for n in g.nodes:
        inputs = tuple(alias.get(s, s) for s in n.inputs)
        if n.op == "conv" and n.attr("stride") > 1:
            s, k = n.attr("stride"), n.attr("k")
            spd_id = fresh(f"{n.id}_spd")
            nodes.append(Node(spd_id, "spd", {"scale": s, **({} if spd_mode == "strict" else {"mode": spd_mode})}, inputs))
            attrs = {**n.attrs, "stride": 1, "pad": k // 2}
            nodes.append(Node(n.id, "conv", attrs, (spd_id,)))
            report.replaced_convs.append((n.id, s))
            if _feeds_concat(g, n.id):
                report.notes.append(f"{n.id}: output feeds a concat; concat kept after the stride-1 conv")
        elif n.op == "maxpool" and n.attr("stride") > 1 and pool_mode == "remove":
            alias[n.id] = inputs[0]
            report.removed_pools.append(n.id)
        elif n.op == "maxpool" and n.attr("stride") > 1 and pool_mode == "spd":
            s = n.attr("stride")
            spd_id = fresh(f"{n.id}_spd")
            nodes.append(Node(spd_id, "spd", {"scale": s}, inputs))
            c_in = shapes[n.inputs[0]][0]
            nodes.append(
                Node(n.id, "conv", {"c_out": c_in, "k": pool_kernel, "stride": 1, "pad": pool_kernel // 2, "bias": 0}, (spd_id,))
            )
            report.replaced_pools.append(n.id)
        else:
            nodes.append(Node(n.id, n.op, dict(n.attrs), inputs))

    if report.empty:
        return g, report
    out = Graph(tuple(nodes))
    try:
        out_shaped = infer_shapes(out)
    except ShapeError as exc:
        raise RewriteError(f"rewritten graph fails shape inference: {exc}") from exc
    # replacements must reproduce the original output shape from the original input shape
    new_nodes = {n.id: n for n in nodes}
    for node_id in [c for c, _ in report.replaced_convs] + report.replaced_pools:
        conv = new_nodes[node_id]
        spd = new_nodes[conv.inputs[0]]
        src_shape = shapes[g.node(node_id).inputs[0]]
        local = node_shape(conv, [node_shape(spd, [src_shape])])
        if local != shapes[node_id]:
            raise RewriteError(f"{node_id}: replacement yields {local}, original {shapes[node_id]}")
    report.param_count_after = count_params(out_shaped)
    return out, report


def _feeds_concat(g: Graph, node_id: str) -> bool:
    # look through the conv's own norm/activation chain
    frontier = [node_id]
    while frontier:
        for c in g.consumers(frontier.pop()):
            if c.op == "concat":
                return True
            if c.op in ("batchnorm", "activation"):
                frontier.append(c.id)
    return False


def spd_followers_ok(g: Graph) -> list[str]:
    """SPD nodes not immediately followed (only) by a stride-1 conv."""
    bad = []
    for n in g.nodes:
        if n.op != "spd":
            continue
        cons = g.consumers(n.id)
        if not cons or any(c.op != "conv" or c.attr("stride") != 1 for c in cons):
            bad.append(n.id)
    return bad


def _canon(v):
    return float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v


def to_networkx(g: Graph) -> nx.DiGraph:
    d = nx.DiGraph()
    for n in g.nodes:
        attrs = {"op": n.op}
        for k in OP_KEYS.get(n.op, ()):
            attrs[k] = _canon(n.attr(k))
        d.add_node(n.id, key=tuple(sorted(attrs.items())))
        for slot, src in enumerate(n.inputs):
            # add is commutative; every other op cares about input order
            d.add_edge(src, n.id, slot=0 if n.op == "add" else slot)
    return d


OP_KEYS = {
    "input": ("c", "h", "w"),
    "conv": ("c_out", "k", "stride", "pad", "bias"),
    "maxpool": ("k", "stride", "pad"),
    "activation": ("kind",),
    "spd": ("scale", "mode"),
    "linear": ("c_out", "bias"),
    "upsample": ("scale",),
    "c3": ("c_out", "n", "shortcut"),
}


def isomorphic(a: Graph, b: Graph) -> bool:
    """Structural equality on ops, attributes and wiring, ignoring node names."""
    if len(a.nodes) != len(b.nodes):
        return False
    return nx.is_isomorphic(
        to_networkx(a),
        to_networkx(b),
        node_match=lambda x, y: x["key"] == y["key"],
        edge_match=lambda x, y: x["slot"] == y["slot"],
    )
