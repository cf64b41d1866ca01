"""Execute a :class:`Graph` as a trainable network."""
from __future__ import annotations

from collections import OrderedDict
from typing import Mapping, Optional

import numpy as np

from . import tensor as T
from .graph import Graph, infer_shapes
from .spd import space_to_depth


class WeightMismatch(ValueError):
    pass


class Network:
    """Parameters and batch-norm state for a graph.

    Tensor names are ``<node>.weight``, ``<node>.bias`` for conv/linear and
    ``<node>.gamma``, ``<node>.beta``, ``<node>.running_mean``,
    ``<node>.running_var`` for batch norm.
    """

    def __init__(self, graph: Graph, seed: int = 0, dtype=np.float32):
        self.graph = graph if graph.shapes is not None else infer_shapes(graph)
        self.dtype = np.dtype(dtype)
        for n in self.graph.nodes:
            if n.op in ("c3",):
                raise NotImplementedError(f"op {n.op!r} is shape-only and cannot be executed")
        self._output_id = next(n.id for n in self.graph.nodes if n.op == "output")
        self.params: OrderedDict[str, T.Tensor] = OrderedDict()
        self.bn: dict[str, T.BatchNormState] = {}
        self.reset(seed)

    # -- weights -----------------------------------------------------------

    def reset(self, seed: int) -> None:
        """Kaiming-uniform (fan-in) conv/linear weights, zero biases, BN gamma=1, beta=0."""
        rng = np.random.default_rng(seed)
        shapes = self.graph.shapes
        self.params.clear()
        self.bn.clear()
        for n in self.graph.nodes:
            in_shape = shapes[n.inputs[0]] if n.inputs else None
            if n.op == "conv":
                k = n.attr("k")
                wshape = (n.attrs["c_out"], in_shape[0], k, k)
                self._kaiming(f"{n.id}.weight", wshape, rng)
                if n.attr("bias"):
                    self.params[f"{n.id}.bias"] = self._zeros(n.attrs["c_out"])
            elif n.op == "linear":
                wshape = (n.attrs["c_out"], int(np.prod(in_shape)))
                self._kaiming(f"{n.id}.weight", wshape, rng)
                if n.attr("bias"):
                    self.params[f"{n.id}.bias"] = self._zeros(n.attrs["c_out"])
            elif n.op == "batchnorm":
                st = T.BatchNormState.create(in_shape[0], dtype=self.dtype, eps=float(n.attr("eps")))
                self.bn[n.id] = st
                self.params[f"{n.id}.gamma"] = st.gamma
                self.params[f"{n.id}.beta"] = st.beta

    def _kaiming(self, name, shape, rng):
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        self.params[name] = T.Tensor(rng.uniform(-bound, bound, shape).astype(self.dtype), requires_grad=True)

    def _zeros(self, n):
        return T.Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return list(self.params.items())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, t in self.params.items():
            out[name] = t.data.copy()
        for node_id, st in self.bn.items():
            out[f"{node_id}.running_mean"] = st.running_mean.copy()
            out[f"{node_id}.running_var"] = st.running_var.copy()
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = [k for k in expected if k not in state]
        extra = [k for k in state if k not in expected]
        if missing or extra:
            raise WeightMismatch(f"tensor names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, ref in expected.items():
            if tuple(state[name].shape) != ref.shape:
                raise WeightMismatch(f"tensor {name!r}: shape {tuple(state[name].shape)} != expected {ref.shape}")
        for name, t in self.params.items():
            t.data[...] = state[name]
        for node_id, st in self.bn.items():
            st.running_mean[...] = state[f"{node_id}.running_mean"]
            st.running_var[...] = state[f"{node_id}.running_var"]

    # -- forward -----------------------------------------------------------

    def forward(self, x, training: bool = False, logits: bool = True) -> T.Tensor:
        """Run the graph on a batch; stops before a trailing softmax when ``logits``."""
        if not isinstance(x, T.Tensor):
            x = T.Tensor(np.asarray(x, dtype=self.dtype))
        expect = self.graph.input_shape
        if tuple(x.shape[1:]) != expect:
            raise T.ShapeError(f"input batch has sample shape {tuple(x.shape[1:])}, graph expects {expect}")
        vals: dict[str, object] = {}
        p = self.params
        for n in self.graph.nodes:
            ins = [vals[s] for s in n.inputs]
            op = n.op
            if op == "input":
                v = x
            elif op == "conv":
                v = T.conv2d(ins[0], T.ConvParams(p[f"{n.id}.weight"], p.get(f"{n.id}.bias"), n.attr("stride"), n.attr("pad")))
            elif op == "batchnorm":
                v = T.batch_norm(ins[0], self.bn[n.id], training)
            elif op == "activation":
                v = T.activation(ins[0], n.attrs["kind"])
            elif op == "maxpool":
                v = T.max_pool2d(ins[0], n.attr("k"), n.attr("stride"), n.attr("pad"))
            elif op == "add":
                v = ins[0]
                for other in ins[1:]:
                    v = T.add(v, other)
            elif op == "concat":
                v = T.concat(ins, axis=1)
            elif op == "spd":
                v = space_to_depth(ins[0], n.attrs["scale"], n.attr("mode"))
            elif op == "global_avg_pool":
                v = T.global_avg_pool(ins[0])
            elif op == "linear":
                v = T.linear(ins[0], p[f"{n.id}.weight"], p.get(f"{n.id}.bias"))
            elif op == "softmax":
                v = ins[0] if logits else T.softmax(ins[0])
            elif op == "upsample":
                v = T.upsample_nearest(ins[0], n.attrs["scale"])
            elif op == "output":
                v = ins[0] if len(ins) == 1 else tuple(ins)
            else:
                raise NotImplementedError(op)
            vals[n.id] = v
        return vals[self._output_id]

    __call__ = forward

    @property
    def num_classes(self) -> Optional[int]:
        out = self.graph.shapes[self._output_id]
        return out[0] if len(out) == 1 else None
