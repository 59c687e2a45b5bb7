"""Computation-graph IR: nodes, validation, shape inference, traversal.

A model is a DAG of single-output operations.  Edges are (node id, slot)
pairs; v1 operations all produce one output, so slot is always 0, but the
representation keeps the slot for fan-in bookkeeping.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CycleDetected, ShapeMismatch
from .layout import KCRS, Layout, NCHW, nchwc


class DataType(Enum):
    F32 = "f32"


class OpKind(Enum):
    Conv2d = "Conv2d"
    BatchNorm = "BatchNorm"
    ReLU = "ReLU"
    MaxPool = "MaxPool"
    AvgPool = "AvgPool"
    ElementwiseAdd = "ElementwiseAdd"
    Concat = "Concat"
    Flatten = "Flatten"
    Dense = "Dense"
    Softmax = "Softmax"
    LayoutTransform = "LayoutTransform"
    Input = "Input"
    Constant = "Constant"


# (min_arity, max_arity); None = unbounded
ARITY = {
    OpKind.Conv2d: (2, 4),        # data, weight [, bias][, residual]
    OpKind.BatchNorm: (1, 5),     # data [, gamma, beta, mean, var]
    OpKind.ReLU: (1, 1),
    OpKind.MaxPool: (1, 1),
    OpKind.AvgPool: (1, 1),
    OpKind.ElementwiseAdd: (2, 2),
    OpKind.Concat: (2, None),
    OpKind.Flatten: (1, 1),
    OpKind.Dense: (2, 3),
    OpKind.Softmax: (1, 1),
    OpKind.LayoutTransform: (1, 1),
    OpKind.Input: (0, 0),
    OpKind.Constant: (0, 0),
}


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple
    dtype: DataType = DataType.F32
    layout: Layout = NCHW

    def __post_init__(self):
        if len(self.shape) != self.layout.rank:
            raise ShapeMismatch(f"shape {self.shape} vs layout {self.layout}")
        if any(d < 1 for d in self.shape):
            raise ShapeMismatch(f"non-positive dim in {self.shape}")


@dataclass
class Node:
    id: int
    kind: OpKind
    attrs: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)  # [(node id, slot), ...]

    def input_ids(self):
        return [i for i, _ in self.inputs]


class Graph:
    def __init__(self, name: str = "graph"):
        self.name = name
        self.nodes: dict[int, Node] = {}
        self.outputs: list[int] = []
        self._next_id = 0

    def add(self, kind: OpKind, inputs=(), **attrs) -> int:
        nid = self._next_id
        self._next_id += 1
        edges = [(i, 0) if isinstance(i, int) else tuple(i) for i in inputs]
        self.nodes[nid] = Node(nid, kind, dict(attrs), edges)
        return nid

    def add_node(self, node: Node) -> int:
        self.nodes[node.id] = node
        self._next_id = max(self._next_id, node.id + 1)
        return node.id

    def input_node(self, shape, layout: str = "NCHW") -> int:
        return self.add(OpKind.Input, shape=tuple(shape), layout=layout)

    def constant(self, value: np.ndarray, layout: str = None) -> int:
        return self.add(OpKind.Constant, value=np.asarray(value, dtype=np.float32),
                        layout=layout)

    def consumers(self) -> dict[int, list[int]]:
        out = {nid: [] for nid in self.nodes}
        for n in self.nodes.values():
            for i, _ in n.inputs:
                if i in out:
                    out[i].append(n.id)
        return out

    def fanout(self, nid: int) -> int:
        cnt = sum(1 for n in self.nodes.values() for i, _ in n.inputs if i == nid)
        return cnt + self.outputs.count(nid)

    def copy(self) -> "Graph":
        g = Graph(self.name)
        for nid, n in sorted(self.nodes.items()):
            g.add_node(Node(n.id, n.kind, dict(n.attrs), list(n.inputs)))
        g.outputs = list(self.outputs)
        g._next_id = self._next_id
        return g


def topo_sort(graph: Graph) -> list[int]:
    """Topological order; ties broken by ascending node id."""
    indeg = {nid: 0 for nid in graph.nodes}
    succs = {nid: [] for nid in graph.nodes}
    for n in graph.nodes.values():
        seen = set()
        for i, _ in n.inputs:
            if i in indeg and (i, n.id) not in seen:
                seen.add((i, n.id))
                indeg[n.id] += 1
                succs[i].append(n.id)
    ready = [nid for nid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for s in succs[nid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    if len(order) != len(graph.nodes):
        raise CycleDetected("graph contains a cycle")
    return order


def validate(graph: Graph) -> list[str]:
    """Collect invariant violations; empty list means the graph is well formed."""
    problems = []
    if not graph.outputs:
        problems.append("graph has no outputs")
    for out in graph.outputs:
        if out not in graph.nodes:
            problems.append(f"output references missing node {out}")
    for n in graph.nodes.values():
        lo, hi = ARITY[n.kind]
        if len(n.inputs) < lo or (hi is not None and len(n.inputs) > hi):
            problems.append(
                f"node {n.id} ({n.kind.value}): arity {len(n.inputs)} outside [{lo}, {hi}]")
        for i, _ in n.inputs:
            if i not in graph.nodes:
                problems.append(f"node {n.id} references missing node {i}")
            elif i == n.id:
                problems.append(f"node {n.id} is a self-loop")
    try:
        topo_sort(graph)
    except CycleDetected:
        problems.append("graph contains a cycle")
        return problems
    # reachability from Inputs/Constants
    reachable = set(n.id for n in graph.nodes.values()
                    if n.kind in (OpKind.Input, OpKind.Constant))
    for nid in topo_sort(graph):
        n = graph.nodes[nid]
        if n.inputs and all(i in reachable for i, _ in n.inputs if i in graph.nodes):
            reachable.add(nid)
    for n in graph.nodes.values():
        if n.kind not in (OpKind.Input, OpKind.Constant) and n.id not in reachable:
            problems.append(f"node {n.id} is not reachable from any Input")
    return problems


def conv_out_dim(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def infer_shapes(graph: Graph) -> dict[int, TensorSpec]:
    """Output TensorSpec per node.  Handles both default and blocked layouts."""
    specs: dict[int, TensorSpec] = {}
    for nid in topo_sort(graph):
        n = graph.nodes[nid]
        ins = [specs[i] for i, _ in n.inputs]
        specs[nid] = _infer_node(n, ins)
    return specs


def _infer_node(n: Node, ins: list[TensorSpec]) -> TensorSpec:
    k = n.kind
    if k == OpKind.Input:
        layout = Layout.parse(n.attrs.get("layout", "NCHW"))
        return TensorSpec(tuple(n.attrs["shape"]), layout=layout)
    if k == OpKind.Constant:
        v = n.attrs["value"]
        layout_str = n.attrs.get("layout")
        if layout_str:
            layout = Layout.parse(layout_str)
        elif v.ndim == 1:
            layout = Layout("VEC")
        elif v.ndim == 2:
            layout = Layout("MAT")
        elif v.ndim == 4:
            layout = KCRS
        elif v.ndim == 6:
            layout = Layout("KCRSck", x=v.shape[4], y=v.shape[5])
        else:
            raise ShapeMismatch(f"constant {n.id}: rank {v.ndim} needs a layout tag",
                                node_id=n.id)
        return TensorSpec(tuple(v.shape), layout=layout)
    if k == OpKind.Conv2d:
        data, weight = ins[0], ins[1]
        stride, pad = n.attrs["stride"], n.attrs["pad"]
        if data.layout.tag == "NCHW":
            nb, c, h, w = data.shape
            kk, cc, r, s = weight.shape
            if cc != c:
                raise ShapeMismatch(
                    f"conv {n.id}: weight C={cc} vs data C={c}", node_id=n.id)
            oh = conv_out_dim(h, r, stride, pad)
            ow = conv_out_dim(w, s, stride, pad)
            return TensorSpec((nb, kk, oh, ow))
        if data.layout.tag == "NCHWc":
            nb, co, h, w, x = data.shape
            ko, cco, r, s, wx, wy = weight.shape
            if cco * wx != co * x:
                raise ShapeMismatch(
                    f"conv {n.id}: weight C={cco * wx} vs data C={co * x}", node_id=n.id)
            oh = conv_out_dim(h, r, stride, pad)
            ow = conv_out_dim(w, s, stride, pad)
            return TensorSpec((nb, ko, oh, ow, wy), layout=nchwc(wy))
        raise ShapeMismatch(f"conv {n.id}: bad input layout {data.layout}", node_id=n.id)
    if k in (OpKind.MaxPool, OpKind.AvgPool):
        data = ins[0]
        win, stride = n.attrs["window"], n.attrs["stride"]
        pad = n.attrs.get("pad", 0)
        sh = list(data.shape)
        if data.layout.tag in ("NCHW", "NCHWc"):
            sh[2] = conv_out_dim(sh[2], win, stride, pad)
            sh[3] = conv_out_dim(sh[3], win, stride, pad)
            return TensorSpec(tuple(sh), layout=data.layout)
        raise ShapeMismatch(f"pool {n.id}: bad layout {data.layout}", node_id=n.id)
    if k in (OpKind.ReLU, OpKind.Softmax):
        return ins[0]
    if k == OpKind.BatchNorm:
        return ins[0]
    if k == OpKind.ElementwiseAdd:
        if ins[0].shape != ins[1].shape:
            raise ShapeMismatch(
                f"add {n.id}: {ins[0].shape} vs {ins[1].shape}", node_id=n.id)
        return ins[0]
    if k == OpKind.Concat:
        axis = n.attrs.get("axis", 1)
        base = list(ins[0].shape)
        for other in ins[1:]:
            if other.layout != ins[0].layout:
                raise ShapeMismatch(f"concat {n.id}: mixed layouts", node_id=n.id)
            osh = list(other.shape)
            if len(osh) != len(base):
                raise ShapeMismatch(f"concat {n.id}: mixed ranks", node_id=n.id)
            for d in range(len(base)):
                if d != axis and osh[d] != base[d]:
                    raise ShapeMismatch(
                        f"concat {n.id}: dim {d} mismatch", node_id=n.id)
            base[axis] += osh[axis]
        return TensorSpec(tuple(base), layout=ins[0].layout)
    if k == OpKind.Flatten:
        data = ins[0]
        if data.layout.tag != "NCHW":
            raise ShapeMismatch(
                f"flatten {n.id}: needs default layout, got {data.layout}", node_id=n.id)
        nb = data.shape[0]
        rest = int(np.prod(data.shape[1:]))
        return TensorSpec((nb, rest), layout=Layout("MAT"))
    if k == OpKind.Dense:
        data, weight = ins[0], ins[1]
        if len(data.shape) != 2:
            raise ShapeMismatch(f"dense {n.id}: needs 2-D input", node_id=n.id)
        units, in_features = weight.shape
        if in_features != data.shape[1]:
            raise ShapeMismatch(
                f"dense {n.id}: weight in={in_features} vs data {data.shape[1]}",
                node_id=n.id)
        return TensorSpec((data.shape[0], units), layout=Layout("MAT"))
    if k == OpKind.LayoutTransform:
        dst = Layout.parse(n.attrs["dst_layout"])
        data = ins[0]
        nb = data.shape[0]
        if data.layout.tag in ("NCHW", "NHWC", "NCHWc"):
            if data.layout.tag == "NHWC":
                _, h, w, c = data.shape
            elif data.layout.tag == "NCHW":
                _, c, h, w = data.shape
            else:
                _, co, h, w, x = data.shape
                c = co * x
            if dst.tag == "NCHW":
                return TensorSpec((nb, c, h, w))
            if dst.tag == "NCHWc":
                if c % dst.x:
                    raise ShapeMismatch(
                        f"transform {n.id}: C={c} not divisible by {dst.x}", node_id=n.id)
                return TensorSpec((nb, c // dst.x, h, w, dst.x), layout=dst)
        raise ShapeMismatch(f"transform {n.id}: {data.layout} -> {dst}", node_id=n.id)
    raise ShapeMismatch(f"cannot infer node {n.id} kind {k}", node_id=n.id)
