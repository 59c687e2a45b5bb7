"""Graph rewrites: batchnorm folding, elementwise fusion, layout alteration
with minimal LayoutTransform insertion, and compile-time weight packing.

Pass order matters: fold_batchnorm -> fuse_elementwise ->
alter_and_insert_transforms -> pretransform_weights.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .errors import AssignmentIncomplete, NonConstantStatistics
from .graph import Graph, Node, OpKind, infer_shapes, topo_sort
from .kernels import ConvSchedule, vector_lane_width
from .layout import Layout, NCHW, nchwc


class LayoutBehavior(Enum):
    Oblivious = "oblivious"
    Tolerant = "tolerant"
    Dependent = "dependent"


_BEHAVIOR = {
    OpKind.ReLU: LayoutBehavior.Oblivious,
    OpKind.Softmax: LayoutBehavior.Oblivious,
    OpKind.ElementwiseAdd: LayoutBehavior.Oblivious,
    OpKind.Concat: LayoutBehavior.Oblivious,
    OpKind.Conv2d: LayoutBehavior.Tolerant,
    OpKind.BatchNorm: LayoutBehavior.Tolerant,
    OpKind.MaxPool: LayoutBehavior.Tolerant,
    OpKind.AvgPool: LayoutBehavior.Tolerant,
    OpKind.Flatten: LayoutBehavior.Dependent,
    OpKind.Dense: LayoutBehavior.Dependent,
    OpKind.LayoutTransform: LayoutBehavior.Dependent,
    OpKind.Input: LayoutBehavior.Oblivious,
    OpKind.Constant: LayoutBehavior.Oblivious,
}


def classify(kind: OpKind) -> LayoutBehavior:
    return _BEHAVIOR[kind]


def empty_epilogue() -> dict:
    return {"scale": None, "shift": None, "bias": None, "relu": False,
            "residual": False}


def _epilogue(node: Node) -> dict:
    if "epilogue" not in node.attrs:
        node.attrs["epilogue"] = empty_epilogue()
    return node.attrs["epilogue"]


def _redirect(g: Graph, old: int, new: int) -> None:
    for n in g.nodes.values():
        n.inputs = [(new, s) if i == old else (i, s) for i, s in n.inputs]
    g.outputs = [new if o == old else o for o in g.outputs]


def _gc(g: Graph) -> None:
    live = set()
    stack = list(g.outputs)
    while stack:
        nid = stack.pop()
        if nid in live:
            continue
        live.add(nid)
        stack.extend(i for i, _ in g.nodes[nid].inputs)
    for nid in [n for n in g.nodes if n not in live]:
        del g.nodes[nid]


def fold_batchnorm(g: Graph) -> Graph:
    """Fold BN statistics into the preceding conv, or canonicalize a
    standalone BN into a per-channel scale/shift node."""
    g = g.copy()
    for nid in topo_sort(g):
        n = g.nodes.get(nid)
        if n is None or n.kind != OpKind.BatchNorm or len(n.inputs) != 5:
            continue
        stat_ids = [i for i, _ in n.inputs[1:]]
        stats = []
        for sid in stat_ids:
            sn = g.nodes[sid]
            if sn.kind != OpKind.Constant:
                raise NonConstantStatistics(f"BN {nid} input {sid} is not constant")
            stats.append(sn.attrs["value"].astype(np.float64))
        gamma, beta, mean, var = stats
        eps = float(n.attrs.get("eps", 1e-5))
        scale = gamma / np.sqrt(var + eps)
        shift = beta - mean * scale
        src = n.inputs[0][0]
        producer = g.nodes[src]
        if producer.kind == OpKind.Conv2d and g.fanout(src) == 1 \
                and not _epilogue(producer)["residual"]:
            wnode = g.nodes[producer.inputs[1][0]]
            w = wnode.attrs["value"]
            wnode.attrs["value"] = (w * scale.reshape(-1, 1, 1, 1)).astype(np.float32)
            epi = _epilogue(producer)
            old_bias = epi["bias"]
            if old_bias is not None:
                shift = shift + old_bias.astype(np.float64) * scale
            epi["bias"] = shift.astype(np.float32)
            _redirect(g, nid, src)
            del g.nodes[nid]
        else:
            n.inputs = n.inputs[:1]
            n.attrs = {"scale": scale.astype(np.float32),
                       "shift": shift.astype(np.float32)}
    _gc(g)
    return g


def fuse_elementwise(g: Graph) -> Graph:
    """Collapse conv->relu and conv->add(residual)[->relu] chains into conv
    epilogues.  Fusion never crosses a node with fan-out > 1."""
    g = g.copy()
    changed = True
    while changed:
        changed = False
        for nid in topo_sort(g):
            n = g.nodes.get(nid)
            if n is None:
                continue
            if n.kind == OpKind.ReLU:
                src = n.inputs[0][0]
                p = g.nodes[src]
                if p.kind == OpKind.Conv2d and g.fanout(src) == 1 \
                        and not _epilogue(p)["relu"]:
                    _epilogue(p)["relu"] = True
                    _redirect(g, nid, src)
                    del g.nodes[nid]
                    changed = True
                    break
            elif n.kind == OpKind.ElementwiseAdd:
                for slot in (0, 1):
                    src = n.inputs[slot][0]
                    p = g.nodes[src]
                    if p.kind == OpKind.Conv2d and g.fanout(src) == 1 \
                            and not _epilogue(p)["relu"] \
                            and not _epilogue(p)["residual"]:
                        other = n.inputs[1 - slot]
                        _epilogue(p)["residual"] = True
                        p.inputs.append(other)
                        _redirect(g, nid, src)
                        del g.nodes[nid]
                        changed = True
                        break
                if changed:
                    break
    _gc(g)
    return g


def _conv_data_channels(spec) -> int:
    sh = spec.shape
    if spec.layout.tag == "NCHWc":
        return sh[1] * sh[4]
    return sh[1]


def alter_and_insert_transforms(g: Graph, assign: dict) -> Graph:
    """Give each conv its assigned blocked layouts and insert the minimal set
    of LayoutTransform nodes.

    assign maps conv node id -> ConvSchedule or (ic_bn, oc_bn).
    """
    specs = infer_shapes(g)
    g = g.copy()
    out_layout: dict[int, Layout] = {}
    transform_cache: dict[tuple, int] = {}

    def schedule_of(nid):
        v = assign.get(nid)
        if v is None:
            raise AssignmentIncomplete(f"conv {nid} missing from assignment")
        if isinstance(v, ConvSchedule):
            return v
        ic, oc = v
        out_w = specs[nid].shape[3]
        return ConvSchedule(ic, oc, default_reg_n(out_w), True)

    def coerce(src_id: int, dst: Layout) -> int:
        src_layout = out_layout[src_id]
        if src_layout == dst or src_layout is None:
            return src_id
        key = (src_id, dst)
        if key in transform_cache:
            return transform_cache[key]
        t = g.add(OpKind.LayoutTransform, inputs=[src_id],
                  src_layout=str(src_layout), dst_layout=str(dst))
        out_layout[t] = dst
        transform_cache[key] = t
        return t

    for nid in topo_sort(g):
        n = g.nodes[nid]
        k = n.kind
        if k == OpKind.Input:
            layout = Layout.parse(n.attrs.get("layout", "NCHW"))
            # NHWC is converted once at ingestion; internal reasoning is NCHW
            out_layout[nid] = NCHW if layout.tag == "NHWC" else layout
        elif k == OpKind.Constant:
            out_layout[nid] = None
        elif k == OpKind.Conv2d:
            sch = schedule_of(nid)
            data_id = coerce(n.inputs[0][0], nchwc(sch.ic_bn))
            n.inputs[0] = (data_id, 0)
            if n.attrs.get("epilogue", {}).get("residual"):
                res_id = coerce(n.inputs[-1][0], nchwc(sch.oc_bn))
                n.inputs[-1] = (res_id, 0)
            n.attrs["schedule"] = sch.as_dict()
            out_layout[nid] = nchwc(sch.oc_bn)
        elif k in (OpKind.ElementwiseAdd, OpKind.Concat):
            first_src = n.inputs[0][0]
            target = out_layout[first_src]
            if k == OpKind.Concat and n.attrs.get("axis", 1) == 1 \
                    and target is not None and target.tag == "NCHWc":
                chans = [_conv_data_channels(specs[i]) if i in specs else None
                         for i, _ in n.inputs]
                if any(c is None or c % target.x for c in chans):
                    target = NCHW  # indivisible channel concat falls back to default
            if target is None:
                target = NCHW
            n.inputs = [(coerce(i, target), s) for i, s in n.inputs]
            out_layout[nid] = target
        elif classify(k) == LayoutBehavior.Dependent:
            # Flatten/Dense and friends require the default layout
            new_inputs = []
            for i, s in n.inputs:
                if out_layout.get(i) is not None and out_layout[i].tag == "NCHWc":
                    new_inputs.append((coerce(i, NCHW), s))
                else:
                    new_inputs.append((i, s))
            n.inputs = new_inputs
            out_layout[nid] = None
        else:
            # Oblivious / Tolerant: the blocked layout flows through unchanged
            src = n.inputs[0][0]
            out_layout[nid] = out_layout[src]

    # graph boundary stays in the default layout
    new_outputs = []
    for o in g.outputs:
        if out_layout.get(o) is not None and out_layout[o].tag == "NCHWc":
            new_outputs.append(coerce(o, NCHW))
        else:
            new_outputs.append(o)
    g.outputs = new_outputs
    return g


def pretransform_weights(g: Graph, assign: dict | None = None) -> Graph:
    """Pack every conv weight constant to KCRS[x]c[y]k at compile time."""
    from .layout import pack_kcrs_array

    g = g.copy()
    for nid in topo_sort(g):
        n = g.nodes[nid]
        if n.kind != OpKind.Conv2d:
            continue
        sch = n.attrs.get("schedule")
        if sch is None:
            if assign is None or nid not in assign:
                raise AssignmentIncomplete(f"conv {nid} has no layout assignment")
            v = assign[nid]
            ic, oc = (v.ic_bn, v.oc_bn) if isinstance(v, ConvSchedule) else v
        else:
            ic, oc = sch["ic_bn"], sch["oc_bn"]
        wid = n.inputs[1][0]
        wnode = g.nodes[wid]
        w = wnode.attrs["value"]
        if w.ndim == 6:
            continue  # already packed
        if g.fanout(wid) > 1:
            wid = g.constant(w, layout=None)
            n.inputs[1] = (wid, 0)
            wnode = g.nodes[wid]
        wnode.attrs["value"] = pack_kcrs_array(w, ic, oc)
        wnode.attrs["layout"] = f"KCRS{ic}c{oc}k"
    return g


def count_transforms(g: Graph) -> int:
    return sum(1 for n in g.nodes.values() if n.kind == OpKind.LayoutTransform)


def default_reg_n(out_w: int) -> int:
    for r in (32, 16, 8, 4, 2):
        if r <= out_w:
            return r
    return 1


def uniform_split_factor(g: Graph) -> int:
    """Fallback x when no planner ran: the largest divisor of every internal
    conv channel count, capped at the vector lane width."""
    specs = infer_shapes(g)
    gcd = 0
    for nid in topo_sort(g):
        n = g.nodes[nid]
        if n.kind != OpKind.Conv2d:
            continue
        w = g.nodes[n.inputs[1][0]].attrs["value"]
        k, c = w.shape[0], w.shape[1]
        gcd = math.gcd(gcd, k)
        src = g.nodes[n.inputs[0][0]]
        if src.kind != OpKind.Input:
            gcd = math.gcd(gcd, c)
    if gcd == 0:
        return 1
    lane = vector_lane_width()
    x = 1
    for d in range(1, gcd + 1):
        if gcd % d == 0 and d <= lane:
            x = d
    return x


def uniform_assignment(g: Graph, x: int | None = None) -> dict:
    """Per-conv (ic_bn, oc_bn) using one shared split factor where divisible."""
    if x is None:
        x = uniform_split_factor(g)
    assign = {}
    for nid in topo_sort(g):
        n = g.nodes[nid]
        if n.kind != OpKind.Conv2d:
            continue
        w = g.nodes[n.inputs[1][0]].attrs["value"]
        k, c = w.shape[0], w.shape[1]
        assign[nid] = (math.gcd(c, x), math.gcd(k, x))
    return assign


def per_conv_packing(g: Graph, assign: dict) -> Graph:
    """Blocked kernels but with pack/unpack wrapped around every conv: the
    un-eliminated configuration used as an ablation reference."""
    specs = infer_shapes(g)
    g = g.copy()
    for nid in list(topo_sort(g)):
        n = g.nodes[nid]
        if n.kind != OpKind.Conv2d:
            continue
        v = assign.get(nid)
        if v is None:
            raise AssignmentIncomplete(f"conv {nid} missing from assignment")
        if isinstance(v, ConvSchedule):
            sch = v
        else:
            sch = ConvSchedule(v[0], v[1], default_reg_n(specs[nid].shape[3]), True)
        pack = g.add(OpKind.LayoutTransform, inputs=[n.inputs[0][0]],
                     src_layout="NCHW", dst_layout=f"NCHW{sch.ic_bn}c")
        n.inputs[0] = (pack, 0)
        if n.attrs.get("epilogue", {}).get("residual"):
            rpack = g.add(OpKind.LayoutTransform, inputs=[n.inputs[-1][0]],
                          src_layout="NCHW", dst_layout=f"NCHW{sch.oc_bn}c")
            n.inputs[-1] = (rpack, 0)
        n.attrs["schedule"] = sch.as_dict()
        unpack = g.add(OpKind.LayoutTransform, inputs=[nid],
                       src_layout=f"NCHW{sch.oc_bn}c", dst_layout="NCHW")
        for m in g.nodes.values():
            if m.id not in (nid, unpack):
                m.inputs = [(unpack, s) if i == nid else (i, s) for i, s in m.inputs]
        g.outputs = [unpack if o == nid else o for o in g.outputs]
    return g


def simplify(g: Graph) -> Graph:
    """The fixed pre-layout pipeline: BN folding then elementwise fusion."""
    return fuse_elementwise(fold_batchnorm(g))
