"""Graph executor and benchmarking harness.

The same executor runs unoptimized graphs (default layouts, naive conv) and
planned graphs (blocked layouts, the blocked template, explicit
LayoutTransform nodes).  Activation buffers are released as soon as their
last consumer has run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import InputMismatch, ShapeMismatch
from .graph import Graph, OpKind, topo_sort, validate
from .kernels import (ConvSchedule, ConvWorkload, Epilogue, conv_blocked,
                      conv_reference)
from .layout import (KCRS, Layout, NCHW, Tensor, kcrsck, nchwc,
                     nhwc_to_nchw_array, pack_kcrs_array, transform_array)
from .runtime import ThreadPool


@dataclass
class ExecutablePlan:
    graph: Graph
    order: list[int]
    refcounts: dict[int, int]
    input_ids: list[int]

    @classmethod
    def compile(cls, g: Graph) -> "ExecutablePlan":
        problems = validate(g)
        if problems:
            raise InputMismatch("invalid graph: " + "; ".join(problems))
        order = topo_sort(g)
        refs = {nid: 0 for nid in g.nodes}
        for n in g.nodes.values():
            for i, _ in n.inputs:
                refs[i] += 1
        for o in g.outputs:
            refs[o] += 1
        inputs = [nid for nid in order if g.nodes[nid].kind == OpKind.Input]
        return cls(g, order, refs, inputs)


def _epilogue_from_attrs(n, values) -> tuple[Epilogue, int]:
    """Build an Epilogue from conv attrs; returns it plus the count of
    trailing non-(data, weight) inputs consumed (bias/residual)."""
    attrs = n.attrs.get("epilogue") or {}
    epi = Epilogue(
        scale=attrs.get("scale"),
        shift=attrs.get("shift"),
        bias=attrs.get("bias"),
        relu=bool(attrs.get("relu", False)),
    )
    extra = 0
    ins = [values[i] for i, _ in n.inputs]
    if attrs.get("residual"):
        epi.residual = ins[-1]
        extra += 1
    if len(n.inputs) - extra >= 3:  # explicit bias input
        b = ins[2]
        epi.bias = b if epi.bias is None else epi.bias + b
        extra += 1
    return epi, extra


def _run_conv(n, values, pool):
    data = values[n.inputs[0][0]]
    weight = values[n.inputs[1][0]]
    epi, _ = _epilogue_from_attrs(n, {i: values[i] for i, _ in n.inputs})
    stride, pad = n.attrs["stride"], n.attrs["pad"]
    if data.ndim == 5:
        nb, co, h, w, x = data.shape
        sd = n.attrs.get("schedule") or {}
        if weight.ndim == 4:
            # weights were not pre-transformed; pack them on every call
            weight = pack_kcrs_array(weight, x, sd.get("oc_bn", weight.shape[0]))
        ko, cco, r, s, wx, wy = weight.shape
        wl = ConvWorkload(co * x, ko * wy, h, w, r, s, stride, pad)
        sch = ConvSchedule(sd.get("ic_bn", x), sd.get("oc_bn", wy),
                           sd.get("reg_n", min(8, wl.out_w)),
                           bool(sd.get("unroll_ker", True)))
        out = conv_blocked(Tensor(data, nchwc(x)),
                           Tensor(weight, kcrsck(wx, wy)), wl, sch, epi, pool)
        return out.data
    nb, c, h, w = data.shape
    kk, cc, r, s = weight.shape
    wl = ConvWorkload(c, kk, h, w, r, s, stride, pad)
    out = conv_reference(Tensor(data, NCHW), Tensor(weight, KCRS), wl, epi)
    return out.data


def _channel_broadcast(vec: np.ndarray, a: np.ndarray) -> np.ndarray:
    if a.ndim == 5:
        x = a.shape[4]
        return vec.reshape(a.shape[1], x).reshape(1, a.shape[1], 1, 1, x)
    return vec.reshape(1, -1, 1, 1)


def _pool2d(a: np.ndarray, win: int, stride: int, pad: int, mode: str) -> np.ndarray:
    blocked = a.ndim == 5
    h, w = a.shape[2], a.shape[3]
    oh = (h + 2 * pad - win) // stride + 1
    ow = (w + 2 * pad - win) // stride + 1
    if pad:
        fill = -np.inf if mode == "max" else 0.0
        shape = list(a.shape)
        shape[2] += 2 * pad
        shape[3] += 2 * pad
        padded = np.full(shape, fill, dtype=np.float32)
        padded[:, :, pad:pad + h, pad:pad + w] = a
        a = padded
    out = None
    for r in range(win):
        for s in range(win):
            sl = a[:, :, r:r + oh * stride:stride, s:s + ow * stride:stride]
            if out is None:
                out = sl.astype(np.float32, copy=True)
            elif mode == "max":
                np.maximum(out, sl, out=out)
            else:
                out += sl
    if mode == "avg":
        out /= win * win
    return out


def execute(plan: ExecutablePlan | Graph, inputs: dict,
            pool: ThreadPool | None = None) -> list[np.ndarray]:
    """Run the graph; returns outputs in their stored order, default layout."""
    if isinstance(plan, Graph):
        plan = ExecutablePlan.compile(plan)
    g = plan.graph
    values: dict[int, np.ndarray] = {}
    refs = dict(plan.refcounts)

    for nid in plan.input_ids:
        n = g.nodes[nid]
        name = n.attrs.get("name", f"input{nid}")
        if name not in inputs:
            raise InputMismatch(f"missing input {name!r}")
        a = np.ascontiguousarray(inputs[name], dtype=np.float32)
        if Layout.parse(n.attrs.get("layout", "NCHW")).tag == "NHWC":
            a = nhwc_to_nchw_array(a)  # ingested once; internal layout is NCHW
        declared = tuple(n.attrs["shape"])
        if n.attrs.get("layout", "NCHW") == "NHWC":
            declared = (declared[0], declared[3], declared[1], declared[2])
        if a.shape != declared:
            raise InputMismatch(f"input {name!r}: shape {a.shape} vs {declared}")
        values[nid] = a

    outputs: dict[int, np.ndarray] = {}
    for nid in plan.order:
        n = g.nodes[nid]
        k = n.kind
        if k == OpKind.Input:
            pass
        elif k == OpKind.Constant:
            values[nid] = n.attrs["value"]
        elif k == OpKind.Conv2d:
            values[nid] = _run_conv(n, values, pool)
        elif k == OpKind.ReLU:
            values[nid] = np.maximum(values[n.inputs[0][0]], 0.0)
        elif k == OpKind.Softmax:
            a = values[n.inputs[0][0]]
            e = np.exp(a - a.max(axis=-1, keepdims=True))
            values[nid] = e / e.sum(axis=-1, keepdims=True)
        elif k == OpKind.BatchNorm:
            a = values[n.inputs[0][0]]
            if len(n.inputs) == 5:
                gmm, beta, mean, var = (values[i] for i, _ in n.inputs[1:])
                eps = float(n.attrs.get("eps", 1e-5))
                scale = gmm / np.sqrt(var + eps)
                shift = beta - mean * scale
            else:
                scale, shift = n.attrs["scale"], n.attrs["shift"]
            values[nid] = a * _channel_broadcast(scale, a) \
                + _channel_broadcast(shift, a)
        elif k in (OpKind.MaxPool, OpKind.AvgPool):
            values[nid] = _pool2d(values[n.inputs[0][0]], n.attrs["window"],
                                  n.attrs["stride"], n.attrs.get("pad", 0),
                                  "max" if k == OpKind.MaxPool else "avg")
        elif k == OpKind.ElementwiseAdd:
            a, b = values[n.inputs[0][0]], values[n.inputs[1][0]]
            if a.shape != b.shape:
                raise ShapeMismatch(f"add {nid}: {a.shape} vs {b.shape}")
            values[nid] = a + b
        elif k == OpKind.Concat:
            arrays = [values[i] for i, _ in n.inputs]
            values[nid] = np.concatenate(arrays, axis=n.attrs.get("axis", 1))
        elif k == OpKind.Flatten:
            a = values[n.inputs[0][0]]
            values[nid] = np.ascontiguousarray(a).reshape(a.shape[0], -1)
        elif k == OpKind.Dense:
            a = values[n.inputs[0][0]]
            w = values[n.inputs[1][0]]
            out = a @ w.T
            if len(n.inputs) == 3:
                out = out + values[n.inputs[2][0]]
            values[nid] = out
        elif k == OpKind.LayoutTransform:
            src = Layout.parse(n.attrs["src_layout"])
            dst = Layout.parse(n.attrs["dst_layout"])
            values[nid] = transform_array(values[n.inputs[0][0]], src, dst)
        else:
            raise InputMismatch(f"cannot execute node kind {k}")

        if nid in g.outputs:
            outputs[nid] = values[nid]
        for i, _ in n.inputs:
            refs[i] -= 1
            if refs[i] == 0 and i not in outputs:
                del values[i]  # last consumer done; buffer is dead

    return [outputs[o] for o in g.outputs]


def benchmark(plan: ExecutablePlan | Graph, pool: ThreadPool | None,
              inputs: dict, samples: int = 1000,
              warmups: int = 3) -> tuple[float, float]:
    """(mean_ns, stderr_ns) over `samples` sequential single-image runs."""
    if isinstance(plan, Graph):
        plan = ExecutablePlan.compile(plan)
    for _ in range(max(1, warmups)):
        execute(plan, inputs, pool)
    times = np.empty(samples, dtype=np.float64)
    for i in range(samples):
        t0 = time.perf_counter_ns()
        execute(plan, inputs, pool)
        times[i] = time.perf_counter_ns() - t0
    mean = float(times.mean())
    stderr = float(times.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return mean, stderr


def scalability_report(g: Graph, inputs: dict, samples: int,
                       thread_counts) -> list[str]:
    """CSV lines `threads,samples,mean_ns,stderr_ns`, one per thread count."""
    lines = []
    for t in thread_counts:
        with ThreadPool(t) as pool:
            mean, stderr = benchmark(g, pool, inputs, samples=samples)
        lines.append(f"{t},{samples},{mean:.0f},{stderr:.0f}")
    return lines
