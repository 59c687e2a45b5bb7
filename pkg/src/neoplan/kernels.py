"""Direct-convolution compute: naive reference and the blocked template.

The blocked template works on NCHW[x]c feature maps and KCRS[x]c[y]k
weights.  Its loop structure: parallel chunks over (out-channel block,
out-row), an outer loop over out-width tiles of reg_n columns, vector
accumulators living across the whole reduction, the input-channel blocks
outside the kernel window loops, and a y-wide weight load feeding reg_n
multiply-accumulate updates.  A short tail tile covers out_width mod reg_n.
"""

from __future__ import annotations

import os
import platform
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .errors import ScheduleInvalid, ShapeMismatch
from .layout import Tensor, aligned_empty, kcrsck, nchwc
from .runtime import ThreadPool, parallel_for


@dataclass(frozen=True)
class ConvWorkload:
    in_channel: int
    out_channel: int
    in_h: int
    in_w: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.pad - self.kernel_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.pad - self.kernel_w) // self.stride + 1

    def __post_init__(self):
        if self.out_h < 1 or self.out_w < 1:
            raise ShapeMismatch(f"workload {self} has empty output")


@dataclass(frozen=True)
class ConvSchedule:
    ic_bn: int
    oc_bn: int
    reg_n: int
    unroll_ker: bool = False

    def check(self, wl: ConvWorkload) -> None:
        if self.ic_bn < 1 or self.oc_bn < 1 or self.reg_n < 1:
            raise ScheduleInvalid(f"non-positive factor in {self}")
        if wl.in_channel % self.ic_bn:
            raise ScheduleInvalid(f"ic_bn={self.ic_bn} does not divide C={wl.in_channel}")
        if wl.out_channel % self.oc_bn:
            raise ScheduleInvalid(f"oc_bn={self.oc_bn} does not divide K={wl.out_channel}")

    def as_dict(self) -> dict:
        return {"ic_bn": self.ic_bn, "oc_bn": self.oc_bn,
                "reg_n": self.reg_n, "unroll_ker": self.unroll_ker}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvSchedule":
        return cls(d["ic_bn"], d["oc_bn"], d["reg_n"], bool(d["unroll_ker"]))


@dataclass
class Epilogue:
    """Fused per-element post-processing, applied in the order
    scale/shift -> bias -> residual_add -> relu."""

    scale: np.ndarray | None = None   # length out_channel
    shift: np.ndarray | None = None
    bias: np.ndarray | None = None
    relu: bool = False
    residual: np.ndarray | None = None  # same shape/layout as the conv output

    def is_empty(self) -> bool:
        return (self.scale is None and self.shift is None and self.bias is None
                and not self.relu and self.residual is None)


UNROLL_LIMIT = 25  # max R*S for which the kernel-window loop is flattened


@lru_cache(maxsize=1)
def vector_lane_width() -> int:
    """f32 lane count of the widest vector unit on this machine."""
    env = os.environ.get("NEOPLAN_LANE_WIDTH")
    if env:
        return int(env)
    flags = ""
    try:
        with open("/proc/cpuinfo") as f:
            flags = f.read()
    except OSError:
        pass
    machine = platform.machine().lower()
    if "avx512f" in flags:
        return 16
    if "avx2" in flags or " avx " in flags or "avx\n" in flags:
        return 8
    if "sse" in flags:
        return 4
    if "asimd" in flags or "neon" in flags or machine.startswith(("arm", "aarch")):
        return 4
    return 1


@njit(cache=True, nogil=True)
def _naive_nchw(xp, w, out, stride):
    # xp is the zero-padded input (N, C, H+2p, W+2p)
    nb, kk, oh, ow = out.shape
    _, cc, r_dim, s_dim = w.shape
    for n in range(nb):
        for k in range(kk):
            for i in range(oh):
                for j in range(ow):
                    acc = np.float32(0.0)
                    for c in range(cc):
                        for r in range(r_dim):
                            for s in range(s_dim):
                                acc += xp[n, c, i * stride + r, j * stride + s] \
                                    * w[k, c, r, s]
                    out[n, k, i, j] = acc


@njit(cache=True, nogil=True, fastmath=True)
def _blocked_rows(xp, w, out, stride, reg_n, unroll, row_lo, row_hi,
                  use_scale, scale, shift, use_bias, bias, use_res, res, relu):
    # xp: (N, C/x, H+2p, W+2p, x); w: (K/y, C/x, R, S, x, y)
    # out: (N, K/y, OH, OW, y); rows index the flattened (K/y, OH) space
    nb = xp.shape[0]
    co_blocks = xp.shape[1]
    x = xp.shape[4]
    r_dim = w.shape[2]
    s_dim = w.shape[3]
    y = w.shape[5]
    oh_dim = out.shape[2]
    ow_dim = out.shape[3]
    acc = np.empty((reg_n, y), dtype=np.float32)
    wvec = np.empty(y, dtype=np.float32)
    for n in range(nb):
        for row in range(row_lo, row_hi):
            ko = row // oh_dim
            oh = row % oh_dim
            ih0 = oh * stride
            ow0 = 0
            while ow0 < ow_dim:
                cur = min(reg_n, ow_dim - ow0)
                for i in range(cur):
                    for j in range(y):
                        acc[i, j] = 0.0
                for co in range(co_blocks):
                    if unroll:
                        for rs in range(r_dim * s_dim):
                            r = rs // s_dim
                            s = rs % s_dim
                            ih = ih0 + r
                            for ci in range(x):
                                for j in range(y):
                                    wvec[j] = w[ko, co, r, s, ci, j]
                                for i in range(cur):
                                    a = xp[n, co, ih, (ow0 + i) * stride + s, ci]
                                    for j in range(y):
                                        acc[i, j] += a * wvec[j]
                    else:
                        for r in range(r_dim):
                            ih = ih0 + r
                            for s in range(s_dim):
                                for ci in range(x):
                                    for j in range(y):
                                        wvec[j] = w[ko, co, r, s, ci, j]
                                    for i in range(cur):
                                        a = xp[n, co, ih, (ow0 + i) * stride + s, ci]
                                        for j in range(y):
                                            acc[i, j] += a * wvec[j]
                for i in range(cur):
                    ow = ow0 + i
                    for j in range(y):
                        v = acc[i, j]
                        if use_scale:
                            v = v * scale[ko, j] + shift[ko, j]
                        if use_bias:
                            v = v + bias[ko, j]
                        if use_res:
                            v = v + res[n, ko, oh, ow, j]
                        if relu and v < 0.0:
                            v = 0.0
                        out[n, ko, oh, ow, j] = v
                ow0 += cur


def _pad_nchw(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(a)
    n, c, h, w = a.shape
    out = aligned_empty((n, c, h + 2 * pad, w + 2 * pad))
    out[:] = 0.0
    out[:, :, pad:pad + h, pad:pad + w] = a
    return out


def _pad_nchwc(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(a)
    n, co, h, w, x = a.shape
    out = aligned_empty((n, co, h + 2 * pad, w + 2 * pad, x))
    out[:] = 0.0
    out[:, :, pad:pad + h, pad:pad + w, :] = a
    return out


def conv_reference(ifmap: Tensor, weights: Tensor, wl: ConvWorkload,
                   epi: Epilogue | None = None) -> Tensor:
    """Naive 6-loop convolution over default layouts; the ground-truth oracle."""
    if ifmap.layout.tag != "NCHW" or weights.layout.tag != "KCRS":
        raise ShapeMismatch("conv_reference expects NCHW data and KCRS weights")
    n, c, h, w = ifmap.shape
    kk, cc, r, s = weights.shape
    if (c, h, w) != (wl.in_channel, wl.in_h, wl.in_w) or \
            (kk, cc, r, s) != (wl.out_channel, wl.in_channel, wl.kernel_h, wl.kernel_w):
        raise ShapeMismatch(f"tensors do not match workload {wl}")
    xp = _pad_nchw(ifmap.data, wl.pad)
    out = aligned_empty((n, kk, wl.out_h, wl.out_w))
    _naive_nchw(xp, weights.data, out, wl.stride)
    if epi is not None and not epi.is_empty():
        if epi.scale is not None:
            shift = epi.shift if epi.shift is not None else np.zeros(kk, np.float32)
            out *= epi.scale.astype(np.float32).reshape(1, kk, 1, 1)
            out += shift.astype(np.float32).reshape(1, kk, 1, 1)
        if epi.bias is not None:
            out += epi.bias.astype(np.float32).reshape(1, kk, 1, 1)
        if epi.residual is not None:
            if epi.residual.shape != out.shape:
                raise ShapeMismatch("residual shape mismatch")
            out += epi.residual
        if epi.relu:
            np.maximum(out, 0.0, out=out)
    return Tensor(out, ifmap.layout)


def conv_blocked(ifmap: Tensor, weights: Tensor, wl: ConvWorkload,
                 sch: ConvSchedule, epi: Epilogue | None = None,
                 pool: ThreadPool | None = None) -> Tensor:
    """Blocked direct convolution; equals the packed reference within 1e-5."""
    sch.check(wl)
    if ifmap.layout != nchwc(sch.ic_bn):
        raise ScheduleInvalid(f"ifmap layout {ifmap.layout} vs ic_bn={sch.ic_bn}")
    if weights.layout != kcrsck(sch.ic_bn, sch.oc_bn):
        raise ScheduleInvalid(f"weight layout {weights.layout} vs {sch}")
    n = ifmap.shape[0]
    ko = wl.out_channel // sch.oc_bn
    y = sch.oc_bn
    out = aligned_empty((n, ko, wl.out_h, wl.out_w, y))
    xp = _pad_nchwc(ifmap.data, wl.pad)

    dummy_v = np.zeros((1, 1), np.float32)
    dummy_t = np.zeros((1, 1, 1, 1, 1), np.float32)
    use_scale = use_bias = use_res = False
    scale = shift = dummy_v
    bias = dummy_v
    res = dummy_t
    relu = False
    if epi is not None:
        if epi.scale is not None or epi.shift is not None:
            use_scale = True
            scale = (epi.scale if epi.scale is not None
                     else np.ones(wl.out_channel, np.float32))
            shift = (epi.shift if epi.shift is not None
                     else np.zeros(wl.out_channel, np.float32))
            scale = np.ascontiguousarray(scale, np.float32).reshape(ko, y)
            shift = np.ascontiguousarray(shift, np.float32).reshape(ko, y)
        if epi.bias is not None:
            use_bias = True
            bias = np.ascontiguousarray(epi.bias, np.float32).reshape(ko, y)
        if epi.residual is not None:
            if epi.residual.shape != out.shape:
                raise ShapeMismatch("residual shape/layout mismatch")
            use_res = True
            res = np.ascontiguousarray(epi.residual, np.float32)
        relu = epi.relu

    unroll = sch.unroll_ker and wl.kernel_h * wl.kernel_w <= UNROLL_LIMIT
    wdata = weights.data

    def body(lo, hi):
        _blocked_rows(xp, wdata, out, wl.stride, sch.reg_n, unroll, lo, hi,
                      use_scale, scale, shift, use_bias, bias, use_res, res, relu)

    n_rows = ko * wl.out_h
    if pool is None:
        body(0, n_rows)
    else:
        parallel_for(pool, n_rows, body)
    return Tensor(out, nchwc(y))
