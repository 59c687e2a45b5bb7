"""Blocked convolution from the ground up.

Packs a feature map into NCHW[x]c, packs the weights into KCRS[x]c[y]k,
runs the blocked direct-convolution template, and checks the result against
the naive reference — then times both to show why the blocking matters.
"""

import time

import numpy as np

from neoplan import (ConvSchedule, ConvWorkload, KCRS, Tensor, conv_blocked,
                     conv_reference, vector_lane_width)
from neoplan.layout import pack_data, pack_weights, unpack_data

wl = ConvWorkload(in_channel=64, out_channel=64, in_h=56, in_w=56,
                  kernel_h=3, kernel_w=3, stride=1, pad=1)
lane = vector_lane_width()
sch = ConvSchedule(ic_bn=min(16, lane), oc_bn=min(16, lane), reg_n=8,
                   unroll_ker=True)
print(f"workload: {wl}")
print(f"schedule: {sch} (vector lanes: {lane})")

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 64, 56, 56)).astype(np.float32))
w = Tensor(rng.standard_normal((64, 64, 3, 3)).astype(np.float32), KCRS)

# one-time layout work: C split into C/x blocks, weights pre-tiled
xb = pack_data(x, sch.ic_bn)
wb = pack_weights(w, sch.ic_bn, sch.oc_bn)
print(f"packed data   {x.shape} -> {xb.shape}  ({xb.layout})")
print(f"packed weight {w.shape} -> {wb.shape}  ({wb.layout})")

ref = conv_reference(x, w, wl)          # warm both JIT kernels
out = conv_blocked(xb, wb, wl, sch)

err = np.abs(unpack_data(out).data - ref.data).max() / np.abs(ref.data).max()
print(f"max relative error vs naive reference: {err:.2e}")


def best_of(fn, n=5):
    times = []
    for _ in range(n):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return min(times) / 1e6


t_naive = best_of(lambda: conv_reference(x, w, wl))
t_block = best_of(lambda: conv_blocked(xb, wb, wl, sch))
print(f"naive NCHW: {t_naive:8.2f} ms")
print(f"blocked:    {t_block:8.2f} ms   ({t_naive / t_block:.1f}x)")
