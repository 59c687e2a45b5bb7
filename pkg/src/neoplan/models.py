"""Synthetic model generators: desk-scale stand-ins for the usual CNN
families, with deterministic seeded weights."""

from __future__ import annotations

import numpy as np

from .graph import Graph, OpKind

KINDS = ("chain", "vgg-ish", "resnet-block", "diamond-concat")


def _conv(g: Graph, rng, data, c_in, c_out, k, stride=1, pad=None, scale=0.2):
    if pad is None:
        pad = k // 2
    w = g.constant((rng.standard_normal((c_out, c_in, k, k)) * scale
                    / np.sqrt(c_in * k * k)).astype(np.float32))
    return g.add(OpKind.Conv2d, inputs=[data, w], stride=stride, pad=pad)


def _bn(g: Graph, rng, data, channels):
    gamma = g.constant(rng.uniform(0.5, 1.5, channels).astype(np.float32))
    beta = g.constant(rng.uniform(-0.2, 0.2, channels).astype(np.float32))
    mean = g.constant(rng.uniform(-0.1, 0.1, channels).astype(np.float32))
    var = g.constant(rng.uniform(0.5, 1.5, channels).astype(np.float32))
    return g.add(OpKind.BatchNorm, inputs=[data, gamma, beta, mean, var], eps=1e-5)


def gen_model(kind: str, depth: int = 3, channels: int = 16,
              hw: int = 16, seed: int = 0) -> Graph:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {KINDS}")
    if depth < 1 or channels < 1 or hw < 1:
        raise ValueError("depth, channels and hw must be positive")
    rng = np.random.default_rng(seed)
    g = Graph(f"{kind}-d{depth}-c{channels}")
    data = g.add(OpKind.Input, shape=(1, channels, hw, hw), layout="NCHW",
                 name="data")

    if kind == "chain":
        x = data
        for _ in range(depth):
            x = _conv(g, rng, x, channels, channels, 3)
            x = _bn(g, rng, x, channels)
            x = g.add(OpKind.ReLU, inputs=[x])
        g.outputs = [x]
        return g

    if kind == "vgg-ish":
        x = data
        c = channels
        size = hw
        for _ in range(depth):
            x = _conv(g, rng, x, c, 2 * c, 3)
            x = g.add(OpKind.ReLU, inputs=[x])
            c *= 2
            if size >= 4:
                x = g.add(OpKind.MaxPool, inputs=[x], window=2, stride=2)
                size //= 2
        x = g.add(OpKind.Flatten, inputs=[x])
        w = g.constant((rng.standard_normal((10, c * size * size)) * 0.05)
                       .astype(np.float32))
        x = g.add(OpKind.Dense, inputs=[x, w])
        x = g.add(OpKind.Softmax, inputs=[x])
        g.outputs = [x]
        return g

    if kind == "resnet-block":
        x = data
        for _ in range(depth):
            shortcut = x
            y = _conv(g, rng, x, channels, channels, 3)
            y = _bn(g, rng, y, channels)
            y = g.add(OpKind.ReLU, inputs=[y])
            y = _conv(g, rng, y, channels, channels, 3)
            y = _bn(g, rng, y, channels)
            x = g.add(OpKind.ElementwiseAdd, inputs=[y, shortcut])
            x = g.add(OpKind.ReLU, inputs=[x])
        g.outputs = [x]
        return g

    # diamond-concat: parallel conv branches merged on the channel axis
    x = data
    c = channels
    for _ in range(depth):
        half = max(1, c // 2)
        a = _conv(g, rng, x, c, half, 3)
        a = g.add(OpKind.ReLU, inputs=[a])
        b = _conv(g, rng, x, c, half, 1)
        b = g.add(OpKind.ReLU, inputs=[b])
        x = g.add(OpKind.Concat, inputs=[a, b], axis=1)
        c = 2 * half
    x = _conv(g, rng, x, c, c, 1)
    g.outputs = [x]
    return g
