"""Shared builders for the planner tests: random conv graphs, synthetic
candidate sets, deterministic stub transform costs, and a brute-force
minimizer over a layout problem instance."""

import itertools

import numpy as np

from neoplan import ConvSchedule, Graph, MeasuredScheme, OpKind


class StubCosts:
    """Deterministic stand-in for TransformCostTable: zero on the diagonal,
    a repeatable pseudo-random positive cost otherwise."""

    def cost(self, shape, from_x, to_x):
        if from_x == to_x:
            return 0.0
        h = (from_x * 31 + to_x * 17 + sum(shape)) % 7
        return (h + 1) * 1e5


def random_conv_graph(seed, max_convs=6):
    """Random DAG of 3x3 convs over 8-channel tensors with occasional
    residual adds and channel concats."""
    rng = np.random.default_rng(seed)
    g = Graph(f"rand-{seed}")
    data = g.add(OpKind.Input, shape=(1, 8, 8, 8), layout="NCHW", name="data")
    opens = [(data, 8)]  # (node id, channel count)
    n_convs = int(rng.integers(2, max_convs + 1))
    for _ in range(n_convs):
        roll = rng.random()
        same = {}
        for nid, c in opens:
            same.setdefault(c, []).append(nid)
        mergeable = [ids for ids in same.values() if len(ids) >= 2]
        if roll < 0.25 and mergeable:
            ids = mergeable[0]
            a, b = ids[0], ids[1]
            c = next(ch for nid, ch in opens if nid == a)
            add = g.add(OpKind.ElementwiseAdd, inputs=[a, b])
            opens = [(n, ch) for n, ch in opens if n not in (a, b)]
            opens.append((add, c))
        elif roll < 0.4 and len(opens) >= 2:
            (a, ca), (b, cb) = opens[-2], opens[-1]
            cat = g.add(OpKind.Concat, inputs=[a, b], axis=1)
            opens = opens[:-2] + [(cat, ca + cb)]
        src, c_in = opens[int(rng.integers(0, len(opens)))]
        w = g.constant(rng.standard_normal((8, c_in, 3, 3)).astype(np.float32))
        conv = g.add(OpKind.Conv2d, inputs=[src, w], stride=1, pad=1)
        if rng.random() < 0.6:
            opens = [(n, ch) for n, ch in opens if n != src]
        opens.append((conv, 8))
    g.outputs = [opens[-1][0]]
    return g


def divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def random_candidates(g, seed, max_pairs=4):
    """Synthetic measured schemes: a few (ic_bn, oc_bn) pairs per conv with
    made-up execution times."""
    rng = np.random.default_rng(seed + 1)
    cands = {}
    for nid, n in g.nodes.items():
        if n.kind != OpKind.Conv2d:
            continue
        c_in = g.nodes[n.inputs[1][0]].attrs["value"].shape[1]
        pairs = [(ic, oc) for ic in divisors(c_in) for oc in divisors(8)]
        rng.shuffle(pairs)
        k = int(rng.integers(2, max_pairs + 1))
        cands[nid] = [
            MeasuredScheme(ConvSchedule(ic, oc, 4, True),
                           float(rng.uniform(1e6, 9e6)), 0.0, 1)
            for ic, oc in pairs[:k]]
    return cands


def brute_force_instance(inst, cap=400_000):
    """Exhaustive minimum of a layout problem instance, or None above cap."""
    nodes = sorted(inst.costs)
    sizes = [len(inst.costs[n]) for n in nodes]
    total = 1
    for s in sizes:
        total *= s
    if total > cap:
        return None
    best = np.inf
    for combo in itertools.product(*[range(s) for s in sizes]):
        c = inst.objective(dict(zip(nodes, combo)))
        if c < best:
            best = c
    return float(best)
