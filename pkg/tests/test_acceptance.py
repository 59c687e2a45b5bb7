"""Acceptance suite: one test per release criterion, each printing a single
PASS/FAIL line with the measured quantity and its tolerance."""

import time
import warnings

import numpy as np
import pytest

from neoplan import (ConvSchedule, ConvWorkload, Graph, KCRS, OpKind,
                     Tensor, ThreadPool, alter_and_insert_transforms,
                     conv_blocked, conv_reference, count_transforms, execute,
                     gen_model, local_search, pbqp_solve, physical_cores,
                     pretransform_weights, scalability_report, simplify,
                     uniform_assignment, vector_lane_width)
from neoplan.layout import (pack_data, pack_kcrs_array, pack_nchw_array,
                            pack_weights, retile_nchw_array, unpack_data,
                            unpack_kcrs_array, unpack_nchw_array)
from neoplan.models import KINDS
from neoplan.passes import per_conv_packing
from neoplan.planning import build_problem, solve_dp
from neoplan.tuning import factors_desc

from helpers import StubCosts, random_candidates, random_conv_graph


def report(n, ok, detail):
    print(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} — {detail}")


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(1.0, np.abs(b).max()))


def model_input(g, seed):
    inp = next(nd for nd in g.nodes.values() if nd.kind == OpKind.Input)
    shape = tuple(inp.attrs["shape"])
    a = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    return {inp.attrs.get("name", f"input{inp.id}"): a}


def vector_brute_force(inst):
    """Independent oracle: materialize the full cost tensor by broadcasting
    node vectors and edge matrices, then take its global minimum."""
    nodes = sorted(inst.costs)
    idx = {n: i for i, n in enumerate(nodes)}
    sizes = [len(inst.costs[n]) for n in nodes]
    total = np.zeros(sizes)
    for n in nodes:
        sh = [1] * len(nodes)
        sh[idx[n]] = sizes[idx[n]]
        total = total + inst.costs[n].reshape(sh)
    for (u, v), m in inst.edges.items():
        iu, iv = idx[u], idx[v]
        if iu > iv:
            iu, iv = iv, iu
            m = m.T
        sh = [1] * len(nodes)
        sh[iu], sh[iv] = m.shape
        total = total + m.reshape(sh)
    return float(total.min())


def tractable_problem(seed):
    g = random_conv_graph(seed, max_convs=8)
    cands = random_candidates(g, seed, max_pairs=4)
    prob = build_problem(g, cands, StubCosts())
    size = 1
    for v in prob.instance.costs.values():
        size *= len(v)
    return prob if size <= 80_000 else None


def test_criterion_1_conv_oracle_equivalence():
    """>= 200 random (workload, schedule) pairs, blocked vs reference,
    max relative error <= 1e-5, under 2 minutes."""
    t0 = time.monotonic()
    rng = np.random.default_rng(20260823)
    worst, n_cases = 0.0, 0
    while n_cases < 200:
        c = int(rng.integers(1, 65))
        k = int(rng.integers(1, 65))
        h = int(rng.integers(4, 57))
        w = int(rng.integers(4, 57))
        r = int(rng.choice([1, 3, 5, 7]))
        s = int(rng.choice([1, 3, 5, 7]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, max(r, s) // 2 + 1))
        if h + 2 * pad < r or w + 2 * pad < s:
            continue
        wl = ConvWorkload(c, k, h, w, r, s, stride, pad)
        macs = k * c * wl.out_h * wl.out_w * r * s
        if macs > 60e6:
            continue  # keep the naive oracle affordable
        sch = ConvSchedule(
            int(rng.choice(factors_desc(c))), int(rng.choice(factors_desc(k))),
            int(rng.choice([t for t in (32, 16, 8, 4, 2) if t <= wl.out_w] or [1])),
            bool(rng.integers(0, 2)))
        x = rng.standard_normal((1, c, h, w)).astype(np.float32)
        wt = rng.standard_normal((k, c, r, s)).astype(np.float32)
        ref = conv_reference(Tensor(x), Tensor(wt, KCRS), wl)
        out = unpack_data(conv_blocked(
            pack_data(Tensor(x), sch.ic_bn),
            pack_weights(Tensor(wt, KCRS), sch.ic_bn, sch.oc_bn), wl, sch))
        worst = max(worst, rel_err(out.data, ref.data))
        n_cases += 1
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-5 and elapsed < 120
    report(1, ok, f"{n_cases} conv pairs, max rel err {worst:.2e} "
                  f"(tol 1e-5), {elapsed:.1f}s (limit 120s)")
    assert ok


def test_criterion_2_layout_round_trips():
    """Exhaustive pack/unpack/retile identities for every C_full <= 32 and
    every factor pair; bitwise equality, under 30 seconds."""
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    checks = 0
    for c in range(1, 33):
        a = rng.standard_normal((1, c, 3, 2)).astype(np.float32)
        for x in factors_desc(c):
            p = pack_nchw_array(a, x)
            assert np.array_equal(unpack_nchw_array(p), a)
            checks += 1
            for b in factors_desc(c):
                assert np.array_equal(retile_nchw_array(p, b),
                                      pack_nchw_array(a, b))
                checks += 1
    for k in range(1, 33):
        for c in (1, 2, 3, 4, 6, 8, 12, 16, 24, 32):
            w = rng.standard_normal((k, c, 2, 2)).astype(np.float32)
            for y in factors_desc(k):
                for x in factors_desc(c):
                    assert np.array_equal(
                        unpack_kcrs_array(pack_kcrs_array(w, x, y)), w)
                    checks += 1
    elapsed = time.monotonic() - t0
    ok = elapsed < 30
    report(2, ok, f"{checks} bitwise round-trips (C_full <= 32, all factor "
                  f"pairs), {elapsed:.1f}s (limit 30s)")
    assert ok


def test_criterion_3_semantic_preservation():
    """Every model kind, optimized vs unoptimized, 10 random inputs each,
    relative error <= 1e-4, under 2 minutes."""
    t0 = time.monotonic()
    worst = 0.0
    for kind in KINDS:
        g = gen_model(kind, depth=2, channels=8, hw=12, seed=42)
        opt = pretransform_weights(alter_and_insert_transforms(
            simplify(g), uniform_assignment(g)))
        for i in range(10):
            inputs = model_input(g, seed=100 + i)
            base = execute(g, inputs)[0]
            tuned = execute(opt, inputs)[0]
            worst = max(worst, rel_err(tuned, base))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-4 and elapsed < 120
    report(3, ok, f"{len(KINDS)} model kinds x 10 inputs, max rel err "
                  f"{worst:.2e} (tol 1e-4), {elapsed:.1f}s (limit 120s)")
    assert ok


def test_criterion_4_dp_exactness():
    """dp_plan equals brute-force enumeration on 50 seeded random graphs
    (<= 8 convs, <= 4 layout pairs each), under 1 minute."""
    t0 = time.monotonic()
    solved, seed = 0, 0
    while solved < 50:
        prob = tractable_problem(seed)
        seed += 1
        if prob is None:
            continue
        _, dp_cost = solve_dp(prob.instance)
        best = vector_brute_force(prob.instance)
        assert dp_cost == pytest.approx(best, rel=1e-12), f"seed {seed - 1}"
        solved += 1
    elapsed = time.monotonic() - t0
    ok = elapsed < 60
    report(4, ok, f"{solved} random graphs, DP total == brute-force minimum "
                  f"exactly, {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_5_pbqp_quality():
    """cost_dp / cost_pbqp >= 0.88 on >= 95 of 100 seeded instances, and
    chain instances match DP exactly, under 1 minute."""
    t0 = time.monotonic()
    good, ratios, seed = 0, [], 1000
    for _ in range(100):
        prob = None
        while prob is None:
            prob = tractable_problem(seed)
            seed += 1
        _, dp_cost = solve_dp(prob.instance)
        _, pb_cost = pbqp_solve(prob.instance)
        ratio = dp_cost / pb_cost if pb_cost > 0 else 1.0
        ratios.append(ratio)
        if ratio >= 0.88:
            good += 1
    # pure chains reduce exactly through R1
    for seed in range(20):
        g = gen_model("chain", depth=4, channels=8, hw=8, seed=seed)
        cands = random_candidates(simplify(g), seed)
        prob = build_problem(simplify(g), cands, StubCosts())
        _, dp_cost = solve_dp(prob.instance)
        _, pb_cost = pbqp_solve(prob.instance)
        assert pb_cost == pytest.approx(dp_cost, rel=1e-12)
    elapsed = time.monotonic() - t0
    ok = good >= 95 and elapsed < 60
    report(5, ok, f"{good}/100 instances at cost ratio >= 0.88 "
                  f"(min ratio {min(ratios):.3f}), 20/20 chains exact, "
                  f"{elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_6_transform_minimality():
    """Uniform-x 10-conv chain needs exactly 2 transforms; a mixed-x chain
    needs one per layout-mismatched edge, under 5 seconds."""
    t0 = time.monotonic()
    g = simplify(gen_model("chain", depth=10, channels=16, hw=8, seed=0))
    convs = sorted(nid for nid, n in g.nodes.items()
                   if n.kind == OpKind.Conv2d)
    uniform = alter_and_insert_transforms(g, {c: (8, 8) for c in convs})
    n_uniform = count_transforms(uniform)

    xs = [8, 8, 4, 4, 16, 16, 2, 8, 8, 8]
    mixed = alter_and_insert_transforms(
        g, {c: (x, x) for c, x in zip(convs, xs)})
    # boundary pack + boundary unpack + one retile per mismatched interior edge
    expected = 2 + sum(1 for a, b in zip(xs, xs[1:]) if a != b)
    n_mixed = count_transforms(mixed)
    elapsed = time.monotonic() - t0
    ok = n_uniform == 2 and n_mixed == expected and elapsed < 5
    report(6, ok, f"uniform chain: {n_uniform} transforms (expected 2); "
                  f"mixed chain: {n_mixed} (expected {expected}), "
                  f"{elapsed:.1f}s (limit 5s)")
    assert ok


def test_criterion_7_determinism_under_parallelism():
    """Thread counts 1, 2, and max produce bitwise-identical outputs on all
    generated model kinds, under 1 minute."""
    t0 = time.monotonic()
    counts = sorted({1, 2, max(2, physical_cores())})
    checked = 0
    for kind in KINDS:
        g = gen_model(kind, depth=2, channels=8, hw=12, seed=9)
        opt = pretransform_weights(alter_and_insert_transforms(
            simplify(g), uniform_assignment(g)))
        inputs = model_input(g, seed=1)
        outs = []
        for t in counts:
            with ThreadPool(t) as pool:
                outs.append(execute(opt, inputs, pool)[0])
        for other in outs[1:]:
            assert np.array_equal(outs[0], other), kind
            checked += 1
    elapsed = time.monotonic() - t0
    ok = elapsed < 60
    report(7, ok, f"{len(KINDS)} models x threads {counts}: bitwise "
                  f"identical ({checked} comparisons), {elapsed:.1f}s "
                  f"(limit 60s)")
    assert ok


def test_criterion_8_directional_performance():
    """Soft, gated to hosts with vector lanes >= 8: tuned blocked conv
    >= 2x naive on the 64ch 3x3 56x56 workload, and transform elimination
    >= 1.1x over per-conv pack/unpack on a 10-conv chain.  Under 3 minutes;
    shortfalls are reported as warnings, not failures."""
    if vector_lane_width() < 8:
        report(8, True, "skipped: vector lane width "
                        f"{vector_lane_width()} < 8 (machine-gated)")
        pytest.skip("no wide vector unit")
    t0 = time.monotonic()
    wl = ConvWorkload(64, 64, 56, 56, 3, 3, 1, 1)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 64, 56, 56)).astype(np.float32)
    wt = rng.standard_normal((64, 64, 3, 3)).astype(np.float32)
    conv_reference(Tensor(x), Tensor(wt, KCRS), wl)  # JIT warm-up
    naive = []
    for _ in range(3):
        s = time.perf_counter_ns()
        conv_reference(Tensor(x), Tensor(wt, KCRS), wl)
        naive.append(time.perf_counter_ns() - s)
    best = local_search(wl, budget=12, repeats=3, warmups=1)[0]
    conv_speedup = min(naive) / best.mean_ns

    # 10-conv 1x1 chain: light compute makes the per-conv transform cost
    # visible.  A uniform split (ic_bn == oc_bn) lets the eliminated version
    # keep one layout end to end.
    chain_wl = ConvWorkload(64, 64, 56, 56, 1, 1, 1, 0)
    schemes = local_search(chain_wl, budget=16, repeats=3, warmups=1)
    chain_best = next((m for m in schemes
                       if m.schedule.ic_bn == m.schedule.oc_bn), schemes[0])
    g = Graph("chain-1x1")
    cur = g.add(OpKind.Input, shape=(1, 64, 56, 56), layout="NCHW",
                name="data")
    for _ in range(10):
        wc = g.constant((rng.standard_normal((64, 64, 1, 1)) / 8)
                        .astype(np.float32))
        cur = g.add(OpKind.Conv2d, inputs=[cur, wc], stride=1, pad=0)
    g.outputs = [cur]
    assign = {nid: chain_best.schedule for nid in g.nodes
              if g.nodes[nid].kind == OpKind.Conv2d}
    inputs = model_input(g, seed=2)
    from neoplan import benchmark
    packed = per_conv_packing(g, assign)
    elim = pretransform_weights(alter_and_insert_transforms(g, assign))
    with ThreadPool(1) as pool:
        t_packed, _ = benchmark(packed, pool, inputs, samples=10)
        t_elim, _ = benchmark(elim, pool, inputs, samples=10)
    elim_speedup = t_packed / t_elim

    elapsed = time.monotonic() - t0
    ok = conv_speedup >= 2.0 and elim_speedup >= 1.1
    report(8, True, f"{'met' if ok else 'SOFT SHORTFALL'}: tuned conv "
                    f"{conv_speedup:.2f}x naive (target 2x); transform elim "
                    f"{elim_speedup:.2f}x per-conv packing (target 1.1x), "
                    f"{elapsed:.1f}s (limit 180s)")
    if not ok:
        warnings.warn(f"directional performance below target: "
                      f"conv {conv_speedup:.2f}x, elim {elim_speedup:.2f}x")
    assert elapsed < 180


def test_criterion_9_scalability_report(tmp_path):
    """Benchmark CSV across {1, 2, 4, ..., cores}; throughput monotone
    non-decreasing up to 4 threads within 10% tolerance, under 2 minutes."""
    t0 = time.monotonic()
    cores = physical_cores()
    counts = [t for t in (1, 2, 4, 8, 16, 32) if t <= cores] or [1]
    g = gen_model("chain", depth=3, channels=16, hw=16, seed=0)
    opt = pretransform_weights(alter_and_insert_transforms(
        simplify(g), uniform_assignment(g, x=8)))
    inputs = model_input(g, seed=3)
    lines = scalability_report(opt, inputs, samples=10, thread_counts=counts)
    csv = tmp_path / "scalability.csv"
    csv.write_text("threads,samples,mean_ns,stderr_ns\n" + "\n".join(lines) + "\n")
    print(csv.read_text().rstrip())
    means = {int(l.split(",")[0]): float(l.split(",")[2]) for l in lines}
    monotone = all(means[b] <= means[a] * 1.10
                   for a, b in zip(counts, counts[1:]) if b <= 4)
    elapsed = time.monotonic() - t0
    ok = monotone and elapsed < 120
    report(9, ok, f"CSV for threads {counts} written; throughput monotone "
                  f"up to 4 threads within 10% "
                  f"({'trivially, single-core host' if cores == 1 else 'measured'}), "
                  f"{elapsed:.1f}s (limit 120s)")
    assert ok
