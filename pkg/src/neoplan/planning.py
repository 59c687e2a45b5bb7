"""Whole-graph scheme selection: minimize total conv execution time plus
layout-transform time.

The graph is reduced to a layout problem whose nodes are convs and
multi-input coercion points (residual adds, channel concats).  Conv nodes
carry one candidate per measured (ic_bn, oc_bn) pair; coercion nodes mirror
their first input's candidate list with an agreement edge (zero on the
diagonal, infinite elsewhere).  The same instance feeds the exact
dynamic-programming solver, the PBQP heuristic, and the brute-force test
oracle, so their objectives agree by construction.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import IndivisibleChannel, MissingSchedule, StateExplosion
from .graph import Graph, OpKind, infer_shapes, topo_sort
from .kernels import ConvSchedule, ConvWorkload
from .layout import Tensor, nchwc, retile_data
from .passes import LayoutBehavior, classify
from .pbqp import INF, PbqpInstance, pbqp_solve
from .tuning import MeasuredScheme, ScheduleDb, cpu_identifier

DEFAULT_STATE_CAP = 10 ** 6


class PlanTimeout(Exception):
    """Internal: DP exceeded its time budget; the caller falls back to PBQP."""


@dataclass(frozen=True)
class SchemeCandidate:
    conv_id: int
    schedule: ConvSchedule
    exec_ns: float


@dataclass
class SchemePlan:
    assignment: dict[int, SchemeCandidate]
    total_ns: float
    solver: str  # "DP" or "PBQP"

    def schedules(self) -> dict[int, ConvSchedule]:
        return {cid: c.schedule for cid, c in self.assignment.items()}

    def to_json(self) -> str:
        return json.dumps({
            "solver": self.solver,
            "total_ns": self.total_ns,
            "convs": {str(cid): dict(c.schedule.as_dict(), exec_ns=c.exec_ns)
                      for cid, c in self.assignment.items()},
        }, indent=2)

    @classmethod
    def from_json(cls, s: str) -> "SchemePlan":
        d = json.loads(s)
        assignment = {}
        for cid, sd in d["convs"].items():
            sched = ConvSchedule(sd["ic_bn"], sd["oc_bn"], sd["reg_n"],
                                 bool(sd["unroll_ker"]))
            assignment[int(cid)] = SchemeCandidate(int(cid), sched,
                                                   sd.get("exec_ns", 0.0))
        return cls(assignment, d["total_ns"], d["solver"])


def prune_candidates(measured: list[MeasuredScheme]) -> list[MeasuredScheme]:
    """Best-measured schedule per distinct (ic_bn, oc_bn) pair; reg_n and
    unroll are absorbed since only the layout pair is visible to the graph."""
    best: dict[tuple[int, int], MeasuredScheme] = {}
    for m in measured:
        key = (m.schedule.ic_bn, m.schedule.oc_bn)
        if key not in best or m.mean_ns < best[key].mean_ns:
            best[key] = m
    return sorted(best.values(), key=lambda m: m.mean_ns)


class TransformCostTable:
    """Measured retile cost per (feature shape, from_x, to_x), cached."""

    def __init__(self, repeats: int = 3):
        self.repeats = repeats
        self._cache: dict[tuple, float] = {}

    def cost(self, shape: tuple, from_x: int, to_x: int) -> float:
        """shape is the logical (N, C, H, W) of the edge tensor; ns returned."""
        if from_x == to_x:
            return 0.0
        n, c, h, w = shape
        if c % from_x or c % to_x:
            raise IndivisibleChannel(f"C={c} vs splits {from_x}->{to_x}")
        key = (shape, from_x, to_x)
        if key not in self._cache:
            rng = np.random.default_rng(0)
            t = Tensor(rng.standard_normal(
                (n, c // from_x, h, w, from_x)).astype(np.float32), nchwc(from_x))
            retile_data(t, to_x)  # warm-up
            times = []
            for _ in range(self.repeats):
                t0 = time.perf_counter_ns()
                retile_data(t, to_x)
                times.append(time.perf_counter_ns() - t0)
            self._cache[key] = float(min(times))
        return self._cache[key]


@dataclass
class _PlanNode:
    """One node of the layout problem."""

    node_id: int           # id in the source graph
    kind: str              # "conv" or "join"
    cands: list            # conv: SchemeCandidate list; join: first input's
    out_x: list            # produced split factor per candidate
    shape: tuple           # logical NCHW shape of the produced tensor


@dataclass
class LayoutProblem:
    nodes: list[_PlanNode]
    instance: PbqpInstance
    index_of: dict[int, int]  # graph node id -> position in nodes


def _layout_sources(g: Graph, plan_ids: set[int]) -> dict[int, int | None]:
    """For every graph node, the planning node its output layout comes from."""
    source: dict[int, int | None] = {}
    for nid in topo_sort(g):
        n = g.nodes[nid]
        if nid in plan_ids:
            source[nid] = nid
        elif n.kind in (OpKind.Input, OpKind.Constant):
            source[nid] = None
        elif classify(n.kind) == LayoutBehavior.Dependent:
            source[nid] = None
        else:
            data_srcs = [source.get(i) for i, _ in n.inputs
                         if g.nodes[i].kind != OpKind.Constant]
            source[nid] = data_srcs[0] if data_srcs else None
    return source


def _coercion_points(g: Graph) -> set[int]:
    """Add/Concat nodes whose inputs trace back to >= 2 distinct layout
    producers become planning nodes of their own."""
    convs = {nid for nid, n in g.nodes.items() if n.kind == OpKind.Conv2d}
    points: set[int] = set()
    while True:
        plan_ids = convs | points
        source = _layout_sources(g, plan_ids)
        new_points = set(points)
        for nid in topo_sort(g):
            n = g.nodes[nid]
            if n.kind in (OpKind.ElementwiseAdd, OpKind.Concat):
                srcs = {source.get(i) for i, _ in n.inputs}
                srcs.discard(None)
                srcs.discard(nid)
                if len(srcs) >= 2:
                    new_points.add(nid)
        if new_points == points:
            return points
        points = new_points


def build_problem(g: Graph, cands: dict[int, list[MeasuredScheme]],
                  costs: TransformCostTable) -> LayoutProblem:
    """Reduce the graph to node cost vectors plus edge cost matrices."""
    specs = infer_shapes(g)
    joins = _coercion_points(g)
    plan_ids = {nid for nid, n in g.nodes.items()
                if n.kind == OpKind.Conv2d} | joins
    source = _layout_sources(g, plan_ids)

    nodes: list[_PlanNode] = []
    index_of: dict[int, int] = {}
    inst = PbqpInstance()

    def logical_shape(nid):
        sp = specs[nid]
        if sp.layout.tag == "NCHWc":
            return (sp.shape[0], sp.shape[1] * sp.shape[4], sp.shape[2], sp.shape[3])
        return tuple(sp.shape)

    for nid in topo_sort(g):
        if nid not in plan_ids:
            continue
        n = g.nodes[nid]
        if n.kind == OpKind.Conv2d:
            mlist = cands.get(nid)
            if not mlist:
                raise MissingSchedule(f"conv {nid} has no candidate schemes")
            clist = [SchemeCandidate(nid, m.schedule, m.mean_ns) for m in mlist]
            pn = _PlanNode(nid, "conv", clist,
                           [c.schedule.oc_bn for c in clist], logical_shape(nid))
            idx = len(nodes)
            nodes.append(pn)
            index_of[nid] = idx
            inst.add_node(idx, [c.exec_ns for c in clist])

            def connect(pred_graph_id, to_split_of_cand):
                psrc = source.get(pred_graph_id)
                if psrc is None or psrc == nid:
                    return
                pidx = index_of[psrc]
                pn_pred = nodes[pidx]
                m = np.zeros((len(pn_pred.cands), len(clist)))
                for i, fx in enumerate(pn_pred.out_x):
                    for j, c in enumerate(clist):
                        m[i, j] = costs.cost(pn_pred.shape, fx,
                                             to_split_of_cand(c))
                inst.add_edge(pidx, idx, m)

            connect(n.inputs[0][0], lambda c: c.schedule.ic_bn)
            if n.attrs.get("epilogue", {}).get("residual"):
                # the fused residual must arrive in the conv's output layout
                connect(n.inputs[-1][0], lambda c: c.schedule.oc_bn)
        else:
            # coercion point: all inputs converted to the first input's layout
            preds = []
            for i, _ in n.inputs:
                psrc = source.get(i)
                if psrc is not None and psrc != nid and psrc in index_of:
                    preds.append(index_of[psrc])
            first = preds[0]
            fn = nodes[first]
            k = len(fn.cands)
            idx = len(nodes)
            pn = _PlanNode(nid, "join", list(fn.cands), list(fn.out_x),
                           logical_shape(nid))
            nodes.append(pn)
            index_of[nid] = idx
            inst.add_node(idx, np.zeros(k))
            agree = np.full((k, k), INF)
            np.fill_diagonal(agree, 0.0)
            inst.add_edge(first, idx, agree)
            for pidx in preds[1:]:
                pnn = nodes[pidx]
                m = np.zeros((len(pnn.cands), k))
                for i, fx in enumerate(pnn.out_x):
                    for j, tx in enumerate(pn.out_x):
                        m[i, j] = costs.cost(pnn.shape, fx, tx)
                inst.add_edge(pidx, idx, m)

    return LayoutProblem(nodes, inst, index_of)


# ---------------------------------------------------------------------------
# exact DP over the live frontier

def solve_dp(inst: PbqpInstance, state_cap: int = DEFAULT_STATE_CAP,
             deadline: float | None = None) -> tuple[dict[int, int], float]:
    """Exact minimum via DP; joint states are kept only for nodes that still
    have unprocessed neighbors."""
    order = sorted(inst.costs)
    pos = {n: i for i, n in enumerate(order)}
    nbrs: dict[int, list[tuple[int, np.ndarray]]] = {n: [] for n in order}
    for (u, v), m in inst.edges.items():
        nbrs[u].append((v, m))
        nbrs[v].append((u, m.T))
    last_use = {n: pos[n] for n in order}
    for n in order:
        for v, _ in nbrs[n]:
            last_use[n] = max(last_use[n], pos[v])

    # states: frozenset of (node, choice) for live nodes -> (cost, state id)
    states = {frozenset(): (0.0, 0)}
    parents = {0: None}
    next_sid = 1
    live: set[int] = set()

    for step, n in enumerate(order):
        if deadline is not None and time.monotonic() > deadline:
            raise PlanTimeout()
        vecn = inst.costs[n]
        preds = [(v, m) for v, m in nbrs[n] if pos[v] < step]
        dying = {q for q in (live | {n}) if last_use[q] <= step}
        new_states: dict[frozenset, tuple[float, int]] = {}
        for key, (cost, sid) in states.items():
            choice_of = dict(key)
            for j in range(len(vecn)):
                c = cost + vecn[j]
                for v, m in preds:
                    # matrices in nbrs[n] are oriented (n's choice, v's choice)
                    c += m[j, choice_of[v]]
                if not np.isfinite(c):
                    continue
                new_key = frozenset((q, ch) for q, ch in
                                    list(choice_of.items()) + [(n, j)]
                                    if q not in dying)
                cur = new_states.get(new_key)
                if cur is None or c < cur[0]:
                    new_states[new_key] = (c, next_sid)
                    parents[next_sid] = (sid, n, j)
                    next_sid += 1
            if len(new_states) > state_cap:
                raise StateExplosion(
                    f"{len(new_states)} live states exceed cap {state_cap}")
        if not new_states:
            raise StateExplosion(f"no finite state at node {n}")
        if len(new_states) > state_cap:
            raise StateExplosion(
                f"{len(new_states)} live states exceed cap {state_cap}")
        states = new_states
        live = (live | {n}) - dying

    best_key = min(states, key=lambda k: states[k][0])
    cost, sid = states[best_key]
    assignment: dict[int, int] = {}
    while parents[sid] is not None:
        sid, n, j = parents[sid]
        assignment[n] = j
    return assignment, float(cost)


# ---------------------------------------------------------------------------
# public entry points

def dp_plan(g: Graph, cands: dict[int, list[MeasuredScheme]],
            costs: TransformCostTable,
            state_cap: int = DEFAULT_STATE_CAP,
            deadline: float | None = None) -> SchemePlan:
    prob = build_problem(g, cands, costs)
    assignment, cost = solve_dp(prob.instance, state_cap, deadline)
    return _to_plan(prob, assignment, cost, "DP")


def pbqp_reduce(g: Graph, cands: dict[int, list[MeasuredScheme]],
                costs: TransformCostTable) -> LayoutProblem:
    return build_problem(g, cands, costs)


def _to_plan(prob: LayoutProblem, assignment: dict[int, int], cost: float,
             solver: str) -> SchemePlan:
    chosen = {}
    for idx, pn in enumerate(prob.nodes):
        if pn.kind == "conv":
            chosen[pn.node_id] = pn.cands[assignment[idx]]
    return SchemePlan(chosen, float(cost), solver)


def conv_workloads(g: Graph) -> dict[int, ConvWorkload]:
    specs = infer_shapes(g)
    out = {}
    for nid, n in g.nodes.items():
        if n.kind != OpKind.Conv2d:
            continue
        data = specs[n.inputs[0][0]]
        w = g.nodes[n.inputs[1][0]].attrs["value"]
        nb, c, h, wdt = data.shape
        out[nid] = ConvWorkload(c, w.shape[0], h, wdt, w.shape[2], w.shape[3],
                                n.attrs["stride"], n.attrs["pad"])
    return out


def plan(g: Graph, db: ScheduleDb, time_budget_s: float = 10.0,
         state_cap: int = DEFAULT_STATE_CAP,
         costs: TransformCostTable | None = None,
         cpu: str | None = None) -> SchemePlan:
    """DP within the budget, PBQP on state explosion or timeout."""
    cpu = cpu or cpu_identifier()
    workloads = conv_workloads(g)
    if not workloads:
        return SchemePlan({}, 0.0, "DP")
    cands = {}
    for nid, wl in workloads.items():
        measured = db.get(cpu, wl)
        if not measured:
            raise MissingSchedule(f"no schedules for conv {nid} workload {wl}")
        cands[nid] = prune_candidates(measured)
    costs = costs or TransformCostTable()
    prob = build_problem(g, cands, costs)
    deadline = time.monotonic() + time_budget_s
    try:
        assignment, cost = solve_dp(prob.instance, state_cap, deadline)
        return _to_plan(prob, assignment, cost, "DP")
    except (StateExplosion, PlanTimeout):
        assignment, cost = pbqp_solve(prob.instance)
        return _to_plan(prob, assignment, cost, "PBQP")
