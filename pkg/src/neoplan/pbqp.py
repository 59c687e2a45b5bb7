"""Heuristic PBQP solver.

Nodes carry cost vectors, edges carry cost matrices; an assignment picks one
index per node and pays vector plus matrix entries.  Degree-0/1/2 nodes are
reduced exactly; higher-degree nodes are eliminated heuristically by a
locally minimal choice, then choices are back-propagated in reverse order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible

INF = np.inf


@dataclass
class PbqpInstance:
    """costs[n] is a 1-D vector; edges[(u, v)] has shape (len(costs[u]), len(costs[v]))."""

    costs: dict[int, np.ndarray] = field(default_factory=dict)
    edges: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def add_node(self, nid: int, vector) -> None:
        self.costs[nid] = np.asarray(vector, dtype=np.float64)

    def add_edge(self, u: int, v: int, matrix) -> None:
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (len(self.costs[u]), len(self.costs[v])):
            raise ValueError(f"matrix shape {m.shape} does not match nodes {u},{v}")
        if (u, v) in self.edges:
            self.edges[(u, v)] = self.edges[(u, v)] + m
        elif (v, u) in self.edges:
            self.edges[(v, u)] = self.edges[(v, u)] + m.T
        else:
            self.edges[(u, v)] = m

    def objective(self, assignment: dict[int, int]) -> float:
        total = 0.0
        for nid, vec in self.costs.items():
            total += vec[assignment[nid]]
        for (u, v), m in self.edges.items():
            total += m[assignment[u], assignment[v]]
        return float(total)


def pbqp_solve(inst: PbqpInstance) -> tuple[dict[int, int], float]:
    """Returns (assignment, cost).  Raises Infeasible when every assignment
    reachable through the reductions has infinite cost."""
    vec = {n: v.copy() for n, v in inst.costs.items()}
    adj: dict[int, dict[int, np.ndarray]] = {n: {} for n in vec}
    for (u, v), m in inst.edges.items():
        adj[u][v] = adj[u].get(v, 0) + m
        adj[v][u] = adj[v].get(u, 0) + m.T

    decisions = []  # replayed in reverse to recover the assignment
    assignment: dict[int, int] = {}
    remaining = set(vec)

    def remove_edge(u, v):
        del adj[u][v]
        del adj[v][u]

    while remaining:
        deg0 = [n for n in remaining if not adj[n]]
        if deg0:
            n = min(deg0)
            choice = int(np.argmin(vec[n]))
            assignment[n] = choice
            remaining.discard(n)
            continue
        deg1 = sorted(n for n in remaining if len(adj[n]) == 1)
        if deg1:
            n = deg1[0]
            (nbr, m), = adj[n].items()
            folded = vec[n][:, None] + m  # (n-cands, nbr-cands)
            sel = np.argmin(folded, axis=0)
            vec[nbr] = vec[nbr] + folded[sel, np.arange(m.shape[1])]
            decisions.append(("r1", n, nbr, sel))
            remove_edge(n, nbr)
            remaining.discard(n)
            continue
        deg2 = sorted(n for n in remaining if len(adj[n]) == 2)
        if deg2:
            n = deg2[0]
            (a, ma), (b, mb) = sorted(adj[n].items())
            # combined[ia, ib] over n's candidates
            stack = vec[n][:, None, None] + ma[:, :, None] + mb[:, None, :]
            sel = np.argmin(stack, axis=0)
            combined = np.min(stack, axis=0)
            decisions.append(("r2", n, a, b, sel))
            remove_edge(n, a)
            remove_edge(n, b)
            remaining.discard(n)
            # fold the combined matrix into an (a, b) edge
            if b in adj[a]:
                adj[a][b] = adj[a][b] + combined
                adj[b][a] = adj[a][b].T
            else:
                adj[a][b] = combined
                adj[b][a] = combined.T
            continue
        # heuristic elimination: max degree, ties by node id
        n = min(remaining, key=lambda q: (-len(adj[q]), q))
        local = vec[n].copy()
        for nbr, m in adj[n].items():
            local = local + np.min(m + vec[nbr][None, :], axis=1)
        choice = int(np.argmin(local))
        if not np.isfinite(local[choice]):
            raise Infeasible(f"node {n}: all candidates have infinite cost")
        assignment[n] = choice
        for nbr in list(adj[n]):
            vec[nbr] = vec[nbr] + adj[n][nbr][choice, :]
            remove_edge(n, nbr)
        remaining.discard(n)

    for dec in reversed(decisions):
        if dec[0] == "r1":
            _, n, nbr, sel = dec
            assignment[n] = int(sel[assignment[nbr]])
        else:
            _, n, a, b, sel = dec
            assignment[n] = int(sel[assignment[a], assignment[b]])

    cost = inst.objective(assignment)
    if not np.isfinite(cost):
        raise Infeasible("no finite assignment found")
    return assignment, cost
