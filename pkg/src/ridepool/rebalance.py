"""Rebalancing of idle vehicles toward sampled historical demand.

Demand points are drawn uniformly from all request origins seen so far; each
point gets a floor-or-ceiling share of the idle fleet, and vehicles are
matched to points by a min-cost transportation solve. Successive shortest
paths with potentials keep the flow integral by construction, so the LP
relaxation argument never has to be invoked at runtime.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .roadnet import RoadNetwork


def sample_demand(history, n_unassigned: int, seed, cap: int = 500):
    """Uniform sample with replacement from the request origins seen so far;
    size = min(cap, n_unassigned). Empty history or no idle vehicles gives an
    empty sample (rebalancing skipped)."""
    if not history or n_unassigned <= 0:
        return ()
    size = min(cap, n_unassigned)
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng([int(seed)])
    picks = rng.integers(0, len(history), size=size)
    return tuple(history[int(k)] for k in picks)


def compute_allotments(num_vehicles: int, num_points: int):
    """Per-point vehicle quotas: floor or ceiling of the even split, ceilings
    to the lowest-indexed points, summing exactly to num_vehicles."""
    if num_points < 1:
        raise ContractError("allotments need at least one demand point")
    base, extra = divmod(num_vehicles, num_points)
    return [base + 1 if j < extra else base for j in range(num_points)]


@dataclass(frozen=True)
class RebalanceInstance:
    vehicle_ids: tuple       # idle vehicles, input order
    points: tuple            # sampled demand origins
    costs: np.ndarray        # (vehicles, points) travel seconds
    allotments: tuple        # capacity per point

    def __post_init__(self):
        nv, nd = len(self.vehicle_ids), len(self.points)
        if self.costs.shape != (nv, nd):
            raise ContractError(f"cost matrix {self.costs.shape} != ({nv}, {nd})")
        if len(self.allotments) != nd:
            raise ContractError("one allotment per demand point required")
        if sum(self.allotments) != nv:
            raise ContractError(
                f"allotments sum to {sum(self.allotments)}, need {nv}")
        lo, hi = nv // nd, -(-nv // nd)
        if any(a not in (lo, hi) for a in self.allotments):
            raise ContractError("allotments must be floor or ceil of the even split")
        if not np.isfinite(self.costs).all():
            raise ContractError("non-finite rebalance costs")


@dataclass(frozen=True)
class RebalancePlan:
    targets: dict            # vehicle id -> demand point location
    point_index: dict        # vehicle id -> column in the instance
    total_cost: float


def make_instance(vehicles, points, net: RoadNetwork) -> RebalanceInstance:
    nv, nd = len(vehicles), len(points)
    costs = np.zeros((nv, nd))
    for i, v in enumerate(vehicles):
        for j, p in enumerate(points):
            costs[i, j] = v.position_time_to(p, net)
    return RebalanceInstance(tuple(v.id for v in vehicles), tuple(points),
                             costs, tuple(compute_allotments(nv, nd)))


class _Flow:
    """Tiny min-cost flow on adjacency lists; unit augmentations via Dijkstra
    with Johnson potentials (all base costs nonnegative)."""

    def __init__(self, n):
        self.n = n
        self.adj = [[] for _ in range(n)]

    def add_edge(self, u, v, cap, cost):
        self.adj[u].append([v, cap, cost, len(self.adj[v])])
        self.adj[v].append([u, 0, -cost, len(self.adj[u]) - 1])

    def run(self, s, t, units):
        pot = [0.0] * self.n
        total = 0.0
        for _ in range(units):
            dist = [math.inf] * self.n
            prev = [None] * self.n     # (node, edge index)
            dist[s] = 0.0
            heap = [(0.0, s)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u] + 1e-12:
                    continue
                for k, (v, cap, cost, _) in enumerate(self.adj[u]):
                    if cap <= 0:
                        continue
                    nd = d + cost + pot[u] - pot[v]
                    if nd < dist[v] - 1e-12:
                        dist[v] = nd
                        prev[v] = (u, k)
                        heapq.heappush(heap, (nd, v))
            if not math.isfinite(dist[t]):
                raise ContractError("rebalance flow infeasible")
            for u in range(self.n):
                if math.isfinite(dist[u]):
                    pot[u] += dist[u]
            v = t
            while v != s:
                u, k = prev[v]
                edge = self.adj[u][k]
                edge[1] -= 1
                self.adj[v][edge[3]][1] += 1
                total += edge[2]
                v = u
        return total


def solve_rebalance(instance: RebalanceInstance) -> RebalancePlan:
    """Minimum-total-travel-time matching of idle vehicles to demand points
    under the per-point quotas. The unit-augmenting flow yields an integral
    assignment directly; integrality is asserted, not rounded."""
    nv, nd = len(instance.vehicle_ids), len(instance.points)
    s, t = 0, nv + nd + 1
    g = _Flow(nv + nd + 2)
    for i in range(nv):
        g.add_edge(s, 1 + i, 1, 0.0)
    for i in range(nv):
        for j in range(nd):
            g.add_edge(1 + i, 1 + nv + j, 1, float(instance.costs[i, j]))
    for j in range(nd):
        g.add_edge(1 + nv + j, t, int(instance.allotments[j]), 0.0)
    g.run(s, t, nv)

    targets = {}
    point_index = {}
    for i, vid in enumerate(instance.vehicle_ids):
        chosen = [e[0] - 1 - nv for e in g.adj[1 + i]
                  if 1 + nv <= e[0] < 1 + nv + nd and e[1] == 0]
        if len(chosen) != 1:
            raise ContractError(
                f"vehicle {vid}: non-integral rebalance flow ({len(chosen)} targets)")
        j = chosen[0]
        targets[vid] = instance.points[j]
        point_index[vid] = j
    loads = [0] * nd
    for j in point_index.values():
        loads[j] += 1
    for j in range(nd):
        if loads[j] > instance.allotments[j]:
            raise ContractError(f"demand point {j} over its allotment")
    total = 0.0
    for i in range(nv):
        total += float(instance.costs[i, point_index[instance.vehicle_ids[i]]])
    return RebalancePlan(targets, point_index, total)


def apply_plan(vehicles, plan: RebalancePlan):
    """Set rebalance targets on the planned vehicles; others pass through."""
    return tuple(replace(v, rebalance_target=plan.targets[v.id])
                 if v.id in plan.targets else v
                 for v in vehicles)
