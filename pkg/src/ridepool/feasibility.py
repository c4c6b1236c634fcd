"""Per-vehicle feasible action generation: which groups of waiting requests a
vehicle can absorb into its route, and the route realizing each group.

Insertion-only search: new pickup/dropoff stops are slotted into the existing
stop sequence without reordering it. Groups grow breadth-first (singletons,
then pairs built from feasible singletons, and so on) under a shared
per-vehicle evaluation budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .demand import Request
from .fleet import DROPOFF, PICKUP, Stop, VehicleState
from .roadnet import RoadNetwork

# slack for multi-leg float accumulation; boundary-equal arrivals stay feasible
FEAS_EPS = 1e-9


@dataclass(frozen=True)
class FeasibleAction:
    vehicle_id: int
    request_ids: frozenset
    route: tuple[Stop, ...]
    immediate_reward: float

    @property
    def is_null(self) -> bool:
        return not self.request_ids


@dataclass(frozen=True)
class FeasibleSet:
    vehicle_id: int
    actions: tuple[FeasibleAction, ...]   # actions[0] is always the null action

    def __len__(self):
        return len(self.actions)


class EvalBudget:
    """Shared feasibility-evaluation counter for one vehicle in one epoch.
    Every candidate route simulated costs one unit."""

    def __init__(self, cap=150):
        self.cap = math.inf if cap is None else cap
        self.used = 0
        self.budget_stops = 0       # insertions abandoned with positions unevaluated
        self.constraint_fails = 0   # insertions where every position violated a constraint

    @property
    def exhausted(self) -> bool:
        return self.used >= self.cap

    def take(self) -> bool:
        if self.used >= self.cap:
            return False
        self.used += 1
        return True


def route_completion(v: VehicleState, route, net: RoadNetwork):
    """Simulate a candidate route from the vehicle's current position.
    Returns (feasible, completion_time); infeasible routes report the time at
    which the first violation occurred."""
    t = v.clock + v.time_to_node
    pos = v.node
    occ = len(v.onboard)
    for stop in route:
        t += net.travel_time(pos, stop.location)
        pos = stop.location
        if t > stop.deadline + FEAS_EPS:
            return False, t
        if stop.kind == PICKUP:
            occ += 1
            if occ > v.capacity:
                return False, t
        else:
            occ -= 1
    return True, t


def prune_candidates(requests, vehicles, net: RoadNetwork, tau: float, k: int = 30):
    """For each request, the k vehicles nearest its origin by travel time
    among those able to reach the origin by the pickup deadline. Returns
    {request_id: tuple of vehicle ids}; an empty tuple means the request
    cannot be picked up in time by anyone."""
    out = {}
    for r in requests:
        reach = []
        for v in vehicles:
            t = v.position_time_to(r.origin, net)
            if v.clock + t <= r.pickup_deadline + FEAS_EPS:
                reach.append((t, v.id))
        reach.sort()
        out[r.id] = tuple(vid for _, vid in reach[:k])
    return out


def invert_candidates(cand_map, requests, vehicles):
    """Turn {request_id: vehicle ids} into {vehicle_id: [Request]} with
    requests in id order."""
    by_id = {r.id: r for r in requests}
    out = {v.id: [] for v in vehicles}
    for rid in sorted(cand_map):
        for vid in cand_map[rid]:
            out[vid].append(by_id[rid])
    return out


def try_insert(v: VehicleState, r: Request, net: RoadNetwork, budget: EvalBudget,
               base_route=None, collect_all: bool = False):
    """Evaluate every (pickup_slot, dropoff_slot) insertion of r into the base
    stop sequence (the vehicle's current trajectory unless overridden),
    keeping existing stop order. Returns the minimum-completion-time feasible
    action, or None; ties break on the lowest (i, j) pair. With collect_all,
    returns the list of all feasible routes instead (test support)."""
    base = tuple(v.trajectory if base_route is None else base_route)
    n = len(base)
    pick = Stop(r.origin, PICKUP, r.id, r.pickup_deadline)
    drop = Stop(r.destination, DROPOFF, r.id, r.dropoff_deadline)
    best = None
    best_key = None
    found = []
    stopped = False
    for i in range(n + 1):
        for j in range(i, n + 1):
            if not budget.take():
                stopped = True
                break
            cand = base[:i] + (pick,) + base[i:j] + (drop,) + base[j:]
            ok, completion = route_completion(v, cand, net)
            if not ok:
                continue
            if collect_all:
                found.append(cand)
            key = (completion, i, j)
            if best_key is None or key < best_key:
                best, best_key = cand, key
        if stopped:
            break
    if best is None:
        if stopped:
            budget.budget_stops += 1
        else:
            budget.constraint_fails += 1
        return [] if collect_all else None
    if collect_all:
        return found
    return FeasibleAction(v.id, frozenset((r.id,)), best, 1.0)


def _route_key(route):
    return tuple((s.location, s.kind, s.request_id) for s in route)


def _best_route(v, routes, net):
    keyed = [(route_completion(v, rt, net)[1], _route_key(rt), rt) for rt in routes]
    keyed.sort(key=lambda x: (x[0], x[1]))
    return keyed[0][2]


def generate_feasible_set(v: VehicleState, assignable_requests, net: RoadNetwork,
                          eval_cap=150, exhaustive: bool = False,
                          budget: EvalBudget | None = None) -> FeasibleSet:
    """Build the vehicle's action set: the null action plus one action per
    feasible request group, each carrying its best realizing route.

    Groups grow breadth-first in request-id order; a group of size m+1 is
    tried only if its size-m prefix group was feasible and the new request was
    feasible alone. Growth stops at the remaining seat count or when the
    evaluation budget runs out. In exhaustive mode (tests) every feasible
    route of every group is kept as an extension base, which makes the group
    set complete over order-preserving routes.
    """
    if budget is None:
        budget = EvalBudget(eval_cap)
    null = FeasibleAction(v.id, frozenset(), tuple(v.trajectory), 0.0)
    actions = [null]
    reqs = sorted(assignable_requests, key=lambda r: r.id)
    cap_left = v.capacity - v.open_requests()
    if not reqs or cap_left <= 0:
        return FeasibleSet(v.id, tuple(actions))

    # level 1: singletons
    level = []   # (ids tuple sorted, routes tuple)
    for r in reqs:
        if budget.exhausted:
            break
        if exhaustive:
            routes = try_insert(v, r, net, budget, collect_all=True)
            if routes:
                seen = {}
                for rt in routes:
                    seen.setdefault(_route_key(rt), rt)
                level.append(((r.id,), tuple(seen.values())))
        else:
            act = try_insert(v, r, net, budget)
            if act is not None:
                level.append(((r.id,), (act.route,)))
    singles_ok = {ids[0] for ids, _ in level}
    by_id = {r.id: r for r in reqs}
    for ids, routes in level:
        actions.append(FeasibleAction(v.id, frozenset(ids),
                                      _best_route(v, routes, net), float(len(ids))))

    size = 1
    while level and size < cap_left:
        nxt = []
        for ids, routes in level:
            for rid in sorted(singles_ok):
                if rid <= ids[-1]:
                    continue
                if budget.exhausted:
                    break
                r = by_id[rid]
                new_routes = []
                for base in routes:
                    if budget.exhausted:
                        break
                    if exhaustive:
                        new_routes.extend(try_insert(v, r, net, budget,
                                                     base_route=base, collect_all=True))
                    else:
                        act = try_insert(v, r, net, budget, base_route=base)
                        if act is not None:
                            new_routes.append(act.route)
                if new_routes:
                    seen = {}
                    for rt in new_routes:
                        seen.setdefault(_route_key(rt), rt)
                    group = ids + (rid,)
                    kept = tuple(seen.values())
                    nxt.append((group, kept))
                    actions.append(FeasibleAction(v.id, frozenset(group),
                                                  _best_route(v, kept, net),
                                                  float(len(group))))
        level = nxt
        size += 1
    return FeasibleSet(v.id, tuple(actions))


def revalidate_action(v: VehicleState, action: FeasibleAction, net: RoadNetwork) -> bool:
    """Independent post-hoc check used by the simulator in strict mode."""
    if action.is_null:
        return True
    ok, _ = route_completion(v, action.route, net)
    if not ok:
        return False
    # every newly added request contributes one pickup before one dropoff
    for rid in action.request_ids:
        picks = [k for k, s in enumerate(action.route)
                 if s.request_id == rid and s.kind == PICKUP]
        drops = [k for k, s in enumerate(action.route)
                 if s.request_id == rid and s.kind == DROPOFF]
        if len(picks) != 1 or len(drops) != 1 or picks[0] > drops[0]:
            return False
    return True
