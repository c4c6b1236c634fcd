"""Exact solver for the per-epoch assignment problem: pick one action per
vehicle maximizing total score, each request appearing in at most one chosen
action. Scores are immediate reward plus any future-value estimate; the solver
does not care how they were produced.

Branch and bound with the request-constraint-relaxed optimum as the bound.
Two passes: a value search for the optimal objective, then a lexicographic
construction that fixes, vehicle by vehicle in input order, the lowest action
index still compatible with optimality. Leaf objectives are always summed in
input vehicle order so repeated solves and reference enumerations agree bit
for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import ContractError, SolverLimitError
from .feasibility import FeasibleAction, FeasibleSet

# pruning slack: bounds are summed in a different order than leaf objectives,
# so exact comparisons would occasionally prune a true optimum
PRUNE_EPS = 1e-9


@dataclass(frozen=True)
class AssignmentInstance:
    feasible_sets: tuple[FeasibleSet, ...]
    scores: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.feasible_sets) != len(self.scores):
            raise ContractError("scores and feasible sets disagree on fleet size")
        for fs, sc in zip(self.feasible_sets, self.scores):
            if len(fs.actions) != len(sc):
                raise ContractError(
                    f"vehicle {fs.vehicle_id}: {len(sc)} scores for {len(fs.actions)} actions")
            if not any(a.is_null for a in fs.actions):
                raise ContractError(f"vehicle {fs.vehicle_id} has no null action")
            if not all(math.isfinite(x) for x in sc):
                raise ContractError(f"vehicle {fs.vehicle_id} has non-finite scores")

    @property
    def n_vehicles(self):
        return len(self.feasible_sets)


@dataclass(frozen=True)
class Assignment:
    action_indices: tuple[int, ...]   # one per vehicle, input order
    objective: float
    nodes: int
    fallback: bool = False

    def chosen(self, instance: AssignmentInstance):
        return tuple(fs.actions[k]
                     for fs, k in zip(instance.feasible_sets, self.action_indices))


def build_instance(feasible_sets, scores) -> AssignmentInstance:
    return AssignmentInstance(tuple(feasible_sets),
                              tuple(tuple(float(x) for x in sc) for sc in scores))


def _objective(scores, choice) -> float:
    total = 0.0
    for i in range(len(choice)):
        total += scores[i][choice[i]]
    return total


class _Nodes:
    __slots__ = ("count", "limit")

    def __init__(self, limit):
        self.count = 0
        self.limit = math.inf if limit is None else limit

    def bump(self):
        self.count += 1
        if self.count > self.limit:
            raise _LimitHit


class _LimitHit(Exception):
    pass


def relaxation_bound(instance: AssignmentInstance, fixed) -> float:
    """Upper bound on any completion of a partial assignment. `fixed` is a
    sequence of (vehicle_index, action_index) pairs; remaining vehicles
    contribute their best score among actions not conflicting with the fixed
    requests. Ignores conflicts among the remaining vehicles, hence an upper
    bound."""
    used = set()
    fixed_map = dict(fixed)
    total = 0.0
    for i, a in fixed_map.items():
        used |= instance.feasible_sets[i].actions[a].request_ids
    for i, a in sorted(fixed_map.items()):
        total += instance.scores[i][a]
    for i in range(instance.n_vehicles):
        if i in fixed_map:
            continue
        fs = instance.feasible_sets[i]
        total += max(instance.scores[i][k] for k in range(len(fs.actions))
                     if fs.actions[k].request_ids.isdisjoint(used))
    return total


def solve(instance: AssignmentInstance, node_limit=None, on_limit="error",
          warm_start=None) -> Assignment:
    """Provably optimal assignment; ties resolved to the lexicographically
    smallest action-index vector. `node_limit` caps search nodes; exceeding it
    raises SolverLimitError (on_limit="error") or falls back to a logged
    greedy completion (on_limit="greedy"). `warm_start` may carry a previous
    action-index vector for the same action structure; if it is still
    conflict-free it seeds the incumbent, otherwise it is ignored."""
    n = instance.n_vehicles
    if n == 0:
        return Assignment((), 0.0, 0)
    scores = instance.scores
    # request ids -> bits; conflict tests become integer ands
    all_ids = sorted({rid for fs in instance.feasible_sets
                      for a in fs.actions for rid in a.request_ids})
    bit = {rid: 1 << j for j, rid in enumerate(all_ids)}
    masks = []
    for fs in instance.feasible_sets:
        row = []
        for a in fs.actions:
            m = 0
            for rid in a.request_ids:
                m |= bit[rid]
            row.append(m)
        masks.append(row)
    null_idx = [next(k for k, a in enumerate(fs.actions) if a.is_null)
                for fs in instance.feasible_sets]
    # branch on vehicles with the most to lose first; tightens bounds early
    branch_key = lambda i: (-(max(scores[i]) - scores[i][null_idx[i]]), i)
    order = sorted(range(n), key=branch_key)
    children = [sorted(range(len(scores[i])), key=lambda k: (-scores[i][k], k))
                for i in range(n)]
    ord_scores = [[scores[i][k] for k in children[i]] for i in range(n)]
    ord_masks = [[masks[i][k] for k in children[i]] for i in range(n)]
    vmax = [ord_scores[i][0] for i in range(n)]

    # vehicles sharing no request, directly or through others, are independent;
    # solve per connected component
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner = {}
    for i, fs in enumerate(instance.feasible_sets):
        for a in fs.actions:
            for rid in a.request_ids:
                if rid in owner:
                    ra, rb = find(i), find(owner[rid])
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
                else:
                    owner[rid] = i
    comps = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(i)

    warm_ok = False
    if warm_start is not None and len(warm_start) == n:
        used_w = 0
        ok = True
        for i in range(n):
            k = warm_start[i]
            if not 0 <= k < len(scores[i]):
                ok = False
                break
            m = masks[i][k]
            if m & used_w:
                ok = False
                break
            used_w |= m
        warm_ok = ok

    nodes = _Nodes(node_limit)
    choice = [0] * n

    def run_component(members):
        mcount = len(members)
        if mcount == 1:
            # no competition: best score, lowest index on ties
            choice[members[0]] = children[members[0]][0]
            return
        corder = sorted(members, key=branch_key)
        # conflict-free score caps as suffix sums, one per visit order; a
        # failed cap test skips or ends the per-vehicle disjoint scans
        sfxb = [0.0] * (mcount + 1)
        sfxi = [0.0] * (mcount + 1)
        for p in range(mcount - 1, -1, -1):
            sfxb[p] = sfxb[p + 1] + vmax[corder[p]]
            sfxi[p] = sfxi[p + 1] + vmax[members[p]]
        best_obj = -math.inf
        best_choice = None
        if warm_ok:
            t = 0.0
            for i in members:
                t += scores[i][warm_start[i]]
            best_obj = t
            best_choice = [warm_start[i] for i in members]

        def leaf_obj():
            t = 0.0
            for i in members:
                t += scores[i][choice[i]]
            return t

        def incumbent_dfs(pos, used, acc):
            nonlocal best_obj, best_choice
            if pos == mcount:
                obj = leaf_obj()
                if obj > best_obj:
                    best_obj = obj
                    best_choice = [choice[i] for i in members]
                return
            i = corder[pos]
            ch = children[i]
            osc = ord_scores[i]
            oms = ord_masks[i]
            for j in range(len(ch)):
                m = oms[j]
                if m & used:
                    continue
                nodes.bump()
                acc2 = acc + osc[j]
                used2 = used | m
                if best_choice is not None:
                    limit = best_obj + PRUNE_EPS
                    bound = acc2
                    live = True
                    for p in range(pos + 1, mcount):
                        if bound + sfxb[p] <= limit:
                            live = False
                            break
                        ip = corder[p]
                        for s2, m2 in zip(ord_scores[ip], ord_masks[ip]):
                            if not (m2 & used2):
                                bound += s2
                                break
                    if not live or bound <= limit:
                        continue
                choice[i] = ch[j]
                incumbent_dfs(pos + 1, used2, acc2)

        incumbent_dfs(0, 0, 0.0)
        target = best_obj

        def reaches(start, used, acc):
            """Any joint choice for members[start:], disjoint from used, with
            acc + their ascending-member sum >= target - PRUNE_EPS?"""
            if start == mcount:
                return acc >= target - PRUNE_EPS
            bound = acc
            for p in range(start, mcount):
                if bound + sfxi[p] < target - PRUNE_EPS:
                    return False
                ip = members[p]
                for s2, m2 in zip(ord_scores[ip], ord_masks[ip]):
                    if not (m2 & used):
                        bound += s2
                        break
            if bound < target - PRUNE_EPS:
                return False
            i = members[start]
            ch = children[i]
            osc = ord_scores[i]
            oms = ord_masks[i]
            for j in range(len(ch)):
                m = oms[j]
                if m & used:
                    continue
                nodes.bump()
                if reaches(start + 1, used | m, acc + osc[j]):
                    choice[i] = ch[j]
                    return True
            return False

        # rebuild lexicographically smallest optimal vector, ascending members
        used = 0
        acc = 0.0
        for p in range(mcount):
            i = members[p]
            for k in range(len(scores[i])):
                m = masks[i][k]
                if m & used:
                    continue
                nodes.bump()
                if reaches(p + 1, used | m, acc + scores[i][k]):
                    choice[i] = k
                    used |= m
                    acc += scores[i][k]
                    break
            else:
                raise ContractError("optimal value unreachable during reconstruction")

    try:
        for root in sorted(comps):
            run_component(comps[root])
        return Assignment(tuple(choice), _objective(scores, choice), nodes.count)
    except _LimitHit:
        if on_limit == "error":
            raise SolverLimitError(
                f"assignment search exceeded {node_limit} nodes") from None
        return _greedy(instance, order, children, masks, nodes.count)


def _greedy(instance, order, children, masks, node_count) -> Assignment:
    """Fallback when the search hits its node limit: vehicles in branching
    order take their best non-conflicting action."""
    n = instance.n_vehicles
    scores = instance.scores
    choice = [0] * n
    used = 0
    for i in order:
        for k in children[i]:
            if not (masks[i][k] & used):
                choice[i] = k
                used |= masks[i][k]
                break
    return Assignment(tuple(choice), _objective(scores, choice),
                      node_count, fallback=True)


def validate_assignment(instance: AssignmentInstance, asg: Assignment) -> None:
    """Independent feasibility check of a solver result."""
    if len(asg.action_indices) != instance.n_vehicles:
        raise ContractError("assignment length mismatch")
    seen = set()
    for fs, k in zip(instance.feasible_sets, asg.action_indices):
        if not 0 <= k < len(fs.actions):
            raise ContractError(f"vehicle {fs.vehicle_id}: action index {k} out of range")
        ids = fs.actions[k].request_ids
        if ids & seen:
            raise ContractError(f"request assigned twice: {sorted(ids & seen)}")
        seen |= ids
    obj = _objective(instance.scores, asg.action_indices)
    if obj != asg.objective:
        raise ContractError("stored objective does not match recomputation")


def instance_to_json(instance: AssignmentInstance) -> str:
    """Scores-and-request-sets dump for regression fixtures; routes are not
    preserved (the solver never reads them)."""
    payload = []
    for fs, sc in zip(instance.feasible_sets, instance.scores):
        payload.append({
            "vehicle_id": fs.vehicle_id,
            "actions": [{"requests": sorted(a.request_ids), "score": s}
                        for a, s in zip(fs.actions, sc)],
        })
    return json.dumps({"vehicles": payload}, sort_keys=True)


def instance_from_json(text: str) -> AssignmentInstance:
    data = json.loads(text)
    sets = []
    scores = []
    for ventry in data["vehicles"]:
        vid = ventry["vehicle_id"]
        acts = tuple(FeasibleAction(vid, frozenset(a["requests"]), (),
                                    float(len(a["requests"])))
                     for a in ventry["actions"])
        sets.append(FeasibleSet(vid, acts))
        scores.append(tuple(float(a["score"]) for a in ventry["actions"]))
    return AssignmentInstance(tuple(sets), tuple(scores))
