"""Self-contained exactness checks runnable from the command line.

Each suite rebuilds the ground truth by brute force (joint enumeration,
route interleaving, finite differences, exhaustive matching) and compares the
production path against it. The test suite carries its own independent
implementations of the same ideas; this module exists so a deployed install
can re-verify itself without the dev tree.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .assign import AssignmentInstance, solve
from .demand import make_request
from .feasibility import EvalBudget, FeasibleAction, FeasibleSet, \
    generate_feasible_set
from .fleet import DROPOFF, PICKUP, Stop, VehicleState
from .rebalance import RebalanceInstance, compute_allotments, solve_rebalance
from .roadnet import grid_network
from .valuefn import backward_batch, build_batch, forward_batch, init_params


# ---------------------------------------------------------------- assignment

def random_assignment_instance(seed: int) -> AssignmentInstance:
    rng = np.random.default_rng([seed, 11])
    n_veh = int(rng.integers(1, 6))
    n_req = int(rng.integers(1, 7))
    sets = []
    scores = []
    for i in range(n_veh):
        actions = [FeasibleAction(i, frozenset(), (), 0.0)]
        sc = [float(rng.normal(0.0, 0.3))]
        n_act = int(rng.integers(0, 8))
        for _ in range(n_act):
            k = int(rng.integers(1, min(3, n_req) + 1))
            ids = frozenset(int(x) for x in rng.choice(n_req, size=k, replace=False))
            actions.append(FeasibleAction(i, ids, (), float(len(ids))))
            sc.append(float(len(ids) + rng.normal(0.0, 1.0)))
        sets.append(FeasibleSet(i, tuple(actions)))
        scores.append(tuple(sc))
    return AssignmentInstance(tuple(sets), tuple(scores))


def brute_force_assignment(instance: AssignmentInstance) -> float:
    """Max objective over all joint choices, request constraints enforced by
    filtering; summed in input vehicle order like the solver."""
    best = -math.inf
    ranges = [range(len(fs.actions)) for fs in instance.feasible_sets]
    for combo in itertools.product(*ranges):
        used = set()
        ok = True
        for fs, k in zip(instance.feasible_sets, combo):
            ids = fs.actions[k].request_ids
            if ids & used:
                ok = False
                break
            used |= ids
        if not ok:
            continue
        total = 0.0
        for i, k in enumerate(combo):
            total += instance.scores[i][k]
        if total > best:
            best = total
    return best


def check_assignment(n_instances: int = 100):
    t0 = time.perf_counter()
    for s in range(n_instances):
        inst = random_assignment_instance(s)
        got = solve(inst)
        want = brute_force_assignment(inst)
        if got.objective != want:
            return False, f"instance {s}: solver {got.objective!r} != brute {want!r}"
    return True, f"{n_instances} instances in {time.perf_counter() - t0:.2f}s"


# --------------------------------------------------------------- feasibility

def _interleavings(seqs):
    """All merges of the given sequences preserving each one's inner order."""
    seqs = [s for s in seqs if s]
    if not seqs:
        yield ()
        return
    for i, s in enumerate(seqs):
        head = s[0]
        rest = seqs[:i] + ([s[1:]] if len(s) > 1 else []) + seqs[i + 1:]
        for tail in _interleavings(rest):
            yield (head,) + tail


def _replay_route(v: VehicleState, route, net) -> bool:
    """Deadline, capacity, and pairing check written independently of the
    production route simulator."""
    clock = v.clock + v.time_to_node
    here = v.node
    carrying = set(v.onboard)
    for stop in route:
        clock += net.travel_time(here, stop.location)
        here = stop.location
        if clock > stop.deadline + 1e-9:
            return False
        if stop.kind == PICKUP:
            if stop.request_id in carrying:
                return False
            carrying.add(stop.request_id)
            if len(carrying) > v.capacity:
                return False
        else:
            if stop.request_id not in carrying:
                return False
            carrying.discard(stop.request_id)
    return True


def brute_force_groups(v: VehicleState, requests, net):
    """Every nonempty request group servable by some route that keeps the
    existing stop order and each pickup before its dropoff.  Group size is
    bounded by the seats not already spoken for."""
    feasible = set()
    cap_left = v.capacity - v.open_requests()
    for k in range(1, min(len(requests), cap_left) + 1):
        for combo in itertools.combinations(requests, k):
            pairs = [(Stop(r.origin, PICKUP, r.id, r.pickup_deadline),
                      Stop(r.destination, DROPOFF, r.id, r.dropoff_deadline))
                     for r in combo]
            seqs = [tuple(v.trajectory)] + [tuple(p) for p in pairs]
            for route in _interleavings(seqs):
                if _replay_route(v, route, net):
                    feasible.add(frozenset(r.id for r in combo))
                    break
    return feasible


def random_micro_instance(seed: int):
    rng = np.random.default_rng([seed, 23])
    rows = int(rng.integers(2, 4))
    cols = int(rng.integers(2, 4))
    net = grid_network(rows, cols, edge_seconds=60.0)
    tau = float(rng.choice([180.0, 300.0, 420.0]))
    lam = 2.0 * tau
    capacity = int(rng.integers(1, 4))
    locs = list(net.locations)
    v = VehicleState(id=0, capacity=capacity, node=int(rng.choice(locs)),
                     time_to_node=float(rng.choice([0.0, 30.0])), clock=0.0,
                     trajectory=(), onboard=frozenset())
    n_req = int(rng.integers(1, 4))
    reqs = []
    for rid in range(n_req):
        o = int(rng.choice(locs))
        d = int(rng.choice(locs))
        while d == o:
            d = int(rng.choice(locs))
        reqs.append(make_request(rid, o, d, 0, net, delta=60.0, tau=tau, lam=lam))
    return net, v, tuple(reqs)


def check_feasibility(n_instances: int = 200):
    t0 = time.perf_counter()
    for s in range(n_instances):
        net, v, reqs = random_micro_instance(s)
        fs = generate_feasible_set(v, reqs, net, eval_cap=None, exhaustive=True)
        got = {a.request_ids for a in fs.actions if a.request_ids}
        for a in fs.actions:
            if not a.is_null and not _replay_route(v, a.route, net):
                return False, f"instance {s}: unsound action {sorted(a.request_ids)}"
        want = brute_force_groups(v, reqs, net)
        if got != want:
            return False, (f"instance {s}: groups {sorted(map(sorted, got))} "
                           f"!= {sorted(map(sorted, want))}")
    return True, f"{n_instances} instances in {time.perf_counter() - t0:.2f}s"


# ----------------------------------------------------------------- gradients

def toy_gradient_case(seed: int):
    rng = np.random.default_rng([seed, 31])
    emb_dim = 3
    params = init_params(emb_dim, hidden=4, head1=5, head2=4, seed=seed)
    # random nonzero h0 so its gradient is exercised too
    params["h0"] = rng.normal(0.0, 0.5, size=params["h0"].shape)
    feats = []
    for _ in range(3):
        L = int(rng.integers(0, 4))
        from .valuefn import StateFeatures
        feats.append(StateFeatures(
            rng.normal(0.0, 1.0, size=(L, emb_dim)),
            rng.uniform(0.0, 1.0, size=L),
            rng.normal(0.0, 1.0, size=emb_dim + 3)))
    y = rng.normal(0.0, 1.0, size=3)
    w = rng.uniform(0.5, 1.5, size=3)
    return params, feats, y, w


def _loss(params, X, mask, C, y, w):
    v, _ = forward_batch(params, X, mask, C)
    return float(np.mean(w * (v - y) ** 2))


def _loss_ld(params, X, mask, C, y, w):
    """Same loss, evaluated in extended precision.  Double-precision FD noise
    (~5e-12 at h=1e-5) swamps gradient entries of 1e-7 magnitude, so the
    difference quotient needs a lower noise floor than float64 offers."""
    n, L, _ = X.shape
    h = np.tile(params["h0"], (n, 1))
    one = np.longdouble(1.0)
    for t in range(L):
        x = X[:, t, :]
        m = mask[:, t:t + 1]
        z = one / (one + np.exp(-(x @ params["Wz"].T + h @ params["Uz"].T + params["bz"])))
        r = one / (one + np.exp(-(x @ params["Wr"].T + h @ params["Ur"].T + params["br"])))
        hti = np.tanh(x @ params["Wh"].T + (r * h) @ params["Uh"].T + params["bh"])
        hnew = (one - z) * h + z * hti
        h = m * hnew + (one - m) * h
    u = np.concatenate([h, C], axis=1)
    y1 = np.tanh(u @ params["W1"].T + params["b1"])
    y2 = np.tanh(y1 @ params["W2"].T + params["b2"])
    v = (y2 @ params["w3"].T + params["b3"])[:, 0]
    return np.mean(w * (v - y) ** 2)


def gradient_max_rel_err(params, feats, y, w) -> float:
    X, mask, C = build_batch(feats)
    n = len(feats)
    v, cache = forward_batch(params, X, mask, C)
    dv = 2.0 * w * (v - y) / n
    analytic = backward_batch(params, cache, dv)
    P = {k: a.astype(np.longdouble) for k, a in params.items()}
    Xl = X.astype(np.longdouble)
    ml = mask.astype(np.longdouble)
    Cl = C.astype(np.longdouble)
    yl = y.astype(np.longdouble)
    wl = w.astype(np.longdouble)
    # replica must track the production forward at the unperturbed point
    base = float(_loss_ld(P, Xl, ml, Cl, yl, wl))
    ref = _loss(params, X, mask, C, y, w)
    if abs(base - ref) > 1e-10 * max(1.0, abs(ref)):
        raise AssertionError(f"precise-loss replica drifted: {base} vs {ref}")
    h = np.longdouble(1e-5)
    worst = 0.0
    for name, arr in P.items():
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            lp = _loss_ld(P, Xl, ml, Cl, yl, wl)
            flat[idx] = keep - h
            lm = _loss_ld(P, Xl, ml, Cl, yl, wl)
            flat[idx] = keep
            fd = float((lp - lm) / (2.0 * h))
            denom = max(abs(fd), abs(ga[idx]), 1e-8)
            worst = max(worst, abs(fd - ga[idx]) / denom)
    return worst


def check_gradients(n_cases: int = 10, tol: float = 1e-4):
    t0 = time.perf_counter()
    worst = 0.0
    for s in range(n_cases):
        params, feats, y, w = toy_gradient_case(s)
        err = gradient_max_rel_err(params, feats, y, w)
        worst = max(worst, err)
        if err >= tol:
            return False, f"case {s}: max relative error {err:.2e} >= {tol}"
    return True, (f"{n_cases} cases, worst {worst:.2e} "
                  f"in {time.perf_counter() - t0:.2f}s")


# ---------------------------------------------------------------- rebalance

def random_rebalance_instance(seed: int) -> RebalanceInstance:
    rng = np.random.default_rng([seed, 41])
    nv = int(rng.integers(1, 7))
    nd = int(rng.integers(1, 7))
    costs = rng.integers(1, 50, size=(nv, nd)).astype(float) * 60.0
    return RebalanceInstance(tuple(range(nv)), tuple(range(100, 100 + nd)),
                             costs, tuple(compute_allotments(nv, nd)))


def brute_force_rebalance(instance: RebalanceInstance) -> float:
    """Min cost over all quota-respecting assignments, via permutations of the
    point slots expanded by allotment."""
    slots = []
    for j, a in enumerate(instance.allotments):
        slots.extend([j] * a)
    nv = len(instance.vehicle_ids)
    best = math.inf
    seen = set()
    for perm in itertools.permutations(slots, nv):
        if perm in seen:
            continue
        seen.add(perm)
        total = 0.0
        for i in range(nv):
            total += float(instance.costs[i, perm[i]])
        if total < best:
            best = total
    return best


def check_rebalance(n_instances: int = 100):
    t0 = time.perf_counter()
    for s in range(n_instances):
        inst = random_rebalance_instance(s)
        plan = solve_rebalance(inst)
        want = brute_force_rebalance(inst)
        if plan.total_cost != want:
            return False, f"instance {s}: cost {plan.total_cost!r} != {want!r}"
    return True, f"{n_instances} instances in {time.perf_counter() - t0:.2f}s"


SUITES = [
    ("assignment exactness", check_assignment),
    ("feasibility soundness and completeness", check_feasibility),
    ("gradient correctness", check_gradients),
    ("rebalance optimality", check_rebalance),
]


def run_all(verbose: bool = False) -> int:
    failures = 0
    for name, fn in SUITES:
        ok, detail = fn()
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failures += 1
    return failures
