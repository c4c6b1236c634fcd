"""
One decision epoch: feasibility, scoring, exact assignment
==========================================================

A batch of requests arrives, each vehicle enumerates the request groups it
could serve without breaking anyone's deadline, and a branch-and-bound solver
picks the best conflict-free combination.
"""

from ridepool.assign import build_instance, solve
from ridepool.demand import make_request
from ridepool.feasibility import generate_feasible_set
from ridepool.fleet import PICKUP, VehicleState
from ridepool.roadnet import grid_network

net = grid_network(5, 5, edge_seconds=60.0)

# three empty vehicles parked at different corners
fleet = [VehicleState(id=i, capacity=2, node=n, time_to_node=0.0, clock=0.0,
                      trajectory=(), onboard=frozenset())
         for i, n in enumerate([0, 4, 20])]

# four requests; pickup within 300 s, detour allowance 600 s past direct
reqs = [make_request(rid, o, d, epoch=0, net=net, delta=60.0, tau=300.0, lam=600.0)
        for rid, (o, d) in enumerate([(1, 13), (3, 17), (9, 21), (22, 8)])]
for r in reqs:
    print(f"request {r.id}: {r.origin} -> {r.destination}, "
          f"pickup by {r.pickup_deadline:.0f} s")

# each vehicle builds its feasible action set: the null action plus every
# servable group of requests, with the best insertion route attached
sets = [generate_feasible_set(v, reqs, net) for v in fleet]
for v, fs in zip(fleet, sets):
    groups = [sorted(a.request_ids) for a in fs.actions if a.request_ids]
    print(f"vehicle {v.id} at node {v.node}: {len(fs.actions)} actions, "
          f"groups {groups}")

# myopic scores: one point per request served, nothing for the future
scores = [tuple(a.immediate_reward for a in fs.actions) for fs in sets]
asg = solve(build_instance(sets, scores))

print(f"\noptimal objective: {asg.objective:.0f} requests served "
      f"({asg.nodes} search nodes)")
for v, fs, k in zip(fleet, sets, asg.action_indices):
    a = fs.actions[k]
    route = " -> ".join(f"{'P' if s.kind == PICKUP else 'D'}{s.request_id}@{s.location}"
                        for s in a.route)
    print(f"vehicle {v.id}: {sorted(a.request_ids) or 'idle'}  {route or ''}")
