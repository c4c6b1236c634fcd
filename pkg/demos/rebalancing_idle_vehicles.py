"""
Rebalancing idle vehicles toward historical demand
==================================================

Vehicles with nothing to do should not sit where their last dropoff happened
to leave them. Idle vehicles are matched to a sample of past request origins
by a minimum-cost flow, spreading the fleet over the places demand has come
from before.
"""

import numpy as np

from ridepool.fleet import VehicleState
from ridepool.rebalance import (apply_plan, compute_allotments, make_instance,
                                sample_demand, solve_rebalance)
from ridepool.roadnet import grid_network

net = grid_network(8, 8, edge_seconds=60.0)
rng = np.random.default_rng(3)


def idle(vid, node):
    return VehicleState(id=vid, capacity=4, node=node, time_to_node=0.0,
                        clock=0.0, trajectory=(), onboard=frozenset())


# five idle vehicles clustered in the top-left corner after morning dropoffs
fleet = [idle(i, n) for i, n in enumerate([0, 1, 8, 9, 2])]

# request origins so far, heavily skewed toward the bottom-right quadrant
history = [int(rng.choice([54, 55, 62, 63, 45, 53, 61, 36]))
           for _ in range(200)]

# sample as many target points as there are idle vehicles
points = sample_demand(history, len(fleet), seed=rng)
print("sampled demand points:", list(points))

# every point gets an even share of the fleet (floors and ceilings)
print("allotments:", compute_allotments(len(fleet), len(points)))

inst = make_instance(fleet, points, net)
plan = solve_rebalance(inst)
print(f"min-cost plan, total travel {plan.total_cost:.0f} s")
for v in fleet:
    print(f"  vehicle {v.id} at {v.node} -> {plan.targets[v.id]}")

# a greedy alternative for contrast: everyone picks their nearest point
greedy = sum(min(net.travel_time(v.node, p) for p in points) for v in fleet)
print(f"greedy nearest-point total would be {greedy:.0f} s "
      f"(ignores crowding, may pile onto one point)")

# apply_plan records each vehicle's target; motion happens in the simulator
moved = apply_plan(fleet, plan)
print("targets applied:", {v.id: v.rebalance_target for v in moved})
