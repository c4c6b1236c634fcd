"""Vehicle state and the deterministic transitions: applying a chosen action
(route replacement) and simulating motion between decision epochs.

Positions are (next_node, seconds_to_reach_it); a vehicle handed a new route
mid-edge finishes its current edge before rerouting. Stop consumption is
timestamped continuously inside the epoch, so delay checks are exact rather
than rounded to epoch boundaries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .demand import EpochBatch
from .errors import ContractError, SimulationIntegrityError
from .roadnet import RoadNetwork

PICKUP = "pickup"
DROPOFF = "dropoff"

# absorbs float drift between table lookups and edge-by-edge accumulation
DEADLINE_EPS = 1e-6


@dataclass(frozen=True)
class Stop:
    location: int
    kind: str               # PICKUP | DROPOFF
    request_id: int
    deadline: float         # wall seconds; visit at most this late


@dataclass(frozen=True)
class VehicleState:
    id: int
    capacity: int
    node: int               # node the vehicle is at, or about to reach
    time_to_node: float     # 0 when at `node`
    clock: float            # wall seconds, equals epoch boundary between epochs
    trajectory: tuple[Stop, ...]
    onboard: frozenset
    rebalance_target: int | None = None

    def open_requests(self) -> int:
        """Accepted requests not yet dropped off (onboard plus pending pickups)."""
        return len(self.onboard) + sum(1 for s in self.trajectory if s.kind == PICKUP)

    def position_time_to(self, loc: int, net: RoadNetwork) -> float:
        """Travel seconds from the current (possibly mid-edge) position to loc."""
        return self.time_to_node + net.travel_time(self.node, loc)


@dataclass(frozen=True)
class SystemState:
    epoch: int
    vehicles: tuple[VehicleState, ...]
    pending: EpochBatch


@dataclass(frozen=True)
class PostDecisionState:
    """Fleet state right after route assignment; the demand component is
    empty by construction (unassigned requests are lost)."""
    epoch: int
    vehicles: tuple[VehicleState, ...]


@dataclass(frozen=True)
class StopEvent:
    request_id: int
    kind: str
    time: float
    vehicle_id: int
    location: int


def place_fleet(net: RoadNetwork, size: int, capacity: int, seed):
    """Uniform random initial placement over the network's locations. `seed`
    may be an int or a tuple of ints (stream key)."""
    rng = np.random.default_rng(list(seed) if isinstance(seed, (tuple, list)) else [seed])
    locs = rng.choice(np.array(net.locations), size=size)
    return tuple(
        VehicleState(id=i, capacity=capacity, node=int(locs[i]), time_to_node=0.0,
                     clock=0.0, trajectory=(), onboard=frozenset())
        for i in range(size)
    )


def apply_action(v: VehicleState, action, net: RoadNetwork | None = None) -> VehicleState:
    """Replace the vehicle's route with the action's route. Pure; the null
    action returns the state unchanged (the vehicle keeps any rebalance
    target it was given). A real assignment clears the rebalance target."""
    if not action.request_ids:
        return v
    if action.vehicle_id != v.id:
        raise ContractError(
            f"action built for vehicle {action.vehicle_id} applied to {v.id}")
    if net is not None and action.route:
        first = action.route[0].location
        if first not in net or not np.isfinite(net.travel_time(v.node, first)):
            raise ContractError(
                f"vehicle {v.id}: route head {first} unreachable from node {v.node}")
    return replace(v, trajectory=tuple(action.route), rebalance_target=None)


def advance_vehicle(v: VehicleState, delta: float, net: RoadNetwork):
    """Move one vehicle delta seconds along its trajectory's shortest-path
    legs, consuming reached stops. Idle vehicles hold position unless a
    rebalance target is set. Returns (new_state, stop_events)."""
    eps = 1e-9
    events = []
    traj = list(v.trajectory)
    onboard = set(v.onboard)
    target = v.rebalance_target
    node = v.node
    remaining = float(v.time_to_node)
    now = v.clock
    budget = float(delta)

    while True:
        if 0.0 < remaining <= eps:
            remaining = 0.0
        if remaining == 0.0:
            # at a node: everything reachable at zero cost happens now
            while traj and traj[0].location == node:
                stop = traj.pop(0)
                if now > stop.deadline + DEADLINE_EPS:
                    raise SimulationIntegrityError(
                        f"vehicle {v.id}: stop for request {stop.request_id} "
                        f"consumed at {now:.3f} after deadline {stop.deadline:.3f}")
                if stop.kind == PICKUP:
                    if len(onboard) >= v.capacity:
                        raise SimulationIntegrityError(
                            f"vehicle {v.id}: pickup beyond capacity {v.capacity}")
                    onboard.add(stop.request_id)
                else:
                    if stop.request_id not in onboard:
                        raise SimulationIntegrityError(
                            f"vehicle {v.id}: dropoff of request {stop.request_id} "
                            "that is not onboard")
                    onboard.remove(stop.request_id)
                events.append(StopEvent(stop.request_id, stop.kind, now, v.id, node))
            if target is not None and target == node:
                target = None
            dest = traj[0].location if traj else target
            if dest is None or budget <= eps:
                break
            hop = net.next_hop(node, dest)
            remaining = net.edge_time(node, hop)
            node = hop
        step = min(budget, remaining)
        remaining -= step
        budget -= step
        now += step
        if budget <= eps and remaining > eps:
            break

    new_v = replace(v, node=node, time_to_node=remaining, clock=v.clock + delta,
                    trajectory=tuple(traj), onboard=frozenset(onboard),
                    rebalance_target=target)
    return new_v, events


def advance_time(vehicles, delta: float, net: RoadNetwork):
    """Advance every vehicle by delta seconds. Per-vehicle motion is pure and
    independent; results keep the input order. Returns (vehicles, events)."""
    if delta <= 0:
        raise ContractError("delta must be positive")
    out = []
    all_events = []
    for v in vehicles:
        nv, ev = advance_vehicle(v, delta, net)
        out.append(nv)
        all_events.extend(ev)
    return tuple(out), all_events


def validate_vehicle(v: VehicleState, net: RoadNetwork) -> None:
    """Re-verify trajectory invariants from the current position: pickup
    precedes dropoff, occupancy stays within capacity, every stop reachable
    by its deadline. Raises SimulationIntegrityError on violation."""
    count = len(v.onboard)
    seen_pickup = set(v.onboard)
    t = v.clock + v.time_to_node
    pos = v.node
    for stop in v.trajectory:
        t += net.travel_time(pos, stop.location)
        pos = stop.location
        if t > stop.deadline + DEADLINE_EPS:
            raise SimulationIntegrityError(
                f"vehicle {v.id}: stop for request {stop.request_id} misses deadline")
        if stop.kind == PICKUP:
            if stop.request_id in seen_pickup:
                raise SimulationIntegrityError(
                    f"vehicle {v.id}: duplicate pickup {stop.request_id}")
            seen_pickup.add(stop.request_id)
            count += 1
            if count > v.capacity:
                raise SimulationIntegrityError(f"vehicle {v.id}: over capacity")
        else:
            if stop.request_id not in seen_pickup:
                raise SimulationIntegrityError(
                    f"vehicle {v.id}: dropoff before pickup for {stop.request_id}")
            count -= 1
    if count != 0:
        raise SimulationIntegrityError(f"vehicle {v.id}: unbalanced trajectory")


def vehicle_to_dict(v: VehicleState) -> dict:
    return {
        "id": v.id,
        "capacity": v.capacity,
        "node": v.node,
        "time_to_node": v.time_to_node,
        "clock": v.clock,
        "trajectory": [[s.location, s.kind, s.request_id, s.deadline]
                       for s in v.trajectory],
        "onboard": sorted(v.onboard),
        "rebalance_target": v.rebalance_target,
    }


def vehicles_to_jsonl(vehicles) -> str:
    """One vehicle per line, for debugging and replay."""
    return "\n".join(json.dumps(vehicle_to_dict(v), sort_keys=True) for v in vehicles)


def state_hash(state: SystemState) -> str:
    """Canonical digest of epoch + fleet, for determinism checks."""
    payload = {
        "epoch": state.epoch,
        "vehicles": [vehicle_to_dict(v) for v in sorted(state.vehicles, key=lambda v: v.id)],
        "pending": [r.id for r in state.pending.requests],
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
