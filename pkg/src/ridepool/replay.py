"""Prioritized experience store for off-policy value updates.

Whole epochs are stored: vehicle states, their feasible sets, and the context
needed to re-score them later. Sampling is proportional to priority^alpha with
importance weights (N * P)^-beta normalized by the batch max; priorities are
|td error| + eps after each update.
"""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .fleet import vehicle_to_dict

MEMORY_VERSION = 1


@dataclass(frozen=True)
class Experience:
    epoch: int
    vehicles: tuple                 # VehicleState per vehicle, as stored
    feasible_sets: tuple            # FeasibleSet per vehicle, routes included
    nearby_counts: tuple            # per-vehicle nearby-vehicle aggregation
    batch_count: int                # requests in that epoch's batch

    def __post_init__(self):
        if len(self.vehicles) != len(self.feasible_sets):
            raise ContractError("experience: vehicles and feasible sets disagree")
        if len(self.vehicles) != len(self.nearby_counts):
            raise ContractError("experience: nearby counts missing")
        for fs in self.feasible_sets:
            if not any(a.is_null for a in fs.actions):
                raise ContractError(
                    f"experience: vehicle {fs.vehicle_id} lacks a null action")


def experience_hash(exp: Experience) -> str:
    """Content digest; used to prove stored experiences never mutate."""
    h = hashlib.sha256()
    h.update(str(exp.epoch).encode())
    h.update(str(exp.batch_count).encode())
    h.update(str(tuple(exp.nearby_counts)).encode())
    for v in exp.vehicles:
        h.update(str(sorted(vehicle_to_dict(v).items())).encode())
    for fs in exp.feasible_sets:
        h.update(str(fs.vehicle_id).encode())
        for a in fs.actions:
            h.update(str((sorted(a.request_ids), a.immediate_reward,
                          tuple((s.location, s.kind, s.request_id, s.deadline)
                                for s in a.route))).encode())
    return h.hexdigest()


class ReplayMemory:
    """Ring buffer with proportional prioritized sampling. Priorities live in
    a parallel array indexed by slot; externally, entries are addressed by
    insertion id so stale references (evicted entries) are detectable."""

    def __init__(self, capacity: int, alpha: float = 0.6, beta: float = 0.4,
                 eps: float = 1e-2):
        if capacity <= 0:
            raise ContractError("capacity must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.eps = eps
        self.data = [None] * capacity
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.priorities = np.zeros(capacity)
        self.pushes = 0
        self.max_priority = 1.0
        self.stale_updates = 0

    def __len__(self):
        return min(self.pushes, self.capacity)

    @property
    def evictions(self):
        return max(0, self.pushes - self.capacity)

    def push(self, exp: Experience) -> int:
        """Insert with the maximum priority seen so far; returns the
        insertion id."""
        slot = self.pushes % self.capacity
        self.data[slot] = exp
        self.ids[slot] = self.pushes
        self.priorities[slot] = self.max_priority
        self.pushes += 1
        return self.pushes - 1

    def probabilities(self) -> np.ndarray:
        n = len(self)
        p = self.priorities[:n] ** self.alpha
        return p / p.sum()

    def sample(self, n: int, seed):
        """Draw n experiences with replacement, proportional to
        priority^alpha. Returns (experiences, importance_weights,
        insertion_ids); weights are normalized by the batch max."""
        size = len(self)
        if size < n:
            raise ContractError(f"cannot sample {n} from memory of size {size}")
        rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng([int(seed)])
        probs = self.probabilities()
        slots = rng.choice(size, size=n, p=probs, replace=True)
        w = (size * probs[slots]) ** (-self.beta)
        w = w / w.max()
        exps = [self.data[s] for s in slots]
        ids = [int(self.ids[s]) for s in slots]
        return exps, w, ids

    def update_priorities(self, insertion_ids, td_errors) -> None:
        """priority = |td| + eps. Ids whose entries were evicted since
        sampling are skipped and counted."""
        for iid, td in zip(insertion_ids, td_errors):
            slot = iid % self.capacity
            if self.ids[slot] != iid:
                self.stale_updates += 1
                continue
            p = abs(float(td)) + self.eps
            self.priorities[slot] = p
            if p > self.max_priority:
                self.max_priority = p

    def save(self, path) -> None:
        blob = {"version": MEMORY_VERSION, "capacity": self.capacity,
                "alpha": self.alpha, "beta": self.beta, "eps": self.eps,
                "data": self.data, "ids": self.ids,
                "priorities": self.priorities, "pushes": self.pushes,
                "max_priority": self.max_priority,
                "stale_updates": self.stale_updates}
        with open(path, "wb") as fh:
            pickle.dump(blob, fh, protocol=4)

    @classmethod
    def load(cls, path) -> "ReplayMemory":
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
        if blob["version"] != MEMORY_VERSION:
            raise ContractError(f"unknown memory version {blob['version']}")
        mem = cls(blob["capacity"], alpha=blob["alpha"], beta=blob["beta"],
                  eps=blob["eps"])
        mem.data = blob["data"]
        mem.ids = blob["ids"]
        mem.priorities = blob["priorities"]
        mem.pushes = blob["pushes"]
        mem.max_priority = blob["max_priority"]
        mem.stale_updates = blob["stale_updates"]
        return mem
