"""
Prioritized experience replay
=============================

Stored decision epochs are revisited in proportion to how surprising they
were. Here: a small memory, hand-set priorities, observed sampling
frequencies against the closed form, and the importance weights that undo
the sampling bias.
"""

import numpy as np

from ridepool.fleet import VehicleState
from ridepool.feasibility import FeasibleAction, FeasibleSet
from ridepool.replay import Experience, ReplayMemory


def make_exp(epoch):
    v = VehicleState(id=0, capacity=2, node=0, time_to_node=0.0,
                     clock=epoch * 60.0, trajectory=(), onboard=frozenset())
    fs = FeasibleSet(0, (FeasibleAction(0, frozenset(), (), 0.0),))
    return Experience(epoch, (v,), (fs,), (0,), 0)


mem = ReplayMemory(capacity=16, alpha=1.0, beta=0.6)
ids = [mem.push(make_exp(e)) for e in range(4)]

# fresh entries start at the running max priority so they get seen at all;
# afterwards priorities track the TD error magnitude
mem.update_priorities(ids, [0.5, 1.0, 2.0, 4.5])
probs = mem.probabilities()
print("priorities 0.5/1/2/4.5 + eps -> sampling probabilities", np.round(probs, 3))

# frequencies over 20k draws should land on those probabilities
rng = np.random.default_rng(0)
counts = np.zeros(4)
for _ in range(5000):
    _, _, got = mem.sample(4, rng)
    for i in got:
        counts[ids.index(i)] += 1
print("empirical frequencies              ", np.round(counts / counts.sum(), 3))

# importance weights shrink the updates of over-sampled entries;
# the rarest entry carries the largest weight (normalized to max 1)
_, w, got = mem.sample(4, np.random.default_rng(1))
order = [ids.index(i) for i in got]
print("one batch:", got, "weights", np.round(w, 3), "(slots", order, ")")

# wraparound: pushing past capacity evicts the oldest entries
for e in range(4, 20):
    mem.push(make_exp(e))
print(f"after 20 pushes into capacity 16: {len(mem)} held, "
      f"oldest epoch {min(x.epoch for x in mem.data if x is not None)}")
