"""
Road networks, travel times, and location embeddings
====================================================

Build a small city grid, save and reload it as an edge list, and train the
travel-time-proxy embeddings that the value network uses to describe
locations.
"""

import tempfile
from pathlib import Path

import numpy as np

from ridepool.roadnet import grid_network, load_edge_list, train_embeddings, write_edge_list

# a 6x6 grid city: 36 intersections, every street segment takes 60 seconds
net = grid_network(6, 6, edge_seconds=60.0)
print(f"{len(net.locations)} locations")

# travel times are all-pairs shortest paths, precomputed once
print("corner to corner:", net.travel_time(0, 35), "s")
print("one block:       ", net.travel_time(0, 1), "s")

# the same network round-trips through the text edge-list format
with tempfile.TemporaryDirectory() as td:
    path = Path(td) / "city.edgelist"
    write_edge_list(net, path)
    back = load_edge_list(path)
    assert back.locations == net.locations
    assert all(back.travel_time(a, b) == net.travel_time(a, b)
               for a in net.locations for b in net.locations)
    print("edge-list round trip: identical travel times")

# embeddings place each location in a vector space where inner products
# predict travel times; nearby intersections end up with similar vectors
emb, losses = train_embeddings(net, dim=8, steps=2000, seed=0)
print(f"embedding training loss: {losses[0]:.4f} -> {losses[-1]:.4f}")


def edist(a, b):
    return float(np.linalg.norm(emb.vector(a) - emb.vector(b)))


# neighbours should sit closer in embedding space than far corners do
print("embedding distance, adjacent blocks: ", round(edist(0, 1), 3))
print("embedding distance, opposite corners:", round(edist(0, 35), 3))

# rough check across many pairs: embedding distance tracks travel time
rng = np.random.default_rng(1)
pairs = rng.integers(0, 36, size=(200, 2))
tt = np.array([net.travel_time(int(a), int(b)) for a, b in pairs])
ed = np.array([edist(int(a), int(b)) for a, b in pairs])
print(f"correlation(travel time, embedding distance) = {np.corrcoef(tt, ed)[0, 1]:.3f}")
