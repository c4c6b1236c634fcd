"""Road network: weighted directed intersection graph with cached shortest
travel times, plus the travel-time-proxy trainer that produces per-location
embeddings.

Networks are restricted to their largest strongly connected component at
construction, so every travel-time query is finite. All-pairs times are held
in a dense table up to ``dense_limit`` nodes and computed per-source (and
cached) above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra, shortest_path

from .errors import NetworkError
from .optim import Adam


class RoadNetwork:
    """Immutable after construction; safe to share across workers.

    locations -- sorted tuple of retained node ids (original labels)
    edges     -- tuple of (src, dst, seconds) retained after SCC reduction
    """

    def __init__(self, locations, edges, dense_limit=3000):
        self.locations = tuple(sorted(locations))
        self.edges = tuple(edges)
        self._index = {loc: i for i, loc in enumerate(self.locations)}
        n = len(self.locations)
        self.n = n

        data = np.array([w for _, _, w in self.edges], dtype=np.float64)
        rows = np.array([self._index[a] for a, _, _ in self.edges], dtype=np.int64)
        cols = np.array([self._index[b] for _, b, _ in self.edges], dtype=np.int64)
        self._graph = csr_matrix((data, (rows, cols)), shape=(n, n))

        self._dense = n <= dense_limit
        self._row_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        if self._dense:
            if n == 1:
                self.tt = np.zeros((1, 1))
                self._pred = np.full((1, 1), -9999, dtype=np.int32)
            else:
                self.tt, self._pred = shortest_path(
                    self._graph, method="D", directed=True, return_predecessors=True
                )
            if not np.all(np.isfinite(self.tt)):
                raise NetworkError("network is not strongly connected")
        else:
            self.tt = None
            self._pred = None

    def _rows(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if self._dense:
            return self.tt[i], self._pred[i]
        cached = self._row_cache.get(i)
        if cached is None:
            dist, pred = dijkstra(self._graph, directed=True, indices=i,
                                  return_predecessors=True)
            if not np.all(np.isfinite(dist)):
                raise NetworkError("network is not strongly connected")
            cached = (dist, pred)
            self._row_cache[i] = cached
        return cached

    def index(self, loc: int) -> int:
        try:
            return self._index[loc]
        except KeyError:
            raise NetworkError(f"unknown location id {loc}") from None

    def __contains__(self, loc: int) -> bool:
        return loc in self._index

    def travel_time(self, a: int, b: int) -> float:
        """Shortest travel time a -> b in seconds (exact table lookup)."""
        ia, ib = self.index(a), self.index(b)
        dist, _ = self._rows(ia)
        return float(dist[ib])

    def next_hop(self, a: int, b: int) -> int:
        """First node after `a` on a shortest path a -> b. Requires a != b."""
        ia, ib = self.index(a), self.index(b)
        if ia == ib:
            raise NetworkError(f"no hop needed: {a} == {b}")
        _, pred = self._rows(ia)
        k = ib
        while pred[k] != ia:
            k = int(pred[k])
        return self.locations[k]

    def edge_time(self, a: int, b: int) -> float:
        """Weight of the direct edge a -> b."""
        ia, ib = self.index(a), self.index(b)
        w = self._graph[ia, ib]
        if w == 0.0:
            raise NetworkError(f"no edge {a} -> {b}")
        return float(w)

    @property
    def diameter(self) -> float:
        """Largest shortest travel time over all pairs."""
        if self._dense:
            return float(self.tt.max())
        return max(self._rows(i)[0].max() for i in range(self.n))


def build_network(locations, edges, dense_limit=3000) -> RoadNetwork:
    """Build a RoadNetwork restricted to its largest strongly connected
    component. Nodes without outgoing edges (and anything else outside the
    main component) are dropped.

    edges: iterable of (src, dst, weight_seconds), weights > 0. Parallel
    edges keep the smallest weight.
    """
    locations = sorted(set(locations))
    if not locations:
        raise NetworkError("no locations given")
    loc_set = set(locations)
    best: dict[tuple[int, int], float] = {}
    for a, b, w in edges:
        if a not in loc_set or b not in loc_set:
            raise NetworkError(f"edge ({a}, {b}) references unknown location")
        w = float(w)
        if not w > 0.0:
            raise NetworkError(f"edge ({a}, {b}) has non-positive weight {w}")
        if a == b:
            continue
        key = (a, b)
        if key not in best or w < best[key]:
            best[key] = w

    n = len(locations)
    index = {loc: i for i, loc in enumerate(locations)}
    if best:
        rows = np.array([index[a] for a, _ in best], dtype=np.int64)
        cols = np.array([index[b] for _, b in best], dtype=np.int64)
        data = np.ones(len(best))
        graph = csr_matrix((data, (rows, cols)), shape=(n, n))
    else:
        graph = csr_matrix((n, n))
    n_comp, labels = connected_components(graph, directed=True, connection="strong")

    sizes = np.bincount(labels, minlength=n_comp)
    top = sizes.max()
    # ties broken toward the component holding the smallest location id
    keep_label = min(
        (lab for lab in range(n_comp) if sizes[lab] == top),
        key=lambda lab: locations[int(np.argmax(labels == lab))],
    )
    kept = [loc for loc in locations if labels[index[loc]] == keep_label]
    if not kept:
        raise NetworkError("graph empty after reduction to main component")
    kept_set = set(kept)
    kept_edges = [(a, b, w) for (a, b), w in sorted(best.items()) if a in kept_set and b in kept_set]
    return RoadNetwork(kept_set, kept_edges, dense_limit=dense_limit)


def grid_network(rows: int, cols: int, edge_seconds: float = 60.0,
                 dense_limit=3000) -> RoadNetwork:
    """Synthetic city: rows x cols lattice, bidirectional uniform edges.
    Node id of cell (r, c) is r * cols + c."""
    if rows < 1 or cols < 1:
        raise NetworkError("grid needs at least one row and column")
    locations = range(rows * cols)
    edges = []
    for r in range(rows):
        for c in range(cols):
            a = r * cols + c
            if c + 1 < cols:
                edges.append((a, a + 1, edge_seconds))
                edges.append((a + 1, a, edge_seconds))
            if r + 1 < rows:
                edges.append((a, a + cols, edge_seconds))
                edges.append((a + cols, a, edge_seconds))
    return build_network(locations, edges, dense_limit=dense_limit)


def load_edge_list(path, dense_limit=3000) -> RoadNetwork:
    """Read a network from a text file, one `src dst weight_seconds` per line.
    Blank lines and `#` comments are ignored."""
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise NetworkError(f"{path}:{lineno}: expected `src dst weight`, got {line!r}")
            try:
                a, b, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise NetworkError(f"{path}:{lineno}: unparseable row {line!r}") from None
            if a < 0 or b < 0:
                raise NetworkError(f"{path}:{lineno}: node ids must be nonnegative")
            edges.append((a, b, w))
    if not edges:
        raise NetworkError(f"{path}: no edges")
    locations = {a for a, _, _ in edges} | {b for _, b, _ in edges}
    return build_network(locations, edges, dense_limit=dense_limit)


def write_edge_list(net: RoadNetwork, path) -> None:
    with open(path, "w") as fh:
        for a, b, w in net.edges:
            fh.write(f"{a} {b} {w:g}\n")


@dataclass(frozen=True)
class LocationEmbedding:
    """Per-location real vectors plus the two-layer proxy head that maps an
    (origin, destination) embedding pair to a travel-time estimate. Frozen
    once trained; the value function reads `table` rows only."""

    dim: int
    table: np.ndarray                      # (n_locations, dim), row order = net.locations
    proxy_weights: dict = field(repr=False)
    loc_index: dict = field(repr=False)    # location id -> row
    scale: float = 1.0                     # travel-time normalizer used in training

    def vector(self, loc: int) -> np.ndarray:
        try:
            return self.table[self.loc_index[loc]]
        except KeyError:
            raise NetworkError(f"location {loc} has no embedding") from None


def _proxy_forward(table, w1, b1, w2, b2, ia, ib):
    x = np.concatenate([table[ia], table[ib]], axis=1)
    h = np.tanh(x @ w1 + b1)
    yhat = (h @ w2 + b2).ravel()
    return x, h, yhat


def train_embeddings(net: RoadNetwork, dim: int = 16, steps: int = 2000,
                     seed: int = 0, hidden: int = 32, lr: float = 5e-3,
                     batch: int = 256, n_checkpoints: int = 10):
    """Fit location embeddings by regressing pairwise shortest travel times.

    Pairs are sampled uniformly over all location pairs; targets are divided
    by the network diameter so the loss scale is size-independent. Returns
    (embedding, checkpoint_losses) where checkpoint_losses[-1] is the final
    average proxy loss on a held-out fixed pair sample. Deterministic given
    seed.
    """
    if dim < 2:
        raise ValueError("embedding dim must be >= 2")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = net.n
    rng = np.random.default_rng(seed)
    scale = net.diameter
    if scale <= 0.0:
        scale = 1.0

    params = {
        "table": rng.normal(0.0, 0.1, size=(n, dim)),
        "w1": rng.normal(0.0, 1.0, size=(2 * dim, hidden)) / np.sqrt(2 * dim),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, 1.0, size=(hidden, 1)) / np.sqrt(hidden),
        "b2": np.zeros(1),
    }
    opt = Adam(params, lr=lr)

    def target(ia, ib):
        if net.tt is not None:
            return net.tt[ia, ib] / scale
        return np.array([net._rows(a)[0][b] for a, b in zip(ia, ib)]) / scale

    eval_n = min(1024, max(16, n * n))
    eval_a = rng.integers(0, n, size=eval_n)
    eval_b = rng.integers(0, n, size=eval_n)
    eval_y = target(eval_a, eval_b)

    def eval_loss():
        _, _, yhat = _proxy_forward(params["table"], params["w1"], params["b1"],
                                    params["w2"], params["b2"], eval_a, eval_b)
        return float(np.mean((yhat - eval_y) ** 2))

    checkpoint_at = np.unique(np.linspace(1, steps, min(n_checkpoints, steps)).astype(int))
    losses = []
    for step in range(1, steps + 1):
        ia = rng.integers(0, n, size=batch)
        ib = rng.integers(0, n, size=batch)
        y = target(ia, ib)
        x, h, yhat = _proxy_forward(params["table"], params["w1"], params["b1"],
                                    params["w2"], params["b2"], ia, ib)
        err = (yhat - y)[:, None]            # (B, 1)
        dyhat = 2.0 * err / len(y)
        grads = {}
        grads["w2"] = h.T @ dyhat
        grads["b2"] = dyhat.sum(axis=0)
        dh = dyhat @ params["w2"].T * (1.0 - h * h)
        grads["w1"] = x.T @ dh
        grads["b1"] = dh.sum(axis=0)
        dx = dh @ params["w1"].T             # (B, 2*dim)
        dtab = np.zeros_like(params["table"])
        np.add.at(dtab, ia, dx[:, :dim])
        np.add.at(dtab, ib, dx[:, dim:])
        grads["table"] = dtab
        opt.step(params, grads)
        if step in checkpoint_at:
            losses.append(eval_loss())

    emb = LocationEmbedding(
        dim=dim,
        table=params["table"].copy(),
        proxy_weights={k: params[k].copy() for k in ("w1", "b1", "w2", "b2")},
        loc_index={loc: i for i, loc in enumerate(net.locations)},
        scale=scale,
    )
    if not np.all(np.isfinite(emb.table)):
        raise NetworkError("embedding training produced non-finite values")
    return emb, np.array(losses)
