"""Passenger requests: trip-file ingestion, synthetic generation, and
per-epoch batching.

A request's service windows are fixed at creation: pickup by the decision
wall-time plus the pickup-delay budget tau, dropoff by pickup deadline plus
direct ride time plus the detour budget lambda. Batches are keyed by
floor(pickup_time / delta); the decision for epoch t happens at wall-time
t * delta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import RidepoolError
from .roadnet import RoadNetwork

# id namespace per epoch for synthetic streams; keeps generation pure per epoch
_EPOCH_ID_STRIDE = 100_000


@dataclass(frozen=True)
class Request:
    id: int
    origin: int
    destination: int
    arrival_epoch: int
    direct_time: float          # seconds, shortest origin -> destination
    pickup_deadline: float      # wall seconds
    dropoff_deadline: float     # wall seconds

    def __post_init__(self):
        if self.origin == self.destination:
            raise RidepoolError(f"request {self.id}: origin == destination")
        if not self.direct_time > 0.0:
            raise RidepoolError(f"request {self.id}: non-positive direct time")
        if not self.pickup_deadline < self.dropoff_deadline:
            raise RidepoolError(f"request {self.id}: deadline ordering violated")


@dataclass(frozen=True)
class EpochBatch:
    epoch: int
    requests: tuple[Request, ...]

    def __post_init__(self):
        for r in self.requests:
            if r.arrival_epoch != self.epoch:
                raise RidepoolError(f"request {r.id} batched into wrong epoch")

    def __len__(self):
        return len(self.requests)


def make_request(rid: int, origin: int, destination: int, epoch: int,
                 net: RoadNetwork, delta: float, tau: float, lam: float) -> Request:
    direct = net.travel_time(origin, destination)
    wall = epoch * delta
    return Request(
        id=rid, origin=origin, destination=destination, arrival_epoch=epoch,
        direct_time=direct,
        pickup_deadline=wall + tau,
        dropoff_deadline=wall + tau + direct + lam,
    )


@dataclass
class IngestStats:
    rows_read: int = 0
    accepted: int = 0
    degenerate_dropped: int = 0     # origin == destination after mapping
    malformed_skipped: int = 0
    unknown_location_skipped: int = 0


TRIP_HEADER = ["pickup_time_s", "origin_node", "dest_node"]


def ingest_trips(path, net: RoadNetwork, delta: float, tau: float, lam: float):
    """Read a trip CSV (`pickup_time_s,origin_node,dest_node`) into per-epoch
    batches. Returns (batches, stats); batches cover every epoch from 0 to the
    last populated one, empty batches included.

    Rows are expected to already carry known intersection ids (geocoding to
    the nearest intersection is a preprocessing concern); rows naming unknown
    or identical endpoints are dropped and counted.
    """
    if delta <= 0:
        raise RidepoolError("delta must be positive")
    stats = IngestStats()
    by_epoch: dict[int, list[Request]] = {}
    rid = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRIP_HEADER:
            raise RidepoolError(f"{path}: expected header {','.join(TRIP_HEADER)}")
        for row in reader:
            stats.rows_read += 1
            if len(row) != 3:
                stats.malformed_skipped += 1
                continue
            try:
                pickup_s = float(row[0])
                origin = int(row[1])
                dest = int(row[2])
            except ValueError:
                stats.malformed_skipped += 1
                continue
            if pickup_s < 0:
                stats.malformed_skipped += 1
                continue
            if origin not in net or dest not in net:
                stats.unknown_location_skipped += 1
                continue
            if origin == dest:
                stats.degenerate_dropped += 1
                continue
            epoch = int(pickup_s // delta)
            req = make_request(rid, origin, dest, epoch, net, delta, tau, lam)
            by_epoch.setdefault(epoch, []).append(req)
            stats.accepted += 1
            rid += 1
    last = max(by_epoch) if by_epoch else -1
    batches = [EpochBatch(e, tuple(by_epoch.get(e, ()))) for e in range(last + 1)]
    return batches, stats


@dataclass(frozen=True)
class RateProfile:
    """Mean arrival counts per epoch, as (start, end_exclusive, rate) spans.
    Epochs outside every span have rate 0."""

    segments: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        for start, end, rate in self.segments:
            if rate < 0:
                raise RidepoolError(f"negative rate {rate} in profile")
            if end <= start:
                raise RidepoolError(f"empty span ({start}, {end}) in profile")

    def rate(self, epoch: int) -> float:
        for start, end, rate in self.segments:
            if start <= epoch < end:
                return rate
        return 0.0

    @classmethod
    def constant(cls, rate: float) -> "RateProfile":
        return cls(((0, 10 ** 9, rate),))

    @classmethod
    def from_pairs(cls, pairs) -> "RateProfile":
        return cls(tuple((int(s), int(e), float(r)) for s, e, r in pairs))

    def mean_rate(self, horizon: int) -> float:
        if horizon <= 0:
            return 0.0
        return sum(self.rate(e) for e in range(horizon)) / horizon


def grid_zone_weights(rows: int, cols: int, rects, base: float = 1.0) -> np.ndarray:
    """Sampling weights over a grid network's locations. rects are
    (r0, c0, r1, c1, weight) with inclusive bounds; later rects override
    earlier ones. Row order matches grid_network node ids."""
    w = np.full(rows * cols, float(base))
    for r0, c0, r1, c1, weight in rects:
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                w[r * cols + c] = float(weight)
    return w


def _is_segmented(weights):
    # piecewise spatial form: [(first_epoch, end_epoch, weights), ...]
    return (isinstance(weights, (list, tuple)) and len(weights) > 0
            and isinstance(weights[0], (list, tuple)) and len(weights[0]) == 3
            and np.ndim(weights[0][2]) == 1)


def generate_demand(net: RoadNetwork, horizon_epochs: int, rate_profile: RateProfile,
                    seed, delta: float, tau: float, lam: float,
                    origin_weights=None, dest_weights=None):
    """Yield one EpochBatch per epoch with Poisson-distributed counts.

    Origins and destinations are drawn from the given per-location weightings
    (uniform when None). A weighting is either one array over locations or a
    piecewise list of (first_epoch, end_epoch, weights) segments, uniform in
    the gaps, for demand whose geography shifts during the day. `seed` is an
    int or tuple of ints naming the stream; each epoch is generated from its
    own (seed, epoch) substream, so the batch for an epoch never depends on
    other epochs.
    """
    seed_key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    def normed(w):
        if w is None:
            return None
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (net.n,) or np.any(w < 0) or w.sum() <= 0:
            raise RidepoolError("bad spatial weighting")
        return w / w.sum()

    def per_epoch(weights):
        if _is_segmented(weights):
            segs = [(int(a), int(b), normed(w)) for a, b, w in weights]
            return lambda e: next((w for a, b, w in segs if a <= e < b), None)
        flat = normed(weights)
        return lambda e: flat

    ow_at = per_epoch(origin_weights)
    dw_at = per_epoch(dest_weights)
    locs = np.array(net.locations)

    for epoch in range(horizon_epochs):
        rng = np.random.default_rng(seed_key + [epoch])
        rate = rate_profile.rate(epoch)
        count = int(rng.poisson(rate)) if rate > 0 and net.n >= 2 else 0
        ow, dw = ow_at(epoch), dw_at(epoch)
        reqs = []
        for k in range(count):
            origin = int(rng.choice(locs, p=ow))
            dest = int(rng.choice(locs, p=dw))
            while dest == origin:
                dest = int(rng.choice(locs, p=dw))
            rid = epoch * _EPOCH_ID_STRIDE + k
            reqs.append(make_request(rid, origin, dest, epoch, net, delta, tau, lam))
        yield EpochBatch(epoch, tuple(reqs))
