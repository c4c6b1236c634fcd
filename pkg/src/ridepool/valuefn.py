"""Per-vehicle neural value function over post-decision states, with all
forward and backward math in numpy float64.

Architecture: frozen location embeddings feed a single-layer gated recurrent
cell over the stop sequence (embedding + normalized remaining delay per stop,
learned initial state for empty sequences); the final hidden state is
concatenated with a context block (current-location embedding, time of day,
nearby-vehicle count, batch size) and passed through a two-layer tanh head to
a scalar. Everything is hand-differentiated; gradients are validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .assign import build_instance, solve
from .errors import ContractError, NumericError
from .fleet import VehicleState, apply_action
from .optim import Adam
from .roadnet import LocationEmbedding, RoadNetwork

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    delay_scale: float     # tau + lam, seconds
    fleet_scale: float     # fleet size
    batch_scale: float     # typical requests per epoch
    horizon_scale: float   # epochs per episode

    def __post_init__(self):
        for name in ("delay_scale", "fleet_scale", "batch_scale", "horizon_scale"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class StateFeatures:
    stop_emb: np.ndarray     # (L, D)
    stop_delay: np.ndarray   # (L,)
    context: np.ndarray      # (D + 3,)


@dataclass(frozen=True)
class ScoreContext:
    others_count: int        # vehicles near this one, aggregated
    batch_count: int         # requests in the current batch
    epoch: int


def featurize(v: VehicleState, others_count: int, batch_count: int, epoch: int,
              emb: LocationEmbedding, net: RoadNetwork, fc: FeatureConfig) -> StateFeatures:
    """Deterministic feature extraction for one vehicle state. Remaining delay
    of each stop is its deadline minus the earliest arrival along the route,
    clamped at zero and scaled to [0, ~1]."""
    L = len(v.trajectory)
    if L > 2 * v.capacity:
        raise ContractError(
            f"vehicle {v.id}: trajectory of {L} stops exceeds 2x capacity {v.capacity}")
    E = np.zeros((L, emb.dim))
    d = np.zeros(L)
    t = v.clock + v.time_to_node
    pos = v.node
    for k, stop in enumerate(v.trajectory):
        t += net.travel_time(pos, stop.location)
        pos = stop.location
        E[k] = emb.vector(stop.location)
        d[k] = max(stop.deadline - t, 0.0) / fc.delay_scale
    ctx = np.concatenate([
        emb.vector(v.node),
        [epoch / fc.horizon_scale,
         others_count / fc.fleet_scale,
         batch_count / fc.batch_scale],
    ])
    if not (np.isfinite(E).all() and np.isfinite(d).all() and np.isfinite(ctx).all()):
        raise NumericError(f"non-finite features for vehicle {v.id}")
    return StateFeatures(E, d, ctx)


def init_params(emb_dim: int, hidden: int = 64, head1: int = 64, head2: int = 32,
                seed: int = 0) -> dict:
    """Gaussian init scaled by 1/sqrt(fan_in); biases and h0 start at zero."""
    rng = np.random.default_rng([seed])
    In = emb_dim + 1
    ctx = emb_dim + 3

    def mat(rows, cols):
        return rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols))

    return {
        "h0": np.zeros(hidden),
        "Wz": mat(hidden, In), "Uz": mat(hidden, hidden), "bz": np.zeros(hidden),
        "Wr": mat(hidden, In), "Ur": mat(hidden, hidden), "br": np.zeros(hidden),
        "Wh": mat(hidden, In), "Uh": mat(hidden, hidden), "bh": np.zeros(hidden),
        "W1": mat(head1, hidden + ctx), "b1": np.zeros(head1),
        "W2": mat(head2, head1), "b2": np.zeros(head2),
        "w3": mat(1, head2), "b3": np.zeros(1),
    }


def zero_params_like(params: dict) -> dict:
    return {k: np.zeros_like(a) for k, a in params.items()}


def clone_params(params: dict) -> dict:
    return {k: a.copy() for k, a in params.items()}


def params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


def build_batch(feats_list):
    """Pad a list of StateFeatures into dense (X, mask, C) arrays; sequences
    are front-packed so the recurrent state after the last real stop is the
    sequence encoding."""
    n = len(feats_list)
    D = feats_list[0].stop_emb.shape[1] if feats_list[0].stop_emb.ndim == 2 else 0
    L = max(len(f.stop_delay) for f in feats_list)
    X = np.zeros((n, L, D + 1))
    mask = np.zeros((n, L))
    C = np.stack([f.context for f in feats_list])
    for i, f in enumerate(feats_list):
        li = len(f.stop_delay)
        if li:
            X[i, :li, :D] = f.stop_emb
            X[i, :li, D] = f.stop_delay
            mask[i, :li] = 1.0
    return X, mask, C


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward_batch(params: dict, X, mask, C):
    """Batched forward pass. Returns (values (N,), cache for backward)."""
    n, L, _ = X.shape
    h = np.tile(params["h0"], (n, 1))
    steps = []
    for t in range(L):
        x = X[:, t, :]
        m = mask[:, t:t + 1]
        z = _sigmoid(x @ params["Wz"].T + h @ params["Uz"].T + params["bz"])
        r = _sigmoid(x @ params["Wr"].T + h @ params["Ur"].T + params["br"])
        rh = r * h
        hti = np.tanh(x @ params["Wh"].T + rh @ params["Uh"].T + params["bh"])
        hnew = (1.0 - z) * h + z * hti
        steps.append((h, z, r, hti))
        h = m * hnew + (1.0 - m) * h
    u = np.concatenate([h, C], axis=1)
    a1 = u @ params["W1"].T + params["b1"]
    y1 = np.tanh(a1)
    a2 = y1 @ params["W2"].T + params["b2"]
    y2 = np.tanh(a2)
    v = (y2 @ params["w3"].T + params["b3"])[:, 0]
    if not np.isfinite(v).all():
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise NumericError(f"non-finite value at batch row {bad}")
    cache = (X, mask, C, steps, h, u, y1, y2)
    return v, cache


def backward_batch(params: dict, cache, dv):
    """Gradients of sum_i dv[i] * V_i with respect to every parameter."""
    X, mask, C, steps, h_last, u, y1, y2 = cache
    n, L, _ = X.shape
    H = params["h0"].shape[0]
    g = zero_params_like(params)

    dv2 = np.asarray(dv, dtype=float).reshape(n, 1)
    g["w3"] += dv2.T @ y2
    g["b3"] += dv2.sum(axis=0)
    da2 = (dv2 @ params["w3"]) * (1.0 - y2 * y2)
    g["W2"] += da2.T @ y1
    g["b2"] += da2.sum(axis=0)
    da1 = (da2 @ params["W2"]) * (1.0 - y1 * y1)
    g["W1"] += da1.T @ u
    g["b1"] += da1.sum(axis=0)
    dh = (da1 @ params["W1"])[:, :H]

    for t in range(L - 1, -1, -1):
        h_prev, z, r, hti = steps[t]
        x = X[:, t, :]
        m = mask[:, t:t + 1]
        dh_eff = dh * m
        dcarry = dh * (1.0 - m)
        dz = dh_eff * (hti - h_prev)
        dhti = dh_eff * z
        dh_prev = dh_eff * (1.0 - z) + dcarry
        dah = dhti * (1.0 - hti * hti)
        g["Wh"] += dah.T @ x
        g["bh"] += dah.sum(axis=0)
        drh = dah @ params["Uh"]
        g["Uh"] += dah.T @ (r * h_prev)
        dh_prev += drh * r
        dr = drh * h_prev
        dar = dr * r * (1.0 - r)
        g["Wr"] += dar.T @ x
        g["br"] += dar.sum(axis=0)
        g["Ur"] += dar.T @ h_prev
        dh_prev += dar @ params["Ur"]
        daz = dz * z * (1.0 - z)
        g["Wz"] += daz.T @ x
        g["bz"] += daz.sum(axis=0)
        g["Uz"] += daz.T @ h_prev
        dh_prev += daz @ params["Uz"]
        dh = dh_prev
    g["h0"] += dh.sum(axis=0)
    return g


def values(params: dict, feats_list) -> np.ndarray:
    if not feats_list:
        return np.zeros(0)
    X, mask, C = build_batch(feats_list)
    v, _ = forward_batch(params, X, mask, C)
    return v


def value(params: dict, feats: StateFeatures) -> float:
    return float(values(params, [feats])[0])


def score_actions(params: dict, v: VehicleState, feasible, ctx: ScoreContext,
                  emb: LocationEmbedding, net: RoadNetwork, fc: FeatureConfig) -> np.ndarray:
    """Objective coefficients for one vehicle's actions: immediate reward plus
    the value of the post-decision state the action induces. All actions are
    evaluated in one batched forward pass."""
    feats = [featurize(apply_action(v, f), ctx.others_count, ctx.batch_count,
                       ctx.epoch, emb, net, fc)
             for f in feasible.actions]
    vals = values(params, feats)
    rewards = np.array([f.immediate_reward for f in feasible.actions])
    return rewards + vals


def explore_noise(scores: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Gaussian exploration noise on the value component of every action's
    score. Adding to the total score is equivalent since the reward term is
    untouched by learning."""
    if sigma <= 0:
        return scores.copy()
    return scores + rng.normal(0.0, sigma, size=scores.shape)


@dataclass
class TrainerState:
    online: dict
    target: dict
    opt: Adam
    gamma: float = 0.9
    target_update: int = 1000
    sigma_start: float = 0.5
    sigma_end: float = 0.02
    sigma_decay_steps: int = 1
    step: int = 0
    skipped_steps: int = 0
    fc: FeatureConfig | None = None
    # per-experience incumbent seeds for the re-solves; transient, not saved
    warm: dict = field(default_factory=dict)

    def current_sigma(self) -> float:
        frac = min(1.0, self.step / max(1, self.sigma_decay_steps))
        return self.sigma_start + (self.sigma_end - self.sigma_start) * frac


def make_trainer(params: dict, gamma: float = 0.9, lr: float = 1e-3,
                 target_update: int = 1000, sigma_start: float = 0.5,
                 sigma_end: float = 0.02, sigma_decay_steps: int = 1,
                 fc: FeatureConfig | None = None) -> TrainerState:
    if not 0.0 <= gamma < 1.0:
        raise ContractError("gamma must lie in [0, 1)")
    return TrainerState(online=params, target=clone_params(params),
                        opt=Adam(params, lr=lr), gamma=gamma,
                        target_update=target_update, sigma_start=sigma_start,
                        sigma_end=sigma_end, sigma_decay_steps=sigma_decay_steps,
                        fc=fc)


def bellman_targets(trainer: TrainerState, experiences, emb: LocationEmbedding,
                    net: RoadNetwork, fc: FeatureConfig, node_limit=200_000,
                    keys=None, horizon=None):
    """One-step targets from stored experiences, no environment interaction.
    Action selection re-scores the stored feasible sets with the online
    network and solves the assignment problem; evaluation prices the chosen
    post-decision states with the target network. Returns
    (inputs, targets, slices): flattened per-vehicle regression features, the
    matching y values, and one (start, end) range per experience.

    When `horizon` is given, experiences at the last decision epoch keep only
    their immediate reward: no requests arrive after the day ends, so the
    bootstrap term there is zero rather than the network's extrapolation.

    `keys` are optional per-experience identities: repeats within the batch
    (prioritized sampling draws with replacement) are computed once, and the
    solver is seeded with the assignment found the last time each experience
    was drawn."""
    inputs = []
    targets = []
    slices = []
    if keys is None:
        keys = list(range(len(experiences)))
    cache = {}
    for exp, key in zip(experiences, keys):
        if key not in cache:
            scores = [score_actions(trainer.online, v, fs,
                                    ScoreContext(exp.nearby_counts[i], exp.batch_count,
                                                 exp.epoch),
                                    emb, net, fc)
                      for i, (v, fs) in enumerate(zip(exp.vehicles, exp.feasible_sets))]
            inst = build_instance(exp.feasible_sets, scores)
            asg = solve(inst, node_limit=node_limit, on_limit="greedy",
                        warm_start=trainer.warm.get(key))
            trainer.warm[key] = asg.action_indices
            if len(trainer.warm) > 100_000:
                trainer.warm.clear()
            post_feats = []
            rewards = []
            for i, v in enumerate(exp.vehicles):
                f = exp.feasible_sets[i].actions[asg.action_indices[i]]
                post = apply_action(v, f)
                post_feats.append(featurize(post, exp.nearby_counts[i],
                                            exp.batch_count, exp.epoch,
                                            emb, net, fc))
                rewards.append(f.immediate_reward)
            if horizon is not None and exp.epoch + 1 >= horizon:
                y = np.array(rewards, dtype=float)
            else:
                v_target = values(trainer.target, post_feats)
                y = np.array(rewards) + trainer.gamma * v_target
            feats = [featurize(v, exp.nearby_counts[i], exp.batch_count,
                               exp.epoch, emb, net, fc)
                     for i, v in enumerate(exp.vehicles)]
            cache[key] = (feats, [float(t) for t in y])
        feats, ys = cache[key]
        start = len(targets)
        inputs.extend(feats)
        targets.extend(ys)
        slices.append((start, len(targets)))
    return inputs, np.array(targets), slices


def train_step(trainer: TrainerState, feats_list, targets, weights=None):
    """One Adam step on weighted MSE toward the given targets. Returns the
    pre-step loss and the per-sample TD errors (for priority updates).
    Non-finite gradients skip the step and are counted."""
    if not feats_list:
        raise ContractError("empty minibatch")
    n = len(feats_list)
    y = np.asarray(targets, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    X, mask, C = build_batch(feats_list)
    v, cache = forward_batch(trainer.online, X, mask, C)
    td = v - y
    loss = float(np.mean(w * td * td))
    dv = 2.0 * w * td / n
    grads = backward_batch(trainer.online, cache, dv)
    finite = all(np.isfinite(g).all() for g in grads.values())
    if finite:
        trainer.opt.step(trainer.online, grads)
        trainer.step += 1
        if trainer.step % trainer.target_update == 0:
            trainer.target = clone_params(trainer.online)
    else:
        trainer.skipped_steps += 1
    return loss, td


def save_checkpoint(trainer: TrainerState, path) -> None:
    """All weights, optimizer moments, and schedule counters; load_checkpoint
    round-trips bit-exactly."""
    blob = {"version": np.array(CHECKPOINT_VERSION),
            "step": np.array(trainer.step),
            "skipped": np.array(trainer.skipped_steps),
            "gamma": np.array(trainer.gamma),
            "target_update": np.array(trainer.target_update),
            "sigma": np.array([trainer.sigma_start, trainer.sigma_end,
                               trainer.sigma_decay_steps]),
            "lr": np.array(trainer.opt.lr)}
    for k, a in trainer.online.items():
        blob[f"online.{k}"] = a
    for k, a in trainer.target.items():
        blob[f"target.{k}"] = a
    opt = trainer.opt.state_dict()
    blob["opt.scalars"] = np.array([opt["lr"], opt["beta1"], opt["beta2"],
                                    opt["eps"], float(opt["t"])])
    for k, a in opt["m"].items():
        blob[f"opt.m.{k}"] = a
    for k, a in opt["v"].items():
        blob[f"opt.v.{k}"] = a
    with open(path, "wb") as fh:
        np.savez(fh, **blob)


def load_checkpoint(path, fc: FeatureConfig | None = None) -> TrainerState:
    with np.load(path) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ContractError(f"unknown checkpoint version {int(z['version'])}")
        online = {k[len("online."):]: z[k] for k in z.files if k.startswith("online.")}
        target = {k[len("target."):]: z[k] for k in z.files if k.startswith("target.")}
        sc = z["opt.scalars"]
        opt_state = {
            "lr": float(sc[0]), "beta1": float(sc[1]), "beta2": float(sc[2]),
            "eps": float(sc[3]), "t": int(sc[4]),
            "m": {k[len("opt.m."):]: z[k] for k in z.files if k.startswith("opt.m.")},
            "v": {k[len("opt.v."):]: z[k] for k in z.files if k.startswith("opt.v.")},
        }
        sigma = z["sigma"]
        trainer = TrainerState(
            online=online, target=target,
            opt=Adam.from_state_dict(online, opt_state),
            gamma=float(z["gamma"]), target_update=int(z["target_update"]),
            sigma_start=float(sigma[0]), sigma_end=float(sigma[1]),
            sigma_decay_steps=int(sigma[2]), step=int(z["step"]),
            skipped_steps=int(z["skipped"]), fc=fc)
    return trainer
