"""Epoch-loop orchestration: request intake, feasible-set generation, scoring,
assignment, rebalancing, motion; plus the training and evaluation drivers and
metrics aggregation.

All randomness flows from three named seeds (demand, placement, training),
stretched into independent per-episode, per-epoch substreams, so any run can
be reproduced bit for bit from its resolved configuration.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .assign import build_instance, solve, validate_assignment
from .demand import EpochBatch, RateProfile, generate_demand
from .errors import ContractError
from .feasibility import EvalBudget, generate_feasible_set, invert_candidates, \
    prune_candidates
from .fleet import SystemState, advance_time, apply_action, place_fleet, state_hash
from .rebalance import apply_plan, make_instance, sample_demand, solve_rebalance
from .replay import Experience, ReplayMemory
from .roadnet import LocationEmbedding, RoadNetwork
from .valuefn import FeatureConfig, ScoreContext, TrainerState, bellman_targets, \
    explore_noise, init_params, make_trainer, save_checkpoint, score_actions, \
    train_step


@dataclass(frozen=True)
class RunConfig:
    tau: float = 300.0
    lam: float = -1.0              # -1 resolves to 2*tau
    delta: float = 60.0
    fleet_size: int = 20
    capacity: int = 4
    horizon: int = 240
    seed_demand: int = 0
    seed_placement: int = 1
    seed_training: int = 2
    mode: str = "train"            # train | evaluate | baseline
    k_nearest: int = 30
    eval_cap: int = 150
    gamma: float = 0.9
    lr: float = 1e-3
    emb_dim: int = 16
    emb_steps: int = 2000
    hidden: int = 64
    head1: int = 64
    head2: int = 32
    replay_capacity: int = 2000
    minibatch: int = 32
    update_frequency: int = 1
    target_update: int = 1000
    sigma_start: float = 0.5
    sigma_end: float = 0.02
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    episodes: int = 20
    eval_days: int = 5
    rebalance_cap: int = 500
    node_limit: int = 200_000
    batch_scale: float = 8.0
    workers: int = 1

    def __post_init__(self):
        if self.tau <= 0 or self.delta <= 0:
            raise ContractError("tau and delta must be positive")
        if self.lam != -1.0 and self.lam < 0:
            raise ContractError("lam must be nonnegative")
        if self.capacity < 1:
            raise ContractError("capacity must be at least 1")
        if self.mode not in ("train", "evaluate", "baseline"):
            raise ContractError(f"unknown mode {self.mode!r}")

    @property
    def lam_eff(self) -> float:
        return 2.0 * self.tau if self.lam == -1.0 else self.lam

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(delay_scale=self.tau + self.lam_eff,
                             fleet_scale=float(self.fleet_size),
                             batch_scale=self.batch_scale,
                             horizon_scale=float(self.horizon))


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    requests_seen: int
    requests_served: int
    service_rate: float            # cumulative over the run so far
    objective: float
    solver_nodes: int
    feas_evals: int
    feas_budget_stops: int
    rebalanced: int
    rebalance_cost: float
    solver_fallbacks: int
    wall_ms: float                 # dispatch wall clock; not part of determinism

    def row(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_ms")
        return d


@dataclass
class RunTotals:
    seen: int = 0
    served: int = 0
    dropped: int = 0
    completed: int = 0


def count_nearby(vehicles, v, net: RoadNetwork, tau: float) -> int:
    """Vehicles other than v that could reach v's node within tau seconds."""
    n = 0
    for u in vehicles:
        if u.id == v.id:
            continue
        if u.time_to_node + net.travel_time(u.node, v.node) <= tau + 1e-9:
            n += 1
    return n


class MyopicPolicy:
    """Immediate rewards only; what the assignment reduces to with no learned
    value. Serves as the reactive baseline."""

    def score(self, v, feasible, ctx):
        return np.array([f.immediate_reward for f in feasible.actions])


class ValuePolicy:
    """Reward plus learned value of each action's post-decision state, with
    optional Gaussian exploration noise during training."""

    def __init__(self, params, emb: LocationEmbedding, net: RoadNetwork,
                 fc: FeatureConfig, sigma: float = 0.0, rng=None):
        self.params = params
        self.emb = emb
        self.net = net
        self.fc = fc
        self.sigma = sigma
        self.rng = rng

    def score(self, v, feasible, ctx):
        s = score_actions(self.params, v, feasible, ctx, self.emb, self.net, self.fc)
        if self.sigma > 0 and self.rng is not None:
            s = explore_noise(s, self.sigma, self.rng)
        return s


def run_epoch(state: SystemState, policy, cfg: RunConfig, net: RoadNetwork,
              history: list, totals: RunTotals, reb_rng, strict: bool = True,
              pool: ThreadPoolExecutor | None = None):
    """One decision epoch: intake, feasibility, scoring, assignment,
    rebalancing of idle vehicles, then motion until the next epoch. Returns
    (advanced vehicles, metrics, stored experience)."""
    wall = state.epoch * cfg.delta
    for v in state.vehicles:
        if abs(v.clock - wall) > 1e-6:
            raise ContractError(
                f"vehicle {v.id} clock {v.clock} != epoch wall time {wall}")
    t0 = time.perf_counter()
    reqs = state.pending.requests
    vehicles = state.vehicles

    cand = prune_candidates(reqs, vehicles, net, cfg.tau, cfg.k_nearest)
    assignable = invert_candidates(cand, reqs, vehicles)
    budgets = [EvalBudget(cfg.eval_cap) for _ in vehicles]
    if pool is not None:
        sets = list(pool.map(
            lambda pair: generate_feasible_set(pair[0], assignable[pair[0].id],
                                               net, budget=pair[1]),
            zip(vehicles, budgets)))
    else:
        sets = [generate_feasible_set(v, assignable[v.id], net, budget=b)
                for v, b in zip(vehicles, budgets)]

    nearby = tuple(count_nearby(vehicles, v, net, cfg.tau) for v in vehicles)
    ctxs = [ScoreContext(nearby[i], len(reqs), state.epoch)
            for i in range(len(vehicles))]
    scores = [policy.score(v, fs, ctx)
              for v, fs, ctx in zip(vehicles, sets, ctxs)]
    inst = build_instance(sets, scores)
    asg = solve(inst, node_limit=cfg.node_limit,
                on_limit="error" if strict else "greedy")
    validate_assignment(inst, asg)
    dispatch_ms = (time.perf_counter() - t0) * 1e3

    chosen = [sets[i].actions[asg.action_indices[i]] for i in range(len(vehicles))]
    post = tuple(apply_action(v, f) for v, f in zip(vehicles, chosen))
    served_now = sum(len(f.request_ids) for f in chosen)
    exp = Experience(state.epoch, vehicles, tuple(sets), nearby, len(reqs))

    history.extend(r.origin for r in reqs)
    idle = [v for v in post if not v.trajectory]
    rebalanced = 0
    reb_cost = 0.0
    if idle and history:
        points = sample_demand(history, len(idle), reb_rng, cfg.rebalance_cap)
        if points:
            plan = solve_rebalance(make_instance(idle, points, net))
            post = apply_plan(post, plan)
            rebalanced = len(idle)
            reb_cost = plan.total_cost

    advanced, events = advance_time(post, cfg.delta, net)
    totals.seen += len(reqs)
    totals.served += served_now
    totals.dropped += len(reqs) - served_now
    totals.completed += sum(1 for e in events if e.kind == "dropoff")
    if totals.served + totals.dropped != totals.seen:
        raise ContractError("request conservation violated")
    rate = totals.served / totals.seen if totals.seen else 0.0
    metrics = EpochMetrics(
        epoch=state.epoch, requests_seen=len(reqs), requests_served=served_now,
        service_rate=rate, objective=asg.objective, solver_nodes=asg.nodes,
        feas_evals=sum(b.used for b in budgets),
        feas_budget_stops=sum(b.budget_stops for b in budgets),
        rebalanced=rebalanced, rebalance_cost=reb_cost,
        solver_fallbacks=int(asg.fallback), wall_ms=dispatch_ms)
    return advanced, metrics, exp


@dataclass
class DemandModel:
    """Demand scenario: rate profile over epochs plus spatial weightings."""
    profile: RateProfile
    origin_weights: np.ndarray | None = None
    dest_weights: np.ndarray | None = None

    def stream(self, net, cfg: RunConfig, seed_key):
        return generate_demand(net, cfg.horizon, self.profile, seed_key,
                               cfg.delta, cfg.tau, cfg.lam_eff,
                               self.origin_weights, self.dest_weights)


def simulate_day(net: RoadNetwork, cfg: RunConfig, demand: DemandModel, policy,
                 day_key: int, collect=False, strict: bool = True,
                 metrics_out=None, pool=None):
    """One full horizon under a fixed policy. day_key selects the demand,
    placement, and rebalance substreams. Returns (totals, final state hash,
    experiences when collected)."""
    vehicles = place_fleet(net, cfg.fleet_size, cfg.capacity,
                           (cfg.seed_placement, day_key))
    history = []
    totals = RunTotals()
    exps = [] if collect else None
    for epoch, batch in enumerate(demand.stream(net, cfg, (cfg.seed_demand, day_key))):
        state = SystemState(epoch, vehicles, batch)
        reb_rng = np.random.default_rng([cfg.seed_placement, day_key, epoch, 2])
        vehicles, m, exp = run_epoch(state, policy, cfg, net, history, totals,
                                     reb_rng, strict=strict, pool=pool)
        if metrics_out is not None:
            metrics_out.append(m)
        if collect:
            exps.append(exp)
    final = SystemState(cfg.horizon, vehicles, EpochBatch(cfg.horizon, ()))
    return totals, state_hash(final), exps


VALIDATION_KEY = 999_999
TRAIN_KEY_BASE = 1_000


@dataclass
class TrainResult:
    trainer: TrainerState
    val_rates: list
    losses: list
    episodes_run: int
    diverged: bool = False
    best_val: float = -1.0
    best_params: dict | None = None


def train(cfg: RunConfig, net: RoadNetwork, emb: LocationEmbedding,
          demand: DemandModel, episodes=None, checkpoint_path=None,
          loss_blowup: float = 1e6, on_episode=None) -> TrainResult:
    """Off-policy training over simulated episodes. Experiences are stored
    per epoch; every update_frequency epochs a prioritized minibatch is
    re-scored (online net), re-solved, priced with the target net, and
    regressed. Validation runs noise-free on a held-out demand substream
    after each episode; the weights kept at the end (and in the final
    checkpoint) are those of the best validation episode."""
    n_episodes = cfg.episodes if episodes is None else episodes
    fc = cfg.feature_config()
    params = init_params(emb.dim, cfg.hidden, cfg.head1, cfg.head2,
                         seed=cfg.seed_training)
    planned_updates = max(1, n_episodes * (cfg.horizon // max(1, cfg.update_frequency)))
    trainer = make_trainer(params, gamma=cfg.gamma, lr=cfg.lr,
                           target_update=cfg.target_update,
                           sigma_start=cfg.sigma_start, sigma_end=cfg.sigma_end,
                           sigma_decay_steps=max(1, planned_updates // 2), fc=fc)
    mem = ReplayMemory(cfg.replay_capacity, alpha=cfg.alpha, beta=cfg.beta_start)
    result = TrainResult(trainer, [], [], 0)
    bad_streak = 0
    updates = 0

    for n in range(1, n_episodes + 1):
        day_key = TRAIN_KEY_BASE + n
        vehicles = place_fleet(net, cfg.fleet_size, cfg.capacity,
                               (cfg.seed_placement, day_key))
        history = []
        totals = RunTotals()
        policy = ValuePolicy(trainer.online, emb, net, fc)
        for epoch, batch in enumerate(demand.stream(net, cfg, (cfg.seed_demand, day_key))):
            policy.sigma = trainer.current_sigma()
            policy.rng = np.random.default_rng([cfg.seed_training, day_key, epoch, 3])
            state = SystemState(epoch, vehicles, batch)
            reb_rng = np.random.default_rng([cfg.seed_placement, day_key, epoch, 2])
            vehicles, m, exp = run_epoch(state, policy, cfg, net, history,
                                         totals, reb_rng, strict=False)
            mem.push(exp)
            if (epoch + 1) % max(1, cfg.update_frequency) == 0 and len(mem) > 0:
                k = min(cfg.minibatch, len(mem))
                srng = np.random.default_rng([cfg.seed_training, day_key, epoch, 4])
                exps, w, ids = mem.sample(k, srng)
                inputs, ys, slices = bellman_targets(trainer, exps, emb, net, fc,
                                                     node_limit=cfg.node_limit,
                                                     keys=ids, horizon=cfg.horizon)
                weights = np.concatenate(
                    [np.full(b - a, w[j]) for j, (a, b) in enumerate(slices)])
                loss, td = train_step(trainer, inputs, ys, weights)
                prios = [float(np.mean(np.abs(td[a:b]))) for a, b in slices]
                mem.update_priorities(ids, prios)
                updates += 1
                mem.beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * \
                    min(1.0, updates / planned_updates)
                result.losses.append(loss)
                if loss > loss_blowup:
                    bad_streak += 1
                    if bad_streak >= 5:
                        if checkpoint_path:
                            save_checkpoint(trainer, checkpoint_path)
                        result.diverged = True
                        result.episodes_run = n
                        return result
                else:
                    bad_streak = 0
        val_policy = ValuePolicy(trainer.online, emb, net, fc)
        val_totals, _, _ = simulate_day(net, cfg, demand, val_policy,
                                        VALIDATION_KEY, strict=False)
        rate = val_totals.served / val_totals.seen if val_totals.seen else 0.0
        result.val_rates.append(rate)
        result.episodes_run = n
        if rate > result.best_val:
            result.best_val = rate
            result.best_params = {k: np.array(p, copy=True)
                                  for k, p in trainer.online.items()}
        if checkpoint_path:
            save_checkpoint(trainer, checkpoint_path)
        if on_episode is not None:
            on_episode(n, rate, result)
    if result.best_params is not None:
        trainer.online = result.best_params
        if checkpoint_path:
            save_checkpoint(trainer, checkpoint_path)
    return result


def evaluate(cfg: RunConfig, net: RoadNetwork, emb: LocationEmbedding | None,
             demand: DemandModel, params=None, days=None, metrics_out=None,
             strict: bool = True):
    """Noise-free rollouts over held-out demand days. params=None runs the
    myopic baseline; otherwise actions are scored with the given weights.
    Returns a summary dict in the mean-plus-sample-std reporting style."""
    n_days = cfg.eval_days if days is None else days
    fc = cfg.feature_config()
    per_day = []
    hashes = []
    for k in range(n_days):
        if params is None:
            policy = MyopicPolicy()
        else:
            policy = ValuePolicy(params, emb, net, fc)
        day_metrics = [] if metrics_out is not None else None
        totals, h, _ = simulate_day(net, cfg, demand, policy, k, strict=strict,
                                    metrics_out=day_metrics)
        if metrics_out is not None:
            metrics_out.append(day_metrics)
        rate = totals.served / totals.seen if totals.seen else 0.0
        per_day.append({"day": k, "seen": totals.seen, "served": totals.served,
                        "rate": rate})
        hashes.append(h)
    rates = np.array([d["rate"] for d in per_day])
    served = np.array([d["served"] for d in per_day], dtype=float)
    summary = {
        "days": per_day,
        "mean_rate": float(rates.mean()),
        "std_rate": float(rates.std(ddof=1)) if n_days > 1 else 0.0,
        "mean_served": float(served.mean()),
        "std_served": float(served.std(ddof=1)) if n_days > 1 else 0.0,
        "state_hashes": hashes,
    }
    return summary


def metrics_to_jsonl(metrics, include_timing: bool = False) -> str:
    return "\n".join(json.dumps(m.row(include_timing), sort_keys=True)
                     for m in metrics)
