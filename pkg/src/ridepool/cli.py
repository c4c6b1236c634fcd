"""Command-line entry point: config handling and the experiment drivers.

Subcommands: gen-network, train, evaluate, baseline, bench, verify. Every run
writes a resolved-config file capturing all defaults and overrides; rerunning
from that file reproduces the deterministic outputs (metrics, summaries)
bit for bit. Wall-clock timings go to a separate stream and carry no
determinism promise.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import oracles
from .demand import RateProfile, grid_zone_weights
from .errors import ConfigError, RidepoolError
from .roadnet import grid_network, load_edge_list, train_embeddings, \
    write_edge_list
from .sim import DemandModel, MyopicPolicy, RunConfig, evaluate, simulate_day, train
from .valuefn import init_params, load_checkpoint, zero_params_like

DEFAULT_CONFIG = {
    "network": {
        "kind": "grid",          # grid | file
        "rows": 10,
        "cols": 10,
        "edge_seconds": 60.0,
        "path": "",
    },
    "demand": {
        # epoch-range rate segments: [start, end_exclusive, requests/epoch]
        "segments": [[0, 60, 1.5], [60, 180, 8.0], [180, 240, 1.5]],
        # rectangles [r0, c0, r1, c1, weight] on the grid, inclusive
        "origin_zones": [],
        "dest_zones": [],
        "zone_base": 1.0,
    },
    "run": {
        "tau": 300.0,
        "lam": -1.0,
        "delta": 60.0,
        "fleet_size": 20,
        "capacity": 4,
        "horizon": 240,
        "seed_demand": 0,
        "seed_placement": 1,
        "seed_training": 2,
        "mode": "train",
        "k_nearest": 30,
        "eval_cap": 150,
        "gamma": 0.9,
        "lr": 1e-3,
        "emb_dim": 16,
        "emb_steps": 2000,
        "hidden": 64,
        "head1": 64,
        "head2": 32,
        "replay_capacity": 2000,
        "minibatch": 32,
        "update_frequency": 1,
        "target_update": 1000,
        "sigma_start": 0.5,
        "sigma_end": 0.02,
        "alpha": 0.6,
        "beta_start": 0.4,
        "beta_end": 1.0,
        "episodes": 20,
        "eval_days": 5,
        "rebalance_cap": 500,
        "node_limit": 200000,
        "batch_scale": 8.0,
        "workers": 1,
    },
}


def _merge(base: dict, extra: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be a section")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} does not parse: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path}: top level must be a mapping")
    return _merge(DEFAULT_CONFIG, data)


def apply_overrides(cfg: dict, pairs) -> dict:
    out = copy.deepcopy(cfg)
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        parts = key.split(".")
        node = out
        ref = DEFAULT_CONFIG
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config key: {key}")
            node = node[p]
            ref = ref[p]
        leaf = parts[-1]
        if leaf not in ref or isinstance(ref[leaf], dict):
            raise ConfigError(f"unknown config key: {key}")
        node[leaf] = yaml.safe_load(raw)
    return out


def build_from_config(cfg: dict):
    ncfg = cfg["network"]
    if ncfg["kind"] == "grid":
        net = grid_network(int(ncfg["rows"]), int(ncfg["cols"]),
                           float(ncfg["edge_seconds"]))
    elif ncfg["kind"] == "file":
        if not ncfg["path"]:
            raise ConfigError("network.kind=file needs network.path")
        net = load_edge_list(ncfg["path"])
    else:
        raise ConfigError(f"unknown network.kind {ncfg['kind']!r}")

    try:
        run = RunConfig(**cfg["run"])
    except (TypeError, RidepoolError) as e:
        raise ConfigError(f"bad run section: {e}") from e

    dcfg = cfg["demand"]
    segments = [(int(a), int(b), float(r)) for a, b, r in dcfg["segments"]]
    profile = RateProfile.from_pairs(segments)
    ow = dw = None
    if dcfg["origin_zones"] or dcfg["dest_zones"]:
        if ncfg["kind"] != "grid":
            raise ConfigError("zone weights need a grid network")
        rows, cols = int(ncfg["rows"]), int(ncfg["cols"])
        if dcfg["origin_zones"]:
            ow = grid_zone_weights(rows, cols, [tuple(z) for z in dcfg["origin_zones"]],
                                   base=float(dcfg["zone_base"]))
        if dcfg["dest_zones"]:
            dw = grid_zone_weights(rows, cols, [tuple(z) for z in dcfg["dest_zones"]],
                                   base=float(dcfg["zone_base"]))
    demand = DemandModel(profile, ow, dw)
    return net, run, demand


def get_embeddings(net, run: RunConfig, out_dir: Path):
    """Embeddings are a pure function of (network, dim, steps, training seed);
    cached per output directory, recomputed identically when absent."""
    cache = out_dir / "embeddings.npz"
    if cache.exists():
        with np.load(cache) as z:
            from .roadnet import LocationEmbedding
            table = z["table"]
            if table.shape == (net.n, run.emb_dim):
                return LocationEmbedding(
                    dim=run.emb_dim, table=table, proxy_weights={},
                    loc_index={loc: i for i, loc in enumerate(net.locations)},
                    scale=float(z["scale"]))
    emb, _ = train_embeddings(net, dim=run.emb_dim, steps=run.emb_steps,
                              seed=run.seed_training)
    np.savez(cache, table=emb.table, scale=np.array(emb.scale))
    return emb


def write_resolved(cfg: dict, out_dir: Path) -> None:
    (out_dir / "resolved-config.yaml").write_text(
        yaml.safe_dump(cfg, sort_keys=True))


def _write_metrics(out_dir: Path, per_day_metrics) -> None:
    det_lines = []
    timing_lines = []
    for day, rows in enumerate(per_day_metrics):
        for m in rows:
            d = m.row()
            d["day"] = day
            det_lines.append(json.dumps(d, sort_keys=True))
            timing_lines.append(json.dumps(
                {"day": day, "epoch": m.epoch, "wall_ms": m.wall_ms}))
    (out_dir / "metrics.jsonl").write_text("\n".join(det_lines) + "\n")
    (out_dir / "timing.jsonl").write_text("\n".join(timing_lines) + "\n")


def cmd_gen_network(cfg, out_dir: Path, args) -> int:
    net, _, _ = build_from_config(cfg)
    path = out_dir / "network.edgelist"
    write_edge_list(net, path)
    print(f"wrote {path}: {net.n} locations, diameter {net.diameter:.0f}s")
    return 0


def cmd_train(cfg, out_dir: Path, args) -> int:
    net, run, demand = build_from_config(cfg)
    emb = get_embeddings(net, run, out_dir)
    ckpt = out_dir / "checkpoint.npz"
    t0 = time.perf_counter()
    result = train(run, net, emb, demand, episodes=args.episodes,
                   checkpoint_path=ckpt,
                   on_episode=lambda n, rate, _r: print(
                       f"episode {n}: validation service rate {rate:.4f}"))
    hours = (time.perf_counter() - t0) / 3600.0
    if result.episodes_run == 0:
        # nothing trained: still leave a valid checkpoint of the initial weights
        from .valuefn import save_checkpoint
        save_checkpoint(result.trainer, ckpt)
    summary = {
        "episodes": result.episodes_run,
        "val_rates": result.val_rates,
        "final_loss": result.losses[-1] if result.losses else None,
        "gradient_steps": result.trainer.step,
        "diverged": result.diverged,
        "checkpoint": str(ckpt),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    print(f"trained {result.episodes_run} episodes in {hours:.2f} h "
          f"-> {ckpt}")
    if result.diverged:
        print("training aborted: loss diverged", file=sys.stderr)
        return 1
    return 0


def _eval_common(cfg, out_dir: Path, args, params) -> int:
    net, run, demand = build_from_config(cfg)
    emb = None
    if params is not None:
        emb = get_embeddings(net, run, out_dir)
    per_day = []
    summary = evaluate(run, net, emb, demand, params=params, days=args.days,
                       metrics_out=per_day, strict=False)
    _write_metrics(out_dir, per_day)
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    label = "baseline" if params is None else "value"
    print(f"{label}: mean service rate {summary['mean_rate']:.4f} "
          f"(+/- {summary['std_rate']:.4f}) over {len(summary['days'])} days")
    return 0


def cmd_baseline(cfg, out_dir: Path, args) -> int:
    return _eval_common(cfg, out_dir, args, params=None)


def cmd_evaluate(cfg, out_dir: Path, args) -> int:
    net, run, _ = build_from_config(cfg)
    if args.zero:
        params = zero_params_like(init_params(run.emb_dim, run.hidden,
                                              run.head1, run.head2))
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint or --zero")
        trainer = load_checkpoint(args.checkpoint)
        params = trainer.online
        want = init_params(run.emb_dim, run.hidden, run.head1, run.head2)
        for k, a in want.items():
            if k not in params or params[k].shape != a.shape:
                raise RidepoolError(
                    f"checkpoint does not match configured architecture at {k}")
    return _eval_common(cfg, out_dir, args, params=params)


def cmd_bench(cfg, out_dir: Path, args) -> int:
    net, run, demand = build_from_config(cfg)
    rows = []
    simulate_day(net, run, demand, MyopicPolicy(), day_key=0, strict=False,
                 metrics_out=rows)
    ms = np.array([m.wall_ms for m in rows])
    budget = run.delta * 1e3
    report = {
        "epochs": len(rows),
        "dispatch_ms_mean": float(ms.mean()),
        "dispatch_ms_p95": float(np.percentile(ms, 95)),
        "dispatch_ms_max": float(ms.max()),
        "epoch_budget_ms": budget,
        "within_budget": bool(ms.max() < budget),
    }
    (out_dir / "bench.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    print(f"dispatch: mean {report['dispatch_ms_mean']:.1f} ms, "
          f"max {report['dispatch_ms_max']:.1f} ms, budget {budget:.0f} ms")
    return 0 if report["within_budget"] else 1


def cmd_verify(cfg, out_dir: Path, args) -> int:
    failures = oracles.run_all(verbose=True)
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ridepool",
        description="fleet dispatch simulator with learned value assignment")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted path)")
    common.add_argument("--out", default="runs/out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-network", parents=[common],
                   help="build the road network and write it out")
    p_train = sub.add_parser("train", parents=[common],
                             help="train the value function")
    p_train.add_argument("--episodes", type=int, default=None)
    for name in ("evaluate", "baseline"):
        p = sub.add_parser(name, parents=[common], help=f"run {name} rollouts")
        p.add_argument("--days", type=int, default=None)
        if name == "evaluate":
            p.add_argument("--checkpoint", help="trained weights (.npz)")
            p.add_argument("--zero", action="store_true",
                           help="use all-zero weights (reduces to baseline)")
    sub.add_parser("bench", parents=[common],
                   help="time per-epoch dispatch against the budget")
    sub.add_parser("verify", parents=[common],
                   help="run the exactness oracle suites")

    args = parser.parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args.set)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out_dir)
        handler = {
            "gen-network": cmd_gen_network,
            "train": cmd_train,
            "evaluate": cmd_evaluate,
            "baseline": cmd_baseline,
            "bench": cmd_bench,
            "verify": cmd_verify,
        }[args.command]
        return handler(cfg, out_dir, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RidepoolError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
