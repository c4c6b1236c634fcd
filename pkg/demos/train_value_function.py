"""
Training the value function on a toy city
=========================================

A compressed version of the full training loop: simulate days, store every
decision epoch, regress toward one-step targets, and watch validation move.
Runs in about a minute; real studies use a bigger city and many more
episodes.
"""

import tempfile
from pathlib import Path

import numpy as np

from ridepool.demand import RateProfile, grid_zone_weights
from ridepool.roadnet import grid_network, train_embeddings
from ridepool.sim import DemandModel, RunConfig, evaluate, train
from ridepool.valuefn import load_checkpoint

net = grid_network(6, 6, edge_seconds=60.0)
emb, _ = train_embeddings(net, dim=8, steps=300, seed=0)

cfg = RunConfig(
    fleet_size=6, capacity=2, horizon=40, tau=300.0,
    gamma=0.9, lr=1e-3, minibatch=16, replay_capacity=400,
    update_frequency=1, target_update=40, sigma_start=0.3, sigma_end=0.05,
    episodes=4, eval_days=3, emb_dim=8, hidden=16, head1=16, head2=8,
)

# morning lull, midday peak, evening lull; origins lean toward one corner
demand = DemandModel(RateProfile.from_pairs([(0, 10, 1.0), (10, 30, 3.5),
                                             (30, 40, 1.0)]),
                     grid_zone_weights(6, 6, [(0, 0, 2, 2, 4.0)]), None)

with tempfile.TemporaryDirectory() as td:
    ckpt = Path(td) / "value.ckpt.npz"
    result = train(cfg, net, emb, demand, checkpoint_path=ckpt,
                   on_episode=lambda n, rate, res: print(
                       f"episode {n}: validation rate {rate:.3f}, "
                       f"loss {np.mean(res.losses[-40:]):.4f}, "
                       f"sigma {res.trainer.current_sigma():.2f}"))
    print(f"best validation rate {result.best_val:.3f} "
          f"after {result.episodes_run} episodes")

    # held-out comparison: myopic baseline against the learned values
    base = evaluate(cfg, net, None, demand)
    learned = evaluate(cfg, net, emb, demand, params=result.trainer.online)
    print(f"myopic  mean rate {base['mean_rate']:.3f} "
          f"(+/- {base['std_rate']:.3f})")
    print(f"learned mean rate {learned['mean_rate']:.3f} "
          f"(+/- {learned['std_rate']:.3f})")

    # the checkpoint restores bit-identical weights
    back = load_checkpoint(ckpt)
    same = all(np.array_equal(result.trainer.online[k], back.online[k])
               for k in result.trainer.online)
    print("checkpoint round trip identical:", same)
