"""Win rate against the scripted opponent for each trainer variant.

Trains every (variant, seed) pair on the scaled scenario, then plays a
tournament per trained policy and prints the raw and median win rates.

    python scripts/ablation.py --variants lfmappo mappo ippo --seeds 0 1 2
"""

import argparse
import os
import time

import numpy as np

from lfcombat.config import load_config
from lfcombat.curriculum import pretrain
from lfcombat.evalharness import MatchEnv, tournament
from lfcombat.lfmappo import CollectEnv, new_policy, training_run

HERE = os.path.dirname(os.path.abspath(__file__))


def train_and_evaluate(cfg, seed):
    env = CollectEnv.from_run_config(cfg)
    params = new_policy(cfg.train.variant, cfg.arena.team_size, cfg.model, seed)
    for _, params, _ in pretrain(params, cfg.train, env, seed, cfg.train.pretrain_iters):
        pass
    for params, _ in training_run(params, cfg.train, env, seed):
        pass
    return tournament(params, cfg.train.opponent, cfg.eval.n, 0, MatchEnv.from_run_config(cfg))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "scaled_2v2.yaml"))
    ap.add_argument("--variants", nargs="+", default=["lfmappo", "mappo"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    print(f"{'variant':8s} {'seed':>4s} {'win':>6s} {'draw':>6s} {'loss':>6s} {'time':>6s}")
    medians = {}
    for variant in args.variants:
        cfg = load_config(args.config, [*args.set, f"train.variant={variant}"])
        wins = []
        for seed in args.seeds:
            t0 = time.perf_counter()
            r = train_and_evaluate(cfg, seed)
            wins.append(r.win_rate)
            print(f"{variant:8s} {seed:4d} {r.win_rate:6.3f} {r.draw_rate:6.3f} {r.loss_rate:6.3f} "
                  f"{time.perf_counter() - t0:5.0f}s", flush=True)
        medians[variant] = float(np.median(wins))
    print("median win rate: " + ", ".join(f"{v} {m:.3f}" for v, m in medians.items()))


if __name__ == "__main__":
    main()
