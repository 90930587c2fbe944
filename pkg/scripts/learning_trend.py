"""Return curve on the scaled 2v2 scenario against the scripted opponent.

    python scripts/learning_trend.py --seeds 0 1 2 --out results/trend.csv
    python scripts/learning_trend.py --set train.pretrain_iters=40 --set train.iters=100
"""

import argparse
import csv
import os
import time

import numpy as np

from lfcombat.config import load_config
from lfcombat.curriculum import pretrain
from lfcombat.lfmappo import CollectEnv, new_policy, training_run

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "scaled_2v2.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", default="results/trend.csv")
    args = ap.parse_args()

    cfg = load_config(args.config, args.set)
    env = CollectEnv.from_run_config(cfg)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "iteration", "mean_return", "entropy", "win_fraction"])
        for seed in args.seeds:
            t0 = time.perf_counter()
            params = new_policy(cfg.train.variant, cfg.arena.team_size, cfg.model, seed)
            for _, params, _ in pretrain(params, cfg.train, env, seed, cfg.train.pretrain_iters):
                pass
            rets = []
            for params, m in training_run(params, cfg.train, env, seed):
                rets.append(m["mean_return"])
                w.writerow([seed, m["iteration"], m["mean_return"], m["entropy"], m["win_fraction"]])
            rets = np.array(rets)
            first, last = np.nanmean(rets[:10]), np.nanmean(rets[-10:])
            print(f"seed {seed}: first-10 {first:8.2f}  last-10 {last:8.2f}  "
                  f"{'up' if last > first else 'not up'}  ({time.perf_counter() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
