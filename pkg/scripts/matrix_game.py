"""Follower value convergence on a fixed 3x3 leader-follower game.

    python scripts/matrix_game.py --seeds 0 1 2
"""

import argparse
import time

import numpy as np

from lfcombat.matrixgame import MatrixGameConfig, train_matrix_game


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--tol", type=float, default=0.05)
    args = ap.parse_args()

    cfg = MatrixGameConfig(tol=args.tol)
    print("payoff table (rows: follower, columns: leader)")
    print(np.array(cfg.table))
    for seed in args.seeds:
        t0 = time.perf_counter()
        res = train_matrix_game(seed, cfg)
        err = np.max(np.abs(res["root_values"] - res["security_value"]))
        print(f"seed {seed}: security value {res['security_value']:.3f} (row {res['security_row']}), "
              f"root values {np.round(res['root_values'], 3)}, |err| {err:.3f}, "
              f"row policy {np.round(res['policy'], 3)}, {res['updates']} updates, "
              f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
