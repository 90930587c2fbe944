"""Matrix game played through the selector-level trainer.

A follower picks a row of a payoff table, a leader then picks a column and
the follower is paid the entry. The follower critic sees the leader choice
as a one-hot, so its root value is trained toward the pessimistic bootstrap
``min_l V_f(row, l)`` and, as the follower's selector improves, toward the
security value ``max_f min_l T[f, l]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .hrl import PolicyParams
from .lfmappo import RolloutBuffer, TrainConfig, Transition, lf_value_target, maxmin_solve, train_iteration  # noqa: F401
from .neuralcore import AdamState, categorical_head_sample, init_mlp, mlp_forward


@dataclass
class MatrixGameConfig:
    table: tuple[tuple[float, ...], ...] = ((4.0, 1.0, 7.0), (3.0, 2.0, 2.5), (-1.0, 0.0, 9.0))
    episodes_per_update: int = 64
    max_updates: int = 10_000
    tol: float = 0.05
    patience: int = 50  # consecutive updates inside tolerance before stopping
    hidden: tuple[int, ...] = (32,)
    # the selector explores while the critic learns the leaf values, then commits
    entropy_start: float = 1.0
    entropy_anneal: int = 500  # updates to decay linearly to train.entropy_coef
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        gamma=1.0, gae_lambda=1.0, lr=3e-3, epochs=1, minibatch_size=1 << 20, train_motor=False, lf_alpha=0.5,
        entropy_coef=0.0))


def _state(n_rows: int, row: int | None) -> np.ndarray:
    """Root state, or the state after the follower chose ``row``."""
    s = np.zeros(1 + n_rows)
    s[0 if row is None else 1 + row] = 1.0
    return s


def _onehot(k: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v


def init_game_policy(n_rows: int, n_cols: int, hidden, rng: np.random.Generator) -> PolicyParams:
    d = 1 + n_rows
    nets = {
        "selector_follower": init_mlp([d, *hidden, n_rows], rng, out_gain=0.01),
        "critic_follower": init_mlp([d + n_cols, *hidden, 1], rng),
    }
    return PolicyParams("lfmappo", 1, nets, {k: AdamState.zeros_like(v.tensors()) for k, v in nets.items()})


def follower_values(params: PolicyParams, state: np.ndarray, n_cols: int) -> np.ndarray:
    x = np.stack([np.concatenate([state, _onehot(l, n_cols)]) for l in range(n_cols)])
    return mlp_forward(params.nets["critic_follower"], x)[0][:, 0]


def play(params: PolicyParams, table: np.ndarray, n: int, rng: np.random.Generator, episode0: int = 0) -> RolloutBuffer:
    """``n`` two-stage episodes as selector-level transitions."""
    n_rows, n_cols = table.shape
    buf = RolloutBuffer(capacity=2 * n)
    root = _state(n_rows, None)
    root_vals = follower_values(params, root, n_cols)
    logits = mlp_forward(params.nets["selector_follower"], root)[0]
    next_vals = {f: follower_values(params, _state(n_rows, f), n_cols) for f in range(n_rows)}
    leaf_logits = {f: mlp_forward(params.nets["selector_follower"], _state(n_rows, f))[0] for f in range(n_rows)}
    for e in range(n):
        ep = episode0 + e
        f, lp = categorical_head_sample(logits, rng)
        l0, l1 = (int(x) for x in rng.integers(0, n_cols, 2))
        s1 = _state(n_rows, f)
        first = Transition((0, ep, 0), (0, ep, 0), np.zeros(1), np.zeros(3), 0.0, f, "follower", reward=0.0,
                           epoch_start=True, value_head="critic_follower", macro_obs=root,
                           critic_obs=np.concatenate([root, _onehot(l0, n_cols)]), selector_log_prob=lp,
                           selector_value=float(root_vals[l0]), selector_next_values=next_vals[f], leader_action=l0)
        buf.add(first)
        # second stage: only the leader moves; the payoff ends the episode
        k, klp = categorical_head_sample(leaf_logits[f], rng)  # inert choice, kept on-policy
        leaf = Transition((1, ep, 0), (1, ep, 0), np.zeros(1), np.zeros(3), 0.0, k, "follower",
                          reward=float(table[f, l1]), done=True, epoch_start=True, value_head="critic_follower",
                          macro_obs=s1, critic_obs=np.concatenate([s1, _onehot(l1, n_cols)]),
                          selector_log_prob=klp, selector_value=float(next_vals[f][l1]),
                          selector_next_values=np.zeros(n_cols), leader_action=l1)
        buf.add(leaf)
    buf.episode_returns = [0.0]
    return buf


def train_matrix_game(seed: int, cfg: MatrixGameConfig | None = None) -> dict:
    """Train until the root follower value sits within ``tol`` of the security value.

    Returns the security value, the final root values per leader column, the
    number of updates used and the value history.
    """
    cfg = cfg or MatrixGameConfig()
    table = np.asarray(cfg.table, dtype=np.float64)
    target, best_row = maxmin_solve(table)
    n_rows, n_cols = table.shape
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    params = init_game_policy(n_rows, n_cols, cfg.hidden, rng)
    history, inside = [], 0
    for u in range(cfg.max_updates):
        frac = min(1.0, u / cfg.entropy_anneal) if cfg.entropy_anneal else 1.0
        tcfg = replace(cfg.train, entropy_coef=cfg.entropy_start + frac * (cfg.train.entropy_coef - cfg.entropy_start))
        buf = play(params, table, cfg.episodes_per_update, rng, u * cfg.episodes_per_update)
        params, m = train_iteration(params, buf, tcfg, rng, u)
        v = follower_values(params, _state(n_rows, None), n_cols)
        history.append(v)
        inside = inside + 1 if np.max(np.abs(v - target)) < cfg.tol else 0
        if inside >= cfg.patience:
            break
    probs = np.exp(mlp_forward(params.nets["selector_follower"], _state(n_rows, None))[0])
    return {"security_value": target, "security_row": best_row, "root_values": history[-1], "updates": len(history),
            "history": np.array(history), "policy": probs / probs.sum(), "params": params}
