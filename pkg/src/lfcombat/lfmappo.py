"""Hierarchical leader-follower PPO: rollouts, advantage estimation, losses, updates.

Two levels are trained from one buffer. The motor level (three Gaussian
manoeuvre actors plus a shared critic conditioned on the active manoeuvre)
sees one transition per agent step. The selector level (categorical heads)
sees one transition per selector epoch, carrying the summed epoch reward.

Variants share every part except the selector level:

* ``lfmappo``: separate leader/follower selectors. The leader critic is
  centralised; the follower critic conditions on the leader's choice and is
  regressed toward a pessimistic, min-over-leader-choices target.
* ``mappo``: one shared selector and one centralised critic.
* ``ippo``: one shared selector and a local critic.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import arena as ar
from .errors import ProtocolError, ShapeError
from .hrl import (
    ControllerGains, HierarchicalTeam, HierarchyConfig, ModelConfig, PolicyParams, critic_name, init_policy,
    selector_name, sub_name,
)
from .neuralcore import (
    adam_update, clip_by_global_norm, gaussian_entropy, gaussian_log_prob, log_softmax, mlp_backward,
    mlp_forward,
)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("iteration", "mean_return", "actor_loss", "critic_loss", "entropy", "clip_fraction", "win_rate_eval")


@dataclass
class TrainConfig:
    variant: str = "lfmappo"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    lr: float = 3e-4
    critic_coef: float = 0.5
    entropy_coef: float = 0.01
    lf_alpha: float = 0.1
    epochs: int = 4
    minibatch_size: int = 256
    max_grad_norm: float = 5.0
    buffer_size: int = 3000
    n_arenas: int = 2
    steps_per_arena: int = 300  # agent steps per arena per iteration
    opponent: str = "scripted:pure_pursuit"
    iters: int = 100
    checkpoint_every: int = 10
    eval_every: int = 10
    eval_matches: int = 16
    train_motor: bool = True
    train_selector: bool = True
    pretrain_iters: int = 0  # motor-only iterations per manoeuvre before the main run
    normalize_advantage: bool = True

    def validate(self) -> list[str]:
        errs = []
        if self.variant not in ("lfmappo", "mappo", "ippo"):
            errs.append(f"train.variant must be lfmappo, mappo or ippo, got {self.variant!r}")
        if not 0.0 <= self.gamma <= 1.0:
            errs.append("train.gamma must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            errs.append("train.gae_lambda must lie in [0, 1]")
        if self.clip_epsilon <= 0:
            errs.append("train.clip_epsilon must be > 0")
        if not 0.0 < self.lf_alpha <= 1.0:
            errs.append("train.lf_alpha must lie in (0, 1]")
        if self.lr <= 0:
            errs.append("train.lr must be > 0")
        for k in ("epochs", "minibatch_size", "buffer_size", "n_arenas", "steps_per_arena"):
            if getattr(self, k) < 1:
                errs.append(f"train.{k} must be >= 1")
        for k in ("iters", "checkpoint_every", "eval_every", "eval_matches", "pretrain_iters"):
            if getattr(self, k) < 0:
                errs.append(f"train.{k} must be >= 0")
        if self.critic_coef < 0 or self.entropy_coef < 0 or self.max_grad_norm < 0:
            errs.append("train coefficients and max_grad_norm must be >= 0")
        return errs


# ---------------------------------------------------------------- returns and advantages

def compute_returns(rewards: Sequence[float], gamma: float, dones: Sequence[bool] | None = None,
                    bootstrap: float = 0.0) -> np.ndarray:
    """Discounted return from every step, ``r[t]`` being the reward that follows step ``t``."""
    r = np.asarray(rewards, dtype=np.float64)
    d = np.zeros(len(r), bool) if dones is None else np.asarray(dones, bool)
    out = np.empty_like(r)
    g = float(bootstrap)
    for t in range(len(r) - 1, -1, -1):
        g = r[t] + gamma * (0.0 if d[t] else g)
        out[t] = g
    return out


def compute_gae(rewards: Sequence[float], values: Sequence[float], bootstrap_value: float, gamma: float,
                lam: float, dones: Sequence[bool] | None = None,
                next_values: Sequence[float] | None = None) -> np.ndarray:
    """Generalised advantage estimates by backward recursion.

    ``next_values`` overrides the usual shifted ``values`` as the per-step
    bootstrap; the trace is cut wherever ``dones`` is set.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise ShapeError(f"rewards {r.shape} and values {v.shape} differ")
    d = np.zeros(len(r), bool) if dones is None else np.asarray(dones, bool)
    if next_values is None:
        nv = np.append(v[1:], bootstrap_value)
    else:
        nv = np.asarray(next_values, dtype=np.float64)
    adv = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        keep = 0.0 if d[t] else 1.0
        delta = r[t] + gamma * keep * nv[t] - v[t]
        acc = delta + gamma * lam * keep * acc
        adv[t] = acc
    return adv


def lf_value_target(v_now: float, reward: float, candidates: Sequence[float], gamma: float, lf_alpha: float,
                    done: bool) -> float:
    """Soft follower-critic target with a pessimistic bootstrap over leader choices."""
    if len(candidates) == 0:
        raise ProtocolError("follower value target needs at least one leader candidate")
    boot = 0.0 if done else min(float(c) for c in candidates)
    return (1.0 - lf_alpha) * v_now + lf_alpha * (reward + gamma * boot)


def maxmin_solve(table) -> tuple[float, int]:
    """Security value ``max_f min_l table[f][l]`` and its lowest maximising row."""
    rows = [list(row) for row in table]
    if not rows or not rows[0]:
        raise ShapeError("payoff table is empty")
    if any(len(row) != len(rows[0]) for row in rows):
        raise ShapeError("payoff table is ragged")
    best, arg = None, 0
    for f, row in enumerate(rows):
        worst = min(row)
        if best is None or worst > best:
            best, arg = worst, f
    return best, arg


# ---------------------------------------------------------------- losses

def critic_loss(predicted, targets) -> float:
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ")
    return float(np.mean((p - t) ** 2))


def clipped_surrogate(ratio, advantage, clip_epsilon: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantage)


def actor_loss(logp_new, logp_old, advantage, clip_epsilon: float) -> float:
    """Mean clipped surrogate (to be maximised)."""
    ratio = np.exp(np.asarray(logp_new, dtype=np.float64) - np.asarray(logp_old, dtype=np.float64))
    return float(np.mean(clipped_surrogate(ratio, advantage, clip_epsilon)))


def total_loss(critic_term: float, actor_term: float, entropy_term: float, critic_coef: float = 0.5,
               actor_coef: float = 1.0, entropy_coef: float = 0.01) -> float:
    """Scalar minimised by the trainer: critic error minus surrogate minus entropy bonus."""
    return critic_coef * critic_term - actor_coef * actor_term - entropy_coef * entropy_term


def normalize(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean() if len(adv) else adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# ---------------------------------------------------------------- experience

@dataclass
class Transition:
    """One agent step; selector fields are filled only at epoch starts."""
    key: tuple  # (arena, episode, uid): transitions sharing a key form one trajectory
    epoch_id: tuple  # (arena, episode, epoch index) for overflow truncation
    obs: np.ndarray
    action: np.ndarray  # pre-tanh Gaussian sample
    log_prob: float
    subpolicy: int
    role: str
    reward: float = 0.0
    value: float = 0.0
    next_value: float = 0.0
    done: bool = False
    epoch_start: bool = False
    value_head: str | None = None  # selector-level critic that scores this transition
    macro_obs: np.ndarray | None = None
    critic_obs: np.ndarray | None = None
    selector_log_prob: float = 0.0
    selector_value: float = 0.0
    selector_next_values: np.ndarray | None = None  # one per leader choice for follower heads
    leader_action: int | None = None


class RolloutBuffer:
    """Capacity-bounded experience store, cleared after every update."""

    def __init__(self, capacity: int = 3000):
        self.capacity = capacity
        self.items: list[Transition] = []
        self.truncations = 0
        self.episode_returns: list[float] = []
        self.episode_results: list[str] = []

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.items)

    def add(self, tr: Transition) -> None:
        if not np.isfinite(tr.reward):
            raise ValueError("non-finite reward")
        if len(self.items) >= self.capacity:
            self._drop_earliest_epoch()
        self.items.append(tr)

    def _drop_earliest_epoch(self) -> None:
        first = self.items[0].epoch_id
        self.items = [t for t in self.items if t.epoch_id != first]
        self.truncations += 1
        warnings.warn(f"rollout buffer full ({self.capacity}); dropped earliest epoch {first}", RuntimeWarning,
                      stacklevel=3)

    def extend(self, trs) -> None:
        for t in trs:
            self.add(t)

    def clear(self) -> None:
        self.items.clear()
        self.episode_returns.clear()
        self.episode_results.clear()

    def trajectories(self) -> dict[tuple, list[Transition]]:
        out: dict[tuple, list[Transition]] = {}
        for t in self.items:
            out.setdefault(t.key, []).append(t)
        return out


def _onehot(k: int, n: int = ar.N_SUBPOLICIES) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v


def _value(net, x: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward(net, x)
    return out[..., 0]


def follower_candidates(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    """V_f(s, l) for every leader choice ``l``; ``obs`` is the leader-format observation."""
    x = np.stack([np.concatenate([obs, _onehot(k)]) for k in range(ar.N_SUBPOLICIES)])
    return _value(params.nets["critic_follower"], x)


def selector_bootstrap(params: PolicyParams, head: str, arena: ar.ArenaState, uid: int) -> np.ndarray:
    """Selector-level next-state value(s) for an open epoch of ``uid`` scored by ``head``."""
    obs = ar.observe(arena, uid, include_leader_action=False)
    if head == "critic_follower":
        return follower_candidates(params, obs)
    if head == "critic" and params.variant == "ippo":
        return _value(params.nets[head], obs)[None]
    x = np.concatenate([ar.global_state(arena, arena.agents[uid].team), obs])
    return _value(params.nets[head], x)[None]


def _record_decisions(params: PolicyParams, decisions, arena_idx: int, episode: int, epoch: int) -> list[Transition]:
    variant = params.variant
    if not decisions:
        return []
    motor_x = np.stack([np.concatenate([d.obs, _onehot(d.subpolicy)]) for d in decisions])
    motor_v = _value(params.nets["critic_sub"], motor_x)
    out = []
    for d, v in zip(decisions, motor_v):
        tr = Transition((arena_idx, episode, d.uid), (arena_idx, episode, epoch), d.obs, np.asarray(d.raw_action),
                        d.log_prob, d.subpolicy, d.role, value=float(v), epoch_start=d.epoch_start)
        if d.epoch_start:
            tr.value_head = critic_name(variant, d.role)
            tr.macro_obs, tr.critic_obs = d.macro_obs, d.critic_obs
            tr.selector_log_prob = d.selector_log_prob
            tr.leader_action = d.leader_action
        out.append(tr)
    # selector values batched per head
    heads: dict[str, list[Transition]] = {}
    for tr in out:
        if tr.epoch_start:
            heads.setdefault(tr.value_head, []).append(tr)
    for head, trs in heads.items():
        vals = _value(params.nets[head], np.stack([t.critic_obs for t in trs]))
        for t, val in zip(trs, vals):
            t.selector_value = float(val)
    return out


@dataclass
class RolloutStats:
    episode_returns: list[float] = field(default_factory=list)
    results: list[str] = field(default_factory=list)


def _episode_seed(seed: int, iteration: int, arena_idx: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, arena_idx, episode]).generate_state(1)[0])


def _collect_arena(params: PolicyParams, arena_idx: int, steps: int, seed: int, iteration: int, env) -> tuple[
        list[Transition], RolloutStats]:
    from .evalharness import make_team  # local: evalharness builds on the hierarchy too

    hcfg: HierarchyConfig = env.hierarchy
    policy_rng = np.random.default_rng(np.random.SeedSequence([seed, iteration, arena_idx, 2**31]))
    trs: list[Transition] = []
    stats = RolloutStats()
    episode = 0

    def start(ep):
        kw = {} if env.targeting is None else {"targeting": env.targeting}
        a = ar.reset(env.arena, _episode_seed(seed, iteration, arena_idx, ep), dynamics=env.dynamics,
                     spawn_fn=env.spawn_fn, **kw)
        blue = HierarchicalTeam(params, "blue", hcfg, env.gains, env.dynamics, rng=policy_rng,
                                forced_subpolicy=env.forced_subpolicy)
        red = make_team(env.opponent, "red", hcfg=hcfg, gains=env.gains, dyn=env.dynamics, ecfg=env.eval,
                        rng=np.random.default_rng(np.random.SeedSequence([seed, iteration, arena_idx, ep, 1])))
        return a, blue, red

    arena, blue, red = start(episode)
    last: dict[int, Transition] = {}  # uid -> latest motor transition
    open_epoch: dict[int, Transition] = {}  # uid -> epoch-start transition awaiting bootstrap
    ep_return: dict[int, float] = {}
    agent_steps = 0
    while True:
        due = blue.physics_step % hcfg.agent_decimation == 0
        if due and agent_steps >= steps:
            break
        if due:
            epoch = blue.agent_step // hcfg.selector_epoch
            new_epoch = blue.agent_step % hcfg.selector_epoch == 0
            if new_epoch:
                # close the previous epochs with next-state values before roles change
                for uid, tr in list(open_epoch.items()):
                    tr.selector_next_values = selector_bootstrap(params, tr.value_head, arena, uid)
                open_epoch.clear()
        controls = blue.act(arena)
        if due:
            new = _record_decisions(params, blue.last_decisions, arena_idx, episode, epoch)
            for tr in new:
                prev = last.get(tr.key[2])
                if prev is not None:
                    prev.next_value = tr.value
                last[tr.key[2]] = tr
                if tr.epoch_start:
                    open_epoch[tr.key[2]] = tr
            trs += new
            agent_steps += 1
        controls.update(red.act(arena))
        arena, rewards, _, done = ar.step(arena, controls)
        for uid, rb in rewards.items():
            if arena.agents[uid].team != "blue" or uid not in last:
                continue
            r = rb.total
            last[uid].reward += r
            ep_return[uid] = ep_return.get(uid, 0.0) + r
            if not arena.agents[uid].state.alive and not done:
                last[uid].done = True
                open_epoch.pop(uid, None)
                last.pop(uid)
        if done:
            for uid, tr in last.items():
                tr.done = True
            for tr in open_epoch.values():
                tr.selector_next_values = np.zeros(1)
            blue_ids = arena.team_ids("blue")
            stats.episode_returns.append(float(np.mean([ep_return.get(u, 0.0) for u in blue_ids])))
            stats.results.append(ar.outcome(arena).result)
            last, open_epoch, ep_return = {}, {}, {}
            episode += 1
            arena, blue, red = start(episode)
    # truncated trajectories bootstrap from the current state
    for uid, tr in last.items():
        obs = ar.observe(arena, uid, include_leader_action=False)
        x = np.concatenate([obs, _onehot(arena.agents[uid].subpolicy)])
        tr.next_value = float(_value(params.nets["critic_sub"], x))
    for uid, tr in open_epoch.items():
        tr.selector_next_values = selector_bootstrap(params, tr.value_head, arena, uid)
    return trs, stats


@dataclass
class CollectEnv:
    """Environment settings for rollout collection."""
    arena: ar.ArenaConfig = field(default_factory=ar.ArenaConfig)
    dynamics: object = None
    targeting: object = None
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    gains: ControllerGains = field(default_factory=ControllerGains)
    eval: object = None
    opponent: object = "scripted:pure_pursuit"
    spawn_fn: Callable | None = None
    forced_subpolicy: int | None = None

    def __post_init__(self):
        from .evalharness import EvalConfig
        from .flightdyn import DynamicsConfig
        if self.dynamics is None:
            self.dynamics = DynamicsConfig()
        if self.eval is None:
            self.eval = EvalConfig()

    @classmethod
    def from_run_config(cls, cfg, **kw) -> "CollectEnv":
        return cls(cfg.arena, cfg.dynamics, cfg.targeting, cfg.hierarchy, cfg.controller.gains, cfg.eval,
                   kw.pop("opponent", cfg.train.opponent), **kw)


def collect_rollouts(params: PolicyParams, n_arenas: int, steps_per_arena: int, seed: int, iteration: int = 0,
                     env: CollectEnv | None = None, capacity: int = 3000, parallel: int = 1) -> RolloutBuffer:
    """Run each arena for ``steps_per_arena`` agent steps on a frozen snapshot.

    Arenas are seeded independently from ``(seed, iteration, arena)`` so the
    buffer does not depend on how many workers run them.
    """
    env = env or CollectEnv()
    snap = params.snapshot()
    jobs = range(n_arenas)
    if parallel > 1 and n_arenas > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            parts = list(ex.map(_collect_arena, [snap] * n_arenas, jobs, [steps_per_arena] * n_arenas,
                                [seed] * n_arenas, [iteration] * n_arenas, [env] * n_arenas))
    else:
        parts = [_collect_arena(snap, i, steps_per_arena, seed, iteration, env) for i in jobs]
    buf = RolloutBuffer(capacity)
    for trs, stats in parts:
        buf.extend(trs)
        buf.episode_returns += stats.episode_returns
        buf.episode_results += stats.results
    return buf


def role_separation_violations(buf: RolloutBuffer) -> int:
    """Epoch-start transitions whose leader-action tag disagrees with their critic head."""
    bad = 0
    for t in buf:
        if not t.epoch_start:
            continue
        if t.value_head == "critic_leader" and t.leader_action is not None:
            bad += 1
        if t.value_head == "critic_follower" and t.leader_action not in range(ar.N_SUBPOLICIES):
            bad += 1
    return bad


# ---------------------------------------------------------------- datasets

@dataclass
class MotorBatch:
    obs: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray
    subpolicy: np.ndarray
    adv: np.ndarray
    ret: np.ndarray


@dataclass
class SelectorBatch:
    macro: np.ndarray  # object array: rows differ in width across heads
    critic_obs: np.ndarray
    choice: np.ndarray
    log_prob: np.ndarray
    adv: np.ndarray
    target: np.ndarray
    selector: np.ndarray  # selector net name per row
    head: np.ndarray  # critic net name per row


def build_motor_batch(buf: RolloutBuffer, cfg: TrainConfig) -> MotorBatch:
    obs, act, lp, sub, adv, ret = [], [], [], [], [], []
    for trs in buf.trajectories().values():
        r = [t.reward for t in trs]
        v = [t.value for t in trs]
        a = compute_gae(r, v, 0.0, cfg.gamma, cfg.gae_lambda, dones=[t.done for t in trs],
                        next_values=[t.next_value for t in trs])
        adv.append(a)
        ret.append(a + np.asarray(v))
        for t in trs:
            obs.append(t.obs)
            act.append(t.action)
            lp.append(t.log_prob)
            sub.append(t.subpolicy)
    return MotorBatch(np.array(obs), np.array(act), np.array(lp), np.array(sub, int), np.concatenate(adv),
                      np.concatenate(ret))


def selector_sequences(buf: RolloutBuffer) -> list[list[tuple[Transition, float, bool]]]:
    """Per trajectory: (epoch-start transition, summed epoch reward, epoch ended in termination)."""
    out = []
    for trs in buf.trajectories().values():
        seq = []
        for t in trs:
            if t.epoch_start:
                seq.append([t, 0.0, False])
            if seq:
                seq[-1][1] += t.reward
                seq[-1][2] = seq[-1][2] or t.done
        out.append([tuple(s) for s in seq])
    return out


def build_selector_batch(buf: RolloutBuffer, params: PolicyParams, cfg: TrainConfig) -> SelectorBatch:
    rows = []
    for seq in selector_sequences(buf):
        if not seq:
            continue
        rs = [s[1] for s in seq]
        vs = [s[0].selector_value for s in seq]
        ds = [s[2] for s in seq]
        nv = [float(np.min(s[0].selector_next_values)) if s[0].selector_next_values is not None else 0.0
              for s in seq]
        adv = compute_gae(rs, vs, 0.0, cfg.gamma, cfg.gae_lambda, dones=ds, next_values=nv)
        for (t, r, d), a, v in zip(seq, adv, vs):
            if t.value_head == "critic_follower":
                cands = t.selector_next_values if t.selector_next_values is not None else np.zeros(1)
                target = lf_value_target(v, r, cands, cfg.gamma, cfg.lf_alpha, d)
            else:
                target = a + v
            rows.append((t.macro_obs, t.critic_obs, t.subpolicy, t.selector_log_prob, a, target,
                         selector_name(params.variant, t.role), t.value_head))
    if not rows:
        e = np.zeros(0)
        return SelectorBatch(np.empty(0, object), np.empty(0, object), e.astype(int), e, e, e, np.empty(0, object),
                             np.empty(0, object))
    cols = list(zip(*rows))

    def objs(xs):
        arr = np.empty(len(xs), object)
        arr[:] = list(xs)
        return arr

    return SelectorBatch(objs(cols[0]), objs(cols[1]), np.array(cols[2], int), np.array(cols[3], float),
                         np.array(cols[4], float), np.array(cols[5], float), np.array(cols[6], object),
                         np.array(cols[7], object))


# ---------------------------------------------------------------- gradient steps

@dataclass
class UpdateStats:
    actor_loss: list[float] = field(default_factory=list)
    critic_loss: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    clipped: int = 0
    samples: int = 0
    min_violations: int = 0
    grad_norms: list[float] = field(default_factory=list)
    nonfinite: bool = False


def _surrogate_grad(logp_new: np.ndarray, logp_old: np.ndarray, adv: np.ndarray, eps: float, st: UpdateStats):
    """Per-sample surrogate, its derivative w.r.t. the new log-prob, and the clip/min audit."""
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    surr = np.minimum(unclipped, clipped)
    st.min_violations += int(np.sum((surr > unclipped) | (surr > clipped)))
    st.clipped += int(np.sum(np.abs(ratio - 1.0) > eps))
    st.samples += len(ratio)
    active = unclipped <= clipped  # gradient flows only through the unclipped branch
    return surr, np.where(active, ratio * adv, 0.0)


def _apply(params: PolicyParams, grads: dict[str, list[np.ndarray]], cfg: TrainConfig, st: UpdateStats) -> None:
    names = sorted(grads)
    flat = [g for n in names for g in grads[n]]
    if not all(np.all(np.isfinite(g)) for g in flat):
        st.nonfinite = True
        return
    flat, norm = clip_by_global_norm(flat, cfg.max_grad_norm)
    st.grad_norms.append(norm)
    i = 0
    for n in names:
        k = len(grads[n])
        adam_update(params.nets[n], flat[i:i + k], params.opt[n], lr=cfg.lr)
        i += k


def motor_step(params: PolicyParams, mb: MotorBatch, idx: np.ndarray, cfg: TrainConfig, st: UpdateStats) -> None:
    n = len(idx)
    adv = mb.adv[idx]
    if cfg.normalize_advantage:
        adv = normalize(adv)
    grads: dict[str, list[np.ndarray]] = {}
    surr_sum, ent_sum = 0.0, 0.0
    for k in range(ar.N_SUBPOLICIES):
        sel = idx[mb.subpolicy[idx] == k]
        if len(sel) == 0:
            continue
        a_k = adv[mb.subpolicy[idx] == k]
        net = params.nets[sub_name(k)]
        mean, cache = mlp_forward(net, mb.obs[sel])
        ls = net.log_std
        lp = gaussian_log_prob(mb.action[sel], mean, ls)
        surr, dlp = _surrogate_grad(lp, mb.log_prob[sel], a_k, cfg.clip_epsilon, st)
        surr_sum += float(surr.sum())
        h = gaussian_entropy(ls)
        ent_sum += h * len(sel)
        # loss = -(1/n) sum surr - c_e (n_k/n) H_k
        z = (mb.action[sel] - mean) * np.exp(-ls)
        g_lp = -dlp[:, None] / n
        d_mean = g_lp * z * np.exp(-ls)
        d_ls = np.sum(g_lp * (z * z - 1.0), axis=0) - cfg.entropy_coef * len(sel) / n
        grads[sub_name(k)] = mlp_backward(net, cache, d_mean) + [d_ls]
    critic = params.nets["critic_sub"]
    x = np.concatenate([mb.obs[idx], np.eye(ar.N_SUBPOLICIES)[mb.subpolicy[idx]]], axis=1)
    v, cache = mlp_forward(critic, x)
    err = v[:, 0] - mb.ret[idx]
    grads["critic_sub"] = mlp_backward(critic, cache, (cfg.critic_coef * 2.0 * err / n)[:, None])
    st.actor_loss.append(-surr_sum / n)
    st.critic_loss.append(float(np.mean(err ** 2)))
    st.entropy.append(ent_sum / n)
    _apply(params, grads, cfg, st)


def selector_step(params: PolicyParams, sb: SelectorBatch, idx: np.ndarray, cfg: TrainConfig,
                  st: UpdateStats) -> None:
    n = len(idx)
    adv = sb.adv[idx]
    if cfg.normalize_advantage:
        adv = normalize(adv)
    grads: dict[str, list[np.ndarray]] = {}
    surr_sum, ent_sum, crit_sum = 0.0, 0.0, 0.0
    for name in sorted(set(sb.selector[idx])):
        m = sb.selector[idx] == name
        sel = idx[m]
        net = params.nets[name]
        logits, cache = mlp_forward(net, np.stack(sb.macro[sel]))
        lsm = log_softmax(logits)
        p = np.exp(lsm)
        ch = sb.choice[sel]
        lp = lsm[np.arange(len(sel)), ch]
        surr, dlp = _surrogate_grad(lp, sb.log_prob[sel], adv[m], cfg.clip_epsilon, st)
        ent = -np.sum(p * lsm, axis=1)
        surr_sum += float(surr.sum())
        ent_sum += float(ent.sum())
        onehot = np.eye(logits.shape[1])[ch]
        d_logits = (-dlp[:, None] / n) * (onehot - p)
        # d(-c_e H)/d logits = c_e p (log p + H)
        d_logits += (cfg.entropy_coef / n) * p * (lsm + ent[:, None])
        grads[name] = mlp_backward(net, cache, d_logits)
    for head in sorted(set(sb.head[idx])):
        m = sb.head[idx] == head
        sel = idx[m]
        net = params.nets[head]
        v, cache = mlp_forward(net, np.stack(sb.critic_obs[sel]))
        err = v[:, 0] - sb.target[sel]
        crit_sum += float(np.sum(err ** 2))
        grads[head] = mlp_backward(net, cache, (cfg.critic_coef * 2.0 * err / n)[:, None])
    st.actor_loss.append(-surr_sum / n)
    st.critic_loss.append(crit_sum / n)
    st.entropy.append(ent_sum / n)
    _apply(params, grads, cfg, st)


def _minibatches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    k = max(1, math.ceil(n / size))
    return [c for c in np.array_split(perm, k) if len(c)]


def train_iteration(params: PolicyParams, buf: RolloutBuffer, cfg: TrainConfig, rng: np.random.Generator,
                    iteration: int = 0) -> tuple[PolicyParams, dict]:
    """One PPO update over the buffer; rolls back on any non-finite loss or gradient."""
    if len(buf) == 0:
        raise ProtocolError("train_iteration needs a non-empty buffer")
    snapshot = params.snapshot()
    motor = build_motor_batch(buf, cfg)
    sel = build_selector_batch(buf, params, cfg) if cfg.train_selector else None
    ms, ss = UpdateStats(), UpdateStats()
    for _ in range(cfg.epochs):
        if cfg.train_motor:
            for idx in _minibatches(len(motor.adv), cfg.minibatch_size, rng):
                motor_step(params, motor, idx, cfg, ms)
        if sel is not None and len(sel.adv):
            for idx in _minibatches(len(sel.adv), cfg.minibatch_size, rng):
                selector_step(params, sel, idx, cfg, ss)
    losses = ms.actor_loss + ms.critic_loss + ss.actor_loss + ss.critic_loss
    aborted = ms.nonfinite or ss.nonfinite or not all(math.isfinite(x) for x in losses)
    if aborted:
        log.warning("iteration %d: non-finite loss or gradient; parameters rolled back", iteration)
        params = snapshot
    # the selector level is what distinguishes the variants, so its losses are reported
    rep = ss if ss.samples else ms
    metrics = {
        "iteration": iteration,
        "mean_return": float(np.mean(buf.episode_returns)) if buf.episode_returns else float("nan"),
        "actor_loss": float(np.mean(rep.actor_loss)) if rep.actor_loss else float("nan"),
        "critic_loss": float(np.mean(rep.critic_loss)) if rep.critic_loss else float("nan"),
        "entropy": float(np.mean(rep.entropy)) if rep.entropy else float("nan"),
        "clip_fraction": rep.clipped / rep.samples if rep.samples else 0.0,
        "win_rate_eval": float("nan"),
        # extras, not part of the CSV schema
        "motor_actor_loss": float(np.mean(ms.actor_loss)) if ms.actor_loss else float("nan"),
        "motor_critic_loss": float(np.mean(ms.critic_loss)) if ms.critic_loss else float("nan"),
        "min_violations": ms.min_violations + ss.min_violations,
        "minibatches": len(ms.actor_loss) + len(ss.actor_loss),
        "aborted": aborted,
        "transitions": len(buf),
        "episodes": len(buf.episode_returns),
        "win_fraction": (buf.episode_results.count("win") / len(buf.episode_results)
                         if buf.episode_results else float("nan")),
    }
    buf.clear()
    return params, metrics


# ---------------------------------------------------------------- training driver

def new_policy(variant: str, team_size: int, model: ModelConfig, seed: int) -> PolicyParams:
    return init_policy(variant, team_size, model, np.random.default_rng(np.random.SeedSequence([seed, 7919])))


def training_run(params: PolicyParams, cfg: TrainConfig, env: CollectEnv, seed: int, start: int = 0,
                 iters: int | None = None, parallel: int = 1,
                 evaluate: Callable[[PolicyParams, int], float] | None = None) -> Iterator[tuple[PolicyParams, dict]]:
    """Yield ``(params, metrics)`` after every iteration ``start .. start+iters-1``.

    Every iteration draws from its own seed stream, so a resumed run
    continues exactly as an uninterrupted one would.
    """
    iters = cfg.iters if iters is None else iters
    for it in range(start, start + iters):
        buf = collect_rollouts(params, cfg.n_arenas, cfg.steps_per_arena, seed, it, env, cfg.buffer_size, parallel)
        rng = np.random.default_rng(np.random.SeedSequence([seed, it, 104729]))
        params, m = train_iteration(params, buf, cfg, rng, it)
        if evaluate is not None and cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            m["win_rate_eval"] = float(evaluate(params, it))
        yield params, m

