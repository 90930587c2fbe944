"""Three-level decision stack.

Top: a categorical selector picks one of three manoeuvre sub-policies and
holds it for a selector epoch. Middle: the active sub-policy emits heading,
pitch and throttle deltas. Bottom: a fixed PD autopilot turns the desired
attitude into surface commands every physics step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import arena as ar
from .flightdyn import DEFAULT_DYNAMICS, ControlInput, DynamicsConfig, UavState, clamp_controls, trim_throttle, wrap_angle
from .neuralcore import (
    AdamState, Mlp, categorical_head_sample, categorical_mode, gaussian_head_sample, init_mlp, mlp_forward,
)
from .roles import RoleAssignment, assign_roles, promote  # noqa: F401  (re-exported)

VARIANTS = ("lfmappo", "mappo", "ippo")


class SubPolicyId(enum.IntEnum):
    APPROACH = 0
    OFFENSIVE = 1
    DEFENSIVE = 2


@dataclass(frozen=True, slots=True)
class DesiredAttitude:
    heading_cmd: float  # rad
    pitch_cmd: float  # rad
    throttle_cmd: float  # [0, 1]


@dataclass
class HierarchyConfig:
    selector_epoch: int = 10  # agent steps per selector decision
    agent_decimation: int = 5  # physics steps per agent step
    max_heading_delta: float = math.pi / 2
    max_pitch_delta: float = math.pi / 6
    follower_throttle_authority: float = 1.25

    def validate(self) -> list[str]:
        errs = []
        if self.selector_epoch < 1 or self.agent_decimation < 1:
            errs.append("hierarchy.selector_epoch and hierarchy.agent_decimation must be >= 1")
        if self.max_heading_delta <= 0 or self.max_pitch_delta <= 0:
            errs.append("hierarchy.max_heading_delta / max_pitch_delta must be > 0")
        if self.follower_throttle_authority <= 0:
            errs.append("hierarchy.follower_throttle_authority must be > 0")
        return errs


@dataclass
class ControllerGains:
    k_heading: float = 3.0  # bank demand per rad of heading error
    k_roll: float = 3.0
    k_roll_damp: float = 0.6
    k_pitch: float = 3.0
    k_pitch_damp: float = 0.6
    k_rudder: float = 1.0
    k_yaw_damp: float = 0.5
    n_pitch: float = 4.0  # g available to the elevator
    n_yaw: float = 1.0  # g available to the rudder

    def validate(self) -> list[str]:
        return [f"controller.gains.{k} must be >= 0" for k, v in vars(self).items() if v < 0]


@dataclass
class ControllerConfig:
    gains: ControllerGains = field(default_factory=ControllerGains)

    def validate(self) -> list[str]:
        return self.gains.validate()


@dataclass
class ModelConfig:
    hidden: tuple[int, ...] = (128, 128)
    log_std_init: float = -0.5

    def validate(self) -> list[str]:
        if not self.hidden or min(self.hidden) < 1:
            return ["model.hidden must list positive layer widths"]
        return []


DEFAULT_GAINS = ControllerGains()
DEFAULT_HIERARCHY = HierarchyConfig()


def _clip(x: float, lim: float) -> float:
    return -lim if x < -lim else (lim if x > lim else x)


def low_level_control(state: UavState, desired: DesiredAttitude, gains: ControllerGains = DEFAULT_GAINS,
                      dyn: DynamicsConfig = DEFAULT_DYNAMICS) -> ControlInput:
    """Bank-to-turn PD autopilot with elevator and rudder g-limits."""
    e_psi = wrap_angle(desired.heading_cmd - state.psi)
    phi_d = _clip(gains.k_heading * e_psi, dyn.max_bank)
    d_phi = gains.k_roll * (phi_d - state.phi) - gains.k_roll_damp * state.p / dyn.max_roll_rate
    d_theta = gains.k_pitch * (desired.pitch_cmd - state.theta) - gains.k_pitch_damp * state.q / dyn.max_pitch_rate
    d_theta = _clip(d_theta, min(1.0, gains.n_pitch * dyn.g / (state.v * dyn.max_pitch_rate)))
    d_psi = gains.k_rudder * e_psi - gains.k_yaw_damp * state.r / dyn.max_yaw_rate
    d_psi = _clip(d_psi, min(1.0, gains.n_yaw * dyn.g / (state.v * dyn.max_yaw_rate)))
    return clamp_controls(d_phi, d_theta, d_psi, 2.0 * desired.throttle_cmd - 1.0)


def hold_attitude(state: UavState, dyn: DynamicsConfig = DEFAULT_DYNAMICS) -> DesiredAttitude:
    return DesiredAttitude(state.psi, state.theta, trim_throttle(state.v, dyn))


def action_to_attitude(state: UavState, squashed: np.ndarray, role: str, hcfg: HierarchyConfig = DEFAULT_HIERARCHY,
                       dyn: DynamicsConfig = DEFAULT_DYNAMICS) -> DesiredAttitude:
    """Map a squashed action in (-1, 1)^3 to commands relative to the current attitude."""
    dh, dp, dth = (float(a) for a in squashed)
    heading = wrap_angle(state.psi + dh * hcfg.max_heading_delta)
    pitch = min(dyn.max_pitch, max(-dyn.max_pitch, state.theta + dp * hcfg.max_pitch_delta))
    if role == "follower":
        dth = min(1.0, max(-1.0, dth * hcfg.follower_throttle_authority))
    trim = trim_throttle(state.v, dyn)
    thr = trim + dth * (1.0 - trim) if dth >= 0 else trim * (1.0 + dth)
    return DesiredAttitude(heading, pitch, thr)


def select_subpolicy(selector: Mlp, macro_obs: np.ndarray, rng: np.random.Generator | None = None,
                     deterministic: bool = False) -> tuple[SubPolicyId, float]:
    logits, _ = mlp_forward(selector, macro_obs)
    idx, lp = categorical_mode(logits) if deterministic else categorical_head_sample(logits, rng)
    return SubPolicyId(idx), lp


def subpolicy_act(actor: Mlp, obs: np.ndarray, state: UavState, rng: np.random.Generator | None = None,
                  role: str = "leader", deterministic: bool = False, hcfg: HierarchyConfig = DEFAULT_HIERARCHY,
                  dyn: DynamicsConfig = DEFAULT_DYNAMICS) -> tuple[DesiredAttitude, np.ndarray, float]:
    """Returns the desired attitude, the raw (pre-tanh) action and its Gaussian log-prob."""
    mean, _ = mlp_forward(actor, obs)
    if deterministic:
        raw, lp = mean, float("nan")
    else:
        raw, lp = gaussian_head_sample(mean, actor.log_std, rng)
    return action_to_attitude(state, np.tanh(raw), role, hcfg, dyn), raw, lp


# ---------------------------------------------------------------- parameters

def selector_name(variant: str, role: str) -> str:
    return f"selector_{role}" if variant == "lfmappo" else "selector"


def critic_name(variant: str, role: str) -> str:
    return f"critic_{role}" if variant == "lfmappo" else "critic"


def sees_leader_action(variant: str, role: str) -> bool:
    return variant == "lfmappo" and role == "follower"


def sub_name(k: int) -> str:
    return f"sub_{k}"


@dataclass
class PolicyParams:
    variant: str
    team_size: int
    nets: dict[str, Mlp]
    opt: dict[str, AdamState]

    def snapshot(self) -> "PolicyParams":
        return PolicyParams(self.variant, self.team_size, {k: v.copy() for k, v in self.nets.items()},
                            {k: v.copy() for k, v in self.opt.items()})

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, net in self.nets.items():
            out.update(net.named_tensors(f"{name}/"))
            for i, (m, v) in enumerate(zip(self.opt[name].m, self.opt[name].v)):
                out[f"opt/{name}/m{i}"] = m
                out[f"opt/{name}/v{i}"] = v
        return out

    def meta(self) -> dict:
        return {
            "variant": self.variant, "team_size": self.team_size,
            "nets": {k: {"layers": len(v.weights), "gaussian": v.log_std is not None, "version": v.version}
                     for k, v in sorted(self.nets.items())},
            "adam": {k: {"t": s.t, "skipped": s.skipped} for k, s in sorted(self.opt.items())},
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], meta: dict) -> "PolicyParams":
        nets, opt = {}, {}
        for name, info in meta["nets"].items():
            ws = [tensors[f"{name}/layer{i}.weight"] for i in range(info["layers"])]
            bs = [tensors[f"{name}/layer{i}.bias"] for i in range(info["layers"])]
            ls = tensors[f"{name}/log_std"] if info["gaussian"] else None
            nets[name] = Mlp(ws, bs, ls, info["version"])
            n = len(nets[name].tensors())
            a = meta["adam"][name]
            opt[name] = AdamState([tensors[f"opt/{name}/m{i}"] for i in range(n)],
                                  [tensors[f"opt/{name}/v{i}"] for i in range(n)], a["t"], a["skipped"])
        return cls(meta["variant"], meta["team_size"], nets, opt)


def network_dims(variant: str, team_size: int) -> dict[str, tuple[int, int]]:
    """Input/output widths of every network for a variant."""
    obs_l = ar.observation_dim(team_size, follower=False)
    obs_f = ar.observation_dim(team_size, follower=True)
    glob = 2 * team_size * ar.GLOBAL_PER_UAV
    dims = {sub_name(k): (obs_l, 3) for k in range(ar.N_SUBPOLICIES)}
    dims["critic_sub"] = (obs_l + ar.N_SUBPOLICIES, 1)
    if variant == "lfmappo":
        dims["selector_leader"] = (obs_l, ar.N_SUBPOLICIES)
        dims["selector_follower"] = (obs_f, ar.N_SUBPOLICIES)
        dims["critic_leader"] = (glob + obs_l, 1)
        dims["critic_follower"] = (obs_f, 1)
    elif variant == "mappo":
        dims["selector"] = (obs_l, ar.N_SUBPOLICIES)
        dims["critic"] = (glob + obs_l, 1)
    elif variant == "ippo":
        dims["selector"] = (obs_l, ar.N_SUBPOLICIES)
        dims["critic"] = (obs_l, 1)
    else:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return dims


def init_policy(variant: str, team_size: int, model: ModelConfig, rng: np.random.Generator,
                dims: dict[str, tuple[int, int]] | None = None) -> PolicyParams:
    dims = dims or network_dims(variant, team_size)
    nets = {}
    for name in sorted(dims):
        i, o = dims[name]
        if name.startswith("sub_"):
            nets[name] = init_mlp([i, *model.hidden, o], rng, out_gain=0.01, log_std=model.log_std_init)
        elif name.startswith("selector"):
            nets[name] = init_mlp([i, *model.hidden, o], rng, out_gain=0.01)
        else:
            nets[name] = init_mlp([i, *model.hidden, o], rng, out_gain=1.0)
    opt = {k: AdamState.zeros_like(v.tensors()) for k, v in nets.items()}
    return PolicyParams(variant, team_size, nets, opt)


# ---------------------------------------------------------------- per-team runtime

def selector_input(arena: ar.ArenaState, uid: int, variant: str) -> np.ndarray:
    role = arena.agents[uid].role
    return ar.observe(arena, uid, include_leader_action=sees_leader_action(variant, role))


def critic_input(arena: ar.ArenaState, uid: int, variant: str, macro_obs: np.ndarray) -> np.ndarray:
    a = arena.agents[uid]
    if variant == "ippo" or (variant == "lfmappo" and a.role == "follower"):
        return macro_obs
    return np.concatenate([ar.global_state(arena, a.team), macro_obs])


@dataclass
class Decision:
    """What one agent did at one agent step."""
    uid: int
    obs: np.ndarray  # sub-policy input
    raw_action: np.ndarray
    log_prob: float
    subpolicy: int
    role: str
    epoch_start: bool
    macro_obs: np.ndarray | None = None
    critic_obs: np.ndarray | None = None
    selector_log_prob: float = 0.0
    leader_action: int | None = None


class HierarchicalTeam:
    """Drives one team with a :class:`PolicyParams` snapshot.

    Call :meth:`act` once per physics step; agent decisions happen every
    ``agent_decimation`` physics steps and selector decisions every
    ``selector_epoch`` agent steps, leaders before followers.
    """

    def __init__(self, params: PolicyParams, team: str, hcfg: HierarchyConfig = DEFAULT_HIERARCHY,
                 gains: ControllerGains = DEFAULT_GAINS, dyn: DynamicsConfig = DEFAULT_DYNAMICS,
                 rng: np.random.Generator | None = None, deterministic: bool = False,
                 forced_subpolicy: int | None = None):
        self.params = params
        self.team = team
        self.hcfg = hcfg
        self.gains = gains
        self.dyn = dyn
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.deterministic = deterministic
        self.forced = forced_subpolicy
        self.physics_step = 0
        self.agent_step = 0
        self.desired: dict[int, DesiredAttitude] = {}
        self.last_decisions: list[Decision] = []

    def act(self, arena: ar.ArenaState) -> dict[int, ControlInput]:
        if self.physics_step % self.hcfg.agent_decimation == 0:
            self.last_decisions = self.decide(arena)
        else:
            self.last_decisions = []
        self.physics_step += 1
        out = {}
        for uid in arena.alive_ids(self.team):
            out[uid] = low_level_control(arena.agents[uid].state, self.desired[uid], self.gains, self.dyn)
        return out

    def _select(self, arena: ar.ArenaState, uids: list[int], role: str, decisions: dict[int, Decision]):
        variant = self.params.variant
        if not uids:
            return
        macro = np.stack([selector_input(arena, u, variant) for u in uids])
        if self.forced is not None:
            choices = [(self.forced, 0.0)] * len(uids)
        else:
            logits, _ = mlp_forward(self.params.nets[selector_name(variant, role)], macro)
            choices = [categorical_mode(row) if self.deterministic else categorical_head_sample(row, self.rng)
                       for row in logits]
        for u, m, (k, lp) in zip(uids, macro, choices):
            a = arena.agents[u]
            leader_action = None
            if role == "follower":
                leader_action = arena.agents[arena.roles[self.team].leader_of(u)].subpolicy
            a.subpolicy = int(k)
            decisions[u] = Decision(u, None, None, 0.0, int(k), role, True, m, critic_input(arena, u, variant, m),
                                    float(lp), leader_action)

    def decide(self, arena: ar.ArenaState) -> list[Decision]:
        alive = arena.alive_ids(self.team)
        decisions: dict[int, Decision] = {}
        if self.agent_step % self.hcfg.selector_epoch == 0:
            arena.refresh_roles(self.team)
            for u in alive:
                arena.retarget(u)
            leaders = [u for u in alive if arena.agents[u].role == "leader"]
            followers = [u for u in alive if arena.agents[u].role == "follower"]
            self._select(arena, leaders, "leader", decisions)
            self._select(arena, followers, "follower", decisions)
        self.agent_step += 1

        obs = {u: ar.observe(arena, u, include_leader_action=False) for u in alive}
        by_sub: dict[int, list[int]] = {}
        for u in alive:
            by_sub.setdefault(arena.agents[u].subpolicy, []).append(u)
        out = []
        for k in sorted(by_sub):
            uids = by_sub[k]
            actor = self.params.nets[sub_name(k)]
            means, _ = mlp_forward(actor, np.stack([obs[u] for u in uids]))
            for u, mean in zip(uids, means):
                a = arena.agents[u]
                if self.deterministic:
                    raw, lp = mean, 0.0
                else:
                    raw, lp = gaussian_head_sample(mean, actor.log_std, self.rng)
                self.desired[u] = action_to_attitude(a.state, np.tanh(raw), a.role, self.hcfg, self.dyn)
                d = decisions.get(u)
                if d is None:
                    d = Decision(u, None, None, 0.0, k, a.role, False)
                d.obs, d.raw_action, d.log_prob = obs[u], raw, float(lp)
                out.append(d)
        out.sort(key=lambda d: d.uid)
        return out
