"""Match runner, tournaments and scripted opponents."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import arena as ar
from .flightdyn import DEFAULT_DYNAMICS, ControlInput, DynamicsConfig, UavState, trim_throttle
from .geometry import bearing_and_elevation
from .hrl import (
    DEFAULT_GAINS, DEFAULT_HIERARCHY, ControllerGains, DesiredAttitude, HierarchicalTeam, HierarchyConfig,
    PolicyParams, low_level_control,
)
from .targeting import nearest_enemy

SCRIPTED_KINDS = ("pure_pursuit", "straight_line", "evasive_weave")


@dataclass
class EvalConfig:
    n: int = 128  # matches per stage
    deterministic: bool = True
    mirrored: bool = False
    weave_amplitude: float = math.pi / 4  # rad
    weave_period: float = 8.0  # s

    def validate(self) -> list[str]:
        errs = []
        if self.n < 1:
            errs.append("eval.n must be >= 1")
        if self.weave_period <= 0:
            errs.append("eval.weave_period must be > 0")
        return errs


DEFAULT_EVAL = EvalConfig()


def scripted_desired(kind: str, uid: int, arena: ar.ArenaState, ecfg: EvalConfig = DEFAULT_EVAL) -> DesiredAttitude:
    a = arena.agents[uid]
    s = a.state
    dyn = arena.dynamics
    if kind == "pure_pursuit":
        enemies = [(e.uid, arena.state_in_frame_of(uid, e.uid), e.role) for e in arena.enemies_of(uid)]
        tid = nearest_enemy(s, enemies)
        if tid is None:
            return DesiredAttitude(s.psi, 0.0, trim_throttle(s.v, dyn))
        a.target_id = tid
        heading, elev = bearing_and_elevation(s, arena.state_in_frame_of(uid, tid))
        return DesiredAttitude(heading, max(-dyn.max_pitch, min(dyn.max_pitch, elev)), 1.0)
    if kind == "straight_line":
        return DesiredAttitude(s.psi, 0.0, trim_throttle(s.v, dyn))
    if kind == "evasive_weave":
        # sinusoidal heading about the team-frame course toward the enemy (+x)
        h = ecfg.weave_amplitude * math.sin(2.0 * math.pi * arena.sim_time / ecfg.weave_period)
        return DesiredAttitude(h, 0.0, trim_throttle(s.v, dyn))
    raise ValueError(f"unknown scripted opponent {kind!r}; expected one of {SCRIPTED_KINDS}")


def scripted_opponent(kind: str, uid: int, arena: ar.ArenaState, gains: ControllerGains = DEFAULT_GAINS,
                      ecfg: EvalConfig = DEFAULT_EVAL) -> ControlInput:
    return low_level_control(arena.agents[uid].state, scripted_desired(kind, uid, arena, ecfg), gains, arena.dynamics)


class ScriptedTeam:
    """Classical controller for a whole team; re-plans at the agent rate."""

    def __init__(self, kind: str, team: str, hcfg: HierarchyConfig = DEFAULT_HIERARCHY,
                 gains: ControllerGains = DEFAULT_GAINS, ecfg: EvalConfig = DEFAULT_EVAL):
        if kind not in SCRIPTED_KINDS:
            raise ValueError(f"unknown scripted opponent {kind!r}; expected one of {SCRIPTED_KINDS}")
        self.kind, self.team, self.hcfg, self.gains, self.ecfg = kind, team, hcfg, gains, ecfg
        self.physics_step = 0
        self.desired: dict[int, DesiredAttitude] = {}

    def act(self, arena: ar.ArenaState) -> dict[int, ControlInput]:
        alive = arena.alive_ids(self.team)
        if self.physics_step % self.hcfg.agent_decimation == 0:
            for u in alive:
                self.desired[u] = scripted_desired(self.kind, u, arena, self.ecfg)
        self.physics_step += 1
        return {u: low_level_control(arena.agents[u].state, self.desired[u], self.gains, arena.dynamics) for u in alive}


def make_team(policy, team: str, *, hcfg: HierarchyConfig = DEFAULT_HIERARCHY, gains: ControllerGains = DEFAULT_GAINS,
              dyn: DynamicsConfig = DEFAULT_DYNAMICS, ecfg: EvalConfig = DEFAULT_EVAL,
              rng: np.random.Generator | None = None, deterministic: bool = True):
    """``policy`` is a :class:`PolicyParams` or ``"scripted:<kind>"`` / ``"<kind>"``."""
    if isinstance(policy, PolicyParams):
        return HierarchicalTeam(policy, team, hcfg, gains, dyn, rng=rng, deterministic=deterministic)
    if isinstance(policy, str):
        return ScriptedTeam(policy.removeprefix("scripted:"), team, hcfg, gains, ecfg)
    if hasattr(policy, "act"):
        return policy
    raise TypeError(f"cannot build a team controller from {policy!r}")


# ---------------------------------------------------------------- matches

@dataclass
class MatchRecord:
    seed: int
    result: str
    survivors_blue: int
    survivors_red: int
    duration: float
    rewards: dict[str, float]  # cumulative per team
    trajectory: list[list] = field(default_factory=list)
    run_id: str = ""
    config_hash: str = ""

    @property
    def outcome(self) -> ar.EngagementOutcome:
        return ar.EngagementOutcome(self.result, self.survivors_blue, self.survivors_red, self.duration)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MatchRecord":
        return cls(**json.loads(text))


@dataclass
class MatchEnv:
    """Everything a match needs besides the two policies."""
    arena: ar.ArenaConfig = field(default_factory=ar.ArenaConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    targeting: object = None
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    gains: ControllerGains = field(default_factory=ControllerGains)
    eval: EvalConfig = field(default_factory=EvalConfig)
    spawn_fn: object = None  # optional world-frame start states, see ``arena.reset``

    @classmethod
    def from_run_config(cls, cfg) -> "MatchEnv":
        return cls(cfg.arena, cfg.dynamics, cfg.targeting, cfg.hierarchy, cfg.controller.gains, cfg.eval)


def run_match(blue, red, seed: int, env: MatchEnv | None = None, *, mirrored: bool | None = None,
              initial_states: Sequence[UavState] | None = None, deterministic: bool | None = None,
              record_trajectory: bool = True, return_arena: bool = False):
    """Play one engagement to termination and return its :class:`MatchRecord`."""
    env = env or MatchEnv()
    mirrored = env.eval.mirrored if mirrored is None else mirrored
    deterministic = env.eval.deterministic if deterministic is None else deterministic
    kw = {} if env.targeting is None else {"targeting": env.targeting}
    arena = ar.reset(env.arena, seed, dynamics=env.dynamics, mirrored=mirrored, initial_states=initial_states,
                     spawn_fn=env.spawn_fn, **kw)
    ss = np.random.SeedSequence(seed)
    rb, rr = (np.random.default_rng(s) for s in ss.spawn(2))
    teams = [
        make_team(blue, "blue", hcfg=env.hierarchy, gains=env.gains, dyn=env.dynamics, ecfg=env.eval, rng=rb,
                  deterministic=deterministic),
        make_team(red, "red", hcfg=env.hierarchy, gains=env.gains, dyn=env.dynamics, ecfg=env.eval, rng=rr,
                  deterministic=deterministic),
    ]
    dec = env.hierarchy.agent_decimation
    totals = {"blue": 0.0, "red": 0.0}
    rows: list[list] = []
    step_rewards: dict[int, float] = {}
    step_alive: list[int] = []
    while not arena.done:
        if arena.steps % dec == 0:
            step_alive = arena.alive_ids()
            step_rewards = {}
        controls: dict[int, ControlInput] = {}
        for t in teams:
            controls.update(t.act(arena))
        arena, rewards, _, done = ar.step(arena, controls)
        for uid, rb_ in rewards.items():
            r = rb_.total
            step_rewards[uid] = step_rewards.get(uid, 0.0) + r
            totals[arena.agents[uid].team] += r
        if record_trajectory and (arena.steps % dec == 0 or done):
            rows += ar.trajectory_rows(arena, step_alive, step_rewards)
    oc = ar.outcome(arena)
    rec = MatchRecord(int(seed), oc.result, oc.survivors_blue, oc.survivors_red, oc.duration, totals, rows)
    return (rec, arena) if return_arena else rec


@dataclass
class TournamentResult:
    wins: int
    draws: int
    losses: int

    @property
    def n(self) -> int:
        return self.wins + self.draws + self.losses

    @property
    def win_rate(self) -> float:
        return self.wins / self.n

    @property
    def draw_rate(self) -> float:
        return self.draws / self.n

    @property
    def loss_rate(self) -> float:
        # defined as the complement so the three rates partition 1 exactly
        return 1.0 - (self.win_rate + self.draw_rate)

    def rates(self) -> tuple[float, float, float]:
        return self.win_rate, self.draw_rate, self.loss_rate


def tournament(policy, opponent, n: int = 128, base_seed: int = 0, env: MatchEnv | None = None, *,
               mirrored: bool | None = None, records: list | None = None, parallel: int = 1) -> TournamentResult:
    """``n`` matches on seeds ``base_seed .. base_seed + n - 1``; ``policy`` flies blue."""
    if n < 1:
        raise ValueError("a tournament needs at least one match")
    seeds = range(base_seed, base_seed + n)
    keep = records is not None
    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            recs = list(ex.map(_match_job, [(policy, opponent, s, env, mirrored, keep) for s in seeds]))
    else:
        recs = (_match_job((policy, opponent, s, env, mirrored, keep)) for s in seeds)
    counts = {"win": 0, "draw": 0, "loss": 0}
    for rec in recs:
        counts[rec.result] += 1
        if records is not None:
            records.append(rec)
    return TournamentResult(counts["win"], counts["draw"], counts["loss"])


def _match_job(job) -> MatchRecord:
    policy, opponent, seed, env, mirrored, keep = job
    return run_match(policy, opponent, seed, env, mirrored=mirrored, record_trajectory=keep)
