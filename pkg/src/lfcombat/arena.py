"""Multi-UAV combat environment.

Each team flies in its own frame: red coordinates are the point reflection
of world coordinates through the vertical axis at the origin, so both teams
spawn at negative x heading toward +x. Cross-team geometry maps the other
aircraft with :func:`geometry.mirror`, which only negates numbers; a
mirrored engagement between identical deterministic policies is therefore
exactly symmetric.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ProtocolError
from .flightdyn import (
    DEFAULT_DYNAMICS, ControlInput, DynamicsConfig, UavState, Violation, check_flight_envelope,
    step_dynamics, wrap_angle,
)
from .geometry import (
    RelativeGeometry, SectorConfig, bearing_and_elevation, in_wez, missile_hit, mirror,
    relative_geometry,
)
from .roles import RoleAssignment, assign_roles, promote
from .targeting import DEFAULT_TARGETING, TargetingConfig, nearest_enemy, select_target

__all__ = [
    "ArenaConfig", "ArenaState", "Agent", "EngagementEvent", "EventKind", "EngagementOutcome",
    "RewardBreakdown", "RelativeGeometry", "reset", "step", "observe", "global_state", "outcome",
    "posture_reward", "distance_reward", "event_reward", "relative_geometry", "in_wez", "missile_hit",
    "trajectory_rows", "TRAJECTORY_HEADER", "N_SUBPOLICIES",
]

N_SUBPOLICIES = 3
TRAJECTORY_HEADER = ["time", "uav_id", "team", "role", "px", "py", "pz", "v", "phi", "theta", "psi",
                     "alive", "target_id", "reward"]

# Distance-reward constants: k1 = k2 = 10, b3 = e^10, b4 = 1; b1, b2 from continuity at the knots.
K1 = 10.0
K2 = 10.0
B1 = 1.0 / 3.0 - math.exp(K1 / 3.0) / (math.exp(K1 / 3.0) + 3.0)
B3 = math.exp(10.0)
B4 = 1.0
B2 = math.log(B3 * (B4 - 2.0 / 3.0)) - K2 * 2.0 / 3.0
ARCTANH_CLAMP = 1.0 - 1e-6


def posture_reward(alpha: float, beta: float) -> float:
    s = alpha + beta
    arg = 1.0 - max(s / math.pi, 1e-4)
    arg = min(ARCTANH_CLAMP, max(-ARCTANH_CLAMP, arg))
    return min(math.atanh(arg) / math.pi, 0.0) + 2.0 * math.pi / (25.0 * s + 2.0 * math.pi) + 0.5


def distance_reward(d: float, d_max: float) -> float:
    x = d / d_max
    if x < 1.0 / 3.0:
        # e^{k x} / (e^{k x} + 1/x) rewritten to stay finite at x = 0
        ex = x * math.exp(K1 * x)
        return ex / (ex + 1.0) + B1
    if x < 2.0 / 3.0:
        return x
    return -math.exp(min(K2 * x + B2, 700.0)) / B3 + B4


@dataclass
class ArenaConfig:
    team_size: int = 6
    group_size: int = 3
    # spawn box in each team's own frame; red's world box is its point reflection
    spawn_x: tuple[float, float] = (-10000.0, -6000.0)
    spawn_y: tuple[float, float] = (-4000.0, 4000.0)
    spawn_z: tuple[float, float] = (6000.0, 9000.0)
    spawn_heading: tuple[float, float] = (-math.pi / 6, math.pi / 6)
    spawn_speed: tuple[float, float] = (200.0, 260.0)
    wez_range: float = 4000.0
    wez_angle: float = math.pi / 4
    hit_range: float = 300.0
    missile_fov: float = math.pi / 4
    angles_are_full: bool = True
    collision_radius: float = 50.0
    t_limit: float = 300.0  # s
    r_kill: float = 200.0
    r_death: float = 200.0
    r_crash: float = 100.0
    w_posture: float = 1.0
    w_distance: float = 1.0
    d_max: float = 4000.0  # distance-reward normaliser (attack range)
    distance_reward_floor: float = -1.0
    survival_bonus: float = 0.0  # per second alive
    pos_norm: tuple[float, float] = (-20000.0, 20000.0)
    alt_norm: tuple[float, float] = (3000.0, 12000.0)
    range_norm: float = 10000.0

    @property
    def sectors(self) -> SectorConfig:
        return SectorConfig(self.wez_range, self.wez_angle, self.hit_range, self.missile_fov, self.angles_are_full)

    def validate(self, altitude_min: float = DEFAULT_DYNAMICS.altitude_min) -> list[str]:
        errs = []
        if self.team_size < 1:
            errs.append("arena.team_size must be >= 1")
        if self.group_size < 1 or self.team_size % self.group_size:
            errs.append(f"arena.team_size ({self.team_size}) must be divisible by arena.group_size ({self.group_size})")
        for name in ("spawn_x", "spawn_y", "spawn_z", "spawn_heading", "spawn_speed", "pos_norm", "alt_norm"):
            lo, hi = getattr(self, name)
            if lo > hi:
                errs.append(f"arena.{name} must be an ordered [low, high] pair")
        if self.spawn_z[0] < altitude_min:
            errs.append(f"arena.spawn_z lower bound {self.spawn_z[0]} is below the altitude floor {altitude_min}")
        # red world box is (-x, -y): disjoint iff an axis interval avoids its reflection
        x_overlap = self.spawn_x[0] <= -self.spawn_x[0] and -self.spawn_x[1] <= self.spawn_x[1]
        y_overlap = self.spawn_y[0] <= -self.spawn_y[0] and -self.spawn_y[1] <= self.spawn_y[1]
        if x_overlap and y_overlap:
            errs.append("arena spawn boxes overlap: spawn_x or spawn_y must exclude the origin")
        for name in ("wez_range", "hit_range", "collision_radius", "t_limit", "d_max", "range_norm"):
            if getattr(self, name) <= 0:
                errs.append(f"arena.{name} must be > 0")
        if not 0 < self.wez_angle <= 2 * math.pi or not 0 < self.missile_fov <= 2 * math.pi:
            errs.append("arena.wez_angle and arena.missile_fov must lie in (0, 2 pi]")
        return errs


class EventKind(enum.Enum):
    MISSILE_HIT = "missile_hit"
    COLLISION = "collision"
    FLOOR_CRASH = "floor_crash"
    OVERLOAD_DESTRUCT = "overload_destruct"


@dataclass(frozen=True)
class EngagementEvent:
    kind: EventKind
    shooter: int | None  # the other party for hits and collisions
    victim: int
    time: float


@dataclass(frozen=True)
class RewardBreakdown:
    posture: float = 0.0
    distance: float = 0.0
    event: float = 0.0

    @property
    def total(self) -> float:
        return self.posture + self.distance + self.event


@dataclass
class Agent:
    uid: int
    team: str  # "blue" | "red"
    role: str
    group: int
    state: UavState  # in the team's own frame
    target_id: int | None = None
    subpolicy: int | None = None  # current middle-level policy, set by the hierarchy


@dataclass
class ArenaState:
    agents: list[Agent]
    roles: dict[str, RoleAssignment]
    cfg: ArenaConfig
    dynamics: DynamicsConfig
    targeting: TargetingConfig
    steps: int = 0
    events: list[EngagementEvent] = field(default_factory=list)
    done: bool = False
    ignored_controls: int = 0
    rng: np.random.Generator | None = field(default=None, compare=False, repr=False)

    @property
    def sim_time(self) -> float:
        return self.steps * self.dynamics.dt

    def agent(self, uid: int) -> Agent:
        return self.agents[uid]

    def team_ids(self, team: str) -> list[int]:
        return [a.uid for a in self.agents if a.team == team]

    def alive_ids(self, team: str | None = None) -> list[int]:
        return [a.uid for a in self.agents if a.state.alive and (team is None or a.team == team)]

    def enemies_of(self, uid: int) -> list[Agent]:
        team = self.agents[uid].team
        return [a for a in self.agents if a.team != team]

    def state_in_frame_of(self, viewer: int, uid: int) -> UavState:
        """State of ``uid`` expressed in ``viewer``'s team frame."""
        a = self.agents[uid]
        if a.team == self.agents[viewer].team:
            return a.state
        return mirror(a.state)

    def world_state(self, uid: int) -> UavState:
        a = self.agents[uid]
        return a.state if a.team == "blue" else mirror(a.state)

    def refresh_roles(self, team: str | None = None) -> list[int]:
        """Promote followers of dead leaders; returns newly promoted uids."""
        promoted = []
        for t, ra in self.roles.items():
            if team is not None and t != team:
                continue
            alive = {a.uid: a.state.alive for a in self.agents if a.team == t}
            promoted += promote(ra, alive)
            for uid in alive:
                self.agents[uid].role = ra.role[uid]
        return promoted

    def retarget(self, uid: int) -> int | None:
        own = self.agents[uid].state
        tc = self.targeting
        enemies = [(e.uid, self.state_in_frame_of(uid, e.uid), e.role) for e in self.enemies_of(uid)]
        tid = select_target(own, enemies, tc.weights, tc.n_steps, tc.dt, tc)
        self.agents[uid].target_id = tid
        return tid

    def geometry(self, uid: int, other: int) -> RelativeGeometry:
        return relative_geometry(self.agents[uid].state, self.state_in_frame_of(uid, other))


def _uniform(rng: np.random.Generator, box: tuple[float, float]) -> float:
    return float(rng.uniform(box[0], box[1]))


def _sample_team(rng: np.random.Generator, cfg: ArenaConfig) -> list[UavState]:
    out = []
    for _ in range(cfg.team_size):
        x, y, z = _uniform(rng, cfg.spawn_x), _uniform(rng, cfg.spawn_y), _uniform(rng, cfg.spawn_z)
        psi, v = _uniform(rng, cfg.spawn_heading), _uniform(rng, cfg.spawn_speed)
        out.append(UavState.from_attitude(x, y, z, v, psi=psi))
    return out


SpawnFn = Callable[[np.random.Generator, ArenaConfig], Sequence[UavState]]


def reset(cfg: ArenaConfig, seed, *, dynamics: DynamicsConfig = DEFAULT_DYNAMICS,
          targeting: TargetingConfig = DEFAULT_TARGETING, mirrored: bool = False,
          initial_states: Sequence[UavState] | None = None, spawn_fn: SpawnFn | None = None) -> ArenaState:
    """Place both teams and return a fresh arena.

    ``initial_states`` / ``spawn_fn`` give world-frame states for all
    ``2 * team_size`` aircraft (blue first). ``mirrored`` spawns red as the
    exact reflection of blue.
    """
    errs = cfg.validate(dynamics.altitude_min)
    if errs:
        raise ConfigError(errs)
    rng = np.random.default_rng(seed)
    n = cfg.team_size
    if initial_states is None and spawn_fn is not None:
        initial_states = list(spawn_fn(rng, cfg))
    if initial_states is not None:
        if len(initial_states) != 2 * n:
            raise ConfigError(f"expected {2 * n} initial states, got {len(initial_states)}")
        blue = list(initial_states[:n])
        red = [mirror(s) for s in initial_states[n:]]
    else:
        blue = _sample_team(rng, cfg)
        red = [UavState(*(getattr(s, f) for f in UavState.__slots__)) for s in blue] if mirrored else _sample_team(rng, cfg)
    roles = {"blue": assign_roles(range(n), cfg.group_size), "red": assign_roles(range(n, 2 * n), cfg.group_size)}
    agents = []
    for uid, st in enumerate(blue + red):
        team = "blue" if uid < n else "red"
        ra = roles[team]
        agents.append(Agent(uid, team, ra.role[uid], ra.group[uid], st))
    arena = ArenaState(agents, roles, cfg, dynamics, targeting, rng=rng)
    for a in agents:
        arena.retarget(a.uid)
    return arena


def event_reward(events: Sequence[EngagementEvent], uav_id: int, cfg: ArenaConfig) -> float:
    r = 0.0
    for ev in events:
        if ev.kind is EventKind.MISSILE_HIT:
            if ev.shooter == uav_id:
                r += cfg.r_kill
            if ev.victim == uav_id:
                r -= cfg.r_death
        elif ev.victim == uav_id:
            r -= cfg.r_death if ev.kind is EventKind.COLLISION else cfg.r_crash
    return r


def shaping(arena: ArenaState, uid: int) -> tuple[float, float]:
    """Posture and distance terms toward the agent's current target, per second."""
    a = arena.agents[uid]
    cfg = arena.cfg
    tid = a.target_id
    if tid is None or not arena.agents[tid].state.alive:
        tid = arena.retarget(uid)
    if tid is None:
        return 0.0, 0.0
    g = arena.geometry(uid, tid)
    rd = max(cfg.distance_reward_floor, distance_reward(g.d, cfg.d_max))
    return cfg.w_posture * posture_reward(g.alpha, g.beta), cfg.w_distance * rd


def step(arena: ArenaState, controls: Mapping[int, ControlInput]):
    """Advance every alive aircraft by one physics step.

    Returns ``(arena, rewards, events, done)`` with ``rewards`` mapping uid to
    a :class:`RewardBreakdown`. The arena is updated in place.
    """
    if arena.done:
        raise ProtocolError("step called on a finished engagement")
    dyn = arena.dynamics
    dt = dyn.dt
    cfg = arena.cfg
    sectors = cfg.sectors
    alive_before = [a.uid for a in arena.agents if a.state.alive]
    for uid in controls:
        if not arena.agents[uid].state.alive:
            arena.ignored_controls += 1
    missing = [u for u in alive_before if u not in controls]
    if missing:
        raise ProtocolError(f"no control input for alive agents {missing}")

    t = (arena.steps + 1) * dt
    events: list[EngagementEvent] = []
    self_kill: dict[int, EventKind] = {}
    for uid in alive_before:
        a = arena.agents[uid]
        prev = a.state
        a.state = step_dynamics(prev, controls[uid], dt, dyn)
        env = check_flight_envelope(a.state, prev, dt, dyn)
        if env.violation is Violation.ALTITUDE_FLOOR:
            self_kill[uid] = EventKind.FLOOR_CRASH
        elif env.violation is Violation.OVERLOAD:
            self_kill[uid] = EventKind.OVERLOAD_DESTRUCT

    victims: set[int] = set()
    # missile hits: every predicate is evaluated on the same post-step snapshot
    for vid in alive_before:
        shooters = [s for s in alive_before
                    if arena.agents[s].team != arena.agents[vid].team
                    and missile_hit(arena.agents[s].state, arena.state_in_frame_of(s, vid), sectors)]
        if shooters:
            events.append(EngagementEvent(EventKind.MISSILE_HIT, min(shooters), vid, t))
            victims.add(vid)
    r2 = cfg.collision_radius
    for i, u in enumerate(alive_before):
        for w in alive_before[i + 1:]:
            su, sw = arena.agents[u].state, arena.state_in_frame_of(u, w)
            if math.dist((su.p_x, su.p_y, su.p_z), (sw.p_x, sw.p_y, sw.p_z)) < r2:
                for vid, other in ((u, w), (w, u)):
                    if vid not in victims:
                        events.append(EngagementEvent(EventKind.COLLISION, other, vid, t))
                        victims.add(vid)
    for uid, kind in sorted(self_kill.items()):
        if uid not in victims:
            events.append(EngagementEvent(kind, None, uid, t))
            victims.add(uid)
    for vid in victims:
        arena.agents[vid].state.alive = False

    arena.steps += 1
    arena.events.extend(events)
    scale = dt
    rewards: dict[int, RewardBreakdown] = {}
    for uid in alive_before:
        ev = event_reward(events, uid, cfg)
        if arena.agents[uid].state.alive:
            rp, rd = shaping(arena, uid)
            ev += cfg.survival_bonus * scale
            rewards[uid] = RewardBreakdown(rp * scale, rd * scale, ev)
        else:
            rewards[uid] = RewardBreakdown(0.0, 0.0, ev)
    blue_alive = any(a.state.alive for a in arena.agents if a.team == "blue")
    red_alive = any(a.state.alive for a in arena.agents if a.team == "red")
    arena.done = (not blue_alive) or (not red_alive) or t >= cfg.t_limit - 1e-9
    return arena, rewards, events, arena.done


# ---------------------------------------------------------------- observations

OWN_DIM = 11
REL_DIM = 7
MATE_DIM = 7
GLOBAL_PER_UAV = 10


def _affine(x: float, lo: float, hi: float) -> float:
    return (x - lo) / (hi - lo)


def _own_block(arena: ArenaState, uid: int) -> list[float]:
    s = arena.agents[uid].state
    cfg, vmax = arena.cfg, arena.dynamics.v_max
    tid = arena.agents[uid].target_id
    if tid is not None and arena.agents[tid].state.alive:
        g = arena.geometry(uid, tid)
        a_s, b = g.alpha_signed, g.beta
    else:
        a_s, b = 0.0, 0.0
    return [
        _affine(s.p_x, *cfg.pos_norm), _affine(s.p_y, *cfg.pos_norm), _affine(s.p_z, *cfg.alt_norm),
        s.v_x / vmax, s.v_y / vmax, s.v_z / vmax,
        s.phi / math.pi, s.theta / math.pi, s.psi / math.pi,
        a_s / math.pi, b / math.pi,
    ]


def _relative_block(arena: ArenaState, uid: int, other: int | None) -> list[float]:
    if other is None or not arena.agents[other].state.alive:
        return [0.0] * REL_DIM
    own = arena.agents[uid].state
    tgt = arena.state_in_frame_of(uid, other)
    g = relative_geometry(own, tgt)
    brg, elev = bearing_and_elevation(own, tgt)
    rel_brg = wrap_angle(brg - own.psi)
    # closure rate: -d(range)/dt
    if g.d > 0:
        lx, ly, lz = tgt.p_x - own.p_x, tgt.p_y - own.p_y, tgt.p_z - own.p_z
        closure = -((tgt.v_x - own.v_x) * lx + (tgt.v_y - own.v_y) * ly + (tgt.v_z - own.v_z) * lz) / g.d
    else:
        closure = 0.0
    return [
        g.d / arena.cfg.range_norm, math.sin(rel_brg), math.cos(rel_brg),
        (elev - own.theta) / (math.pi / 2), closure / arena.dynamics.v_max, g.beta / math.pi,
        1.0,
    ]


def _mate_block(arena: ArenaState, uid: int, mate: int) -> list[float]:
    m = arena.agents[mate].state
    if not m.alive:
        return [0.0] * MATE_DIM
    own = arena.agents[uid].state
    c, s = math.cos(own.psi), math.sin(own.psi)
    dx, dy, dz = m.p_x - own.p_x, m.p_y - own.p_y, m.p_z - own.p_z
    rn, vmax = arena.cfg.range_norm, arena.dynamics.v_max
    return [
        (c * dx + s * dy) / rn, (-s * dx + c * dy) / rn, dz / rn,
        (m.v_x - own.v_x) / vmax, (m.v_y - own.v_y) / vmax, (m.v_z - own.v_z) / vmax,
        1.0,
    ]


def observation_dim(team_size: int, follower: bool) -> int:
    return OWN_DIM + 2 * REL_DIM + (team_size - 1) * MATE_DIM + (N_SUBPOLICIES if follower else 0)


def observe(arena: ArenaState, uid: int, include_leader_action: bool | None = None) -> np.ndarray:
    """Per-agent observation vector.

    Blocks: own state (11), selected target (7), nearest enemy (7), each
    teammate in id order (7 each) and, for followers, a one-hot of the
    leader's current sub-policy. A dead agent observes zeros.
    """
    a = arena.agents[uid]
    if include_leader_action is None:
        include_leader_action = a.role == "follower"
    n = arena.cfg.team_size
    dim = observation_dim(n, include_leader_action)
    if not a.state.alive:
        return np.zeros(dim)
    enemies = [(e.uid, arena.state_in_frame_of(uid, e.uid), e.role) for e in arena.enemies_of(uid)]
    feats = _own_block(arena, uid)
    feats += _relative_block(arena, uid, a.target_id)
    feats += _relative_block(arena, uid, nearest_enemy(a.state, enemies))
    for m in arena.team_ids(a.team):
        if m != uid:
            feats += _mate_block(arena, uid, m)
    if include_leader_action:
        onehot = [0.0] * N_SUBPOLICIES
        leader = arena.agents[arena.roles[a.team].leader_of(uid)]
        if leader.uid != uid and leader.subpolicy is not None:
            onehot[leader.subpolicy] = 1.0
        feats += onehot
    return np.asarray(feats, dtype=np.float64)


def global_state(arena: ArenaState, team: str) -> np.ndarray:
    """Team-frame summary of every aircraft: own team first, then enemies, by id."""
    cfg, vmax = arena.cfg, arena.dynamics.v_max
    ref = arena.team_ids(team)[0]
    own = arena.team_ids(team)
    others = [a.uid for a in arena.agents if a.team != team]
    feats: list[float] = []
    for uid in own + others:
        s = arena.state_in_frame_of(ref, uid)
        if not s.alive:
            feats += [0.0] * GLOBAL_PER_UAV
            continue
        feats += [
            _affine(s.p_x, *cfg.pos_norm), _affine(s.p_y, *cfg.pos_norm), _affine(s.p_z, *cfg.alt_norm),
            s.v_x / vmax, s.v_y / vmax, s.v_z / vmax, s.phi / math.pi, s.theta / math.pi,
            math.atan2(s.v_y, s.v_x) / math.pi, 1.0,
        ]
    return np.asarray(feats, dtype=np.float64)


# ---------------------------------------------------------------- outcome / export

@dataclass(frozen=True)
class EngagementOutcome:
    result: str  # "win" | "draw" | "loss", blue's perspective
    survivors_blue: int
    survivors_red: int
    duration: float


def outcome(arena: ArenaState) -> EngagementOutcome:
    if not arena.done:
        raise ProtocolError("outcome requested before the engagement finished")
    nb = len(arena.alive_ids("blue"))
    nr = len(arena.alive_ids("red"))
    if nr == 0 and nb > 0:
        result = "win"
    elif nb == 0 and nr > 0:
        result = "loss"
    else:
        result = "draw"
    return EngagementOutcome(result, nb, nr, arena.sim_time)


def trajectory_rows(arena: ArenaState, uids: Sequence[int], rewards: Mapping[int, float]) -> list[list]:
    """World-frame rows in :data:`TRAJECTORY_HEADER` order for ``uids``."""
    rows = []
    t = arena.sim_time
    for uid in uids:
        a = arena.agents[uid]
        s = arena.world_state(uid)
        rows.append([t, uid, a.team, a.role, s.p_x, s.p_y, s.p_z, s.v, s.phi, s.theta, s.psi,
                     int(s.alive), -1 if a.target_id is None else a.target_id, rewards.get(uid, 0.0)])
    return rows
