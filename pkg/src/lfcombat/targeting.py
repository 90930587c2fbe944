"""Situational target selection.

Each enemy is scored as ``w_d * T_d + w_a * T_a + w_i * I`` (distance,
posture and capability attributes), averaged over a short constant-velocity
projection, and the best-scoring enemy is engaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .flightdyn import UavState
from .geometry import RelativeGeometry, extrapolate, relative_geometry


@dataclass(frozen=True)
class ThreatWeights:
    w_d: float = 0.3
    w_a: float = 0.6
    w_i: float = 0.1

    def __post_init__(self):
        if min(self.w_d, self.w_a, self.w_i) < 0 or self.w_d + self.w_a + self.w_i <= 0:
            raise ValueError(f"threat weights must be >= 0 with positive sum, got {self}")

    def scaled(self, c: float) -> "ThreatWeights":
        return ThreatWeights(self.w_d * c, self.w_a * c, self.w_i * c)


@dataclass(frozen=True)
class ThreatScore:
    total: float
    t_d: float
    t_a: float
    i: float


@dataclass
class TargetingConfig:
    w_d: float = 0.3
    w_a: float = 0.6
    w_i: float = 0.1
    n_steps: int = 5
    dt: float = 1.0  # s between projected samples
    d_detect: float = 10000.0  # m
    # "threat": how well the target points at us; "opportunity": how well we point at it
    posture_view: str = "threat"
    capability_leader: float = 1.0
    capability_follower: float = 0.6

    @property
    def weights(self) -> ThreatWeights:
        return ThreatWeights(self.w_d, self.w_a, self.w_i)

    def validate(self) -> list[str]:
        errs = []
        if min(self.w_d, self.w_a, self.w_i) < 0 or self.w_d + self.w_a + self.w_i <= 0:
            errs.append("targeting.w_* must be >= 0 with a positive sum")
        if self.n_steps < 1:
            errs.append("targeting.n_steps must be >= 1")
        if self.dt <= 0 or self.d_detect <= 0:
            errs.append("targeting.dt and targeting.d_detect must be > 0")
        if self.posture_view not in ("threat", "opportunity"):
            errs.append("targeting.posture_view must be 'threat' or 'opportunity'")
        return errs


DEFAULT_TARGETING = TargetingConfig()


def capability(role: str, cfg: TargetingConfig = DEFAULT_TARGETING) -> float:
    return cfg.capability_leader if role == "leader" else cfg.capability_follower


def score_geometry(own_to_target: RelativeGeometry, target_to_own: RelativeGeometry, target_role: str,
                   weights: ThreatWeights, cfg: TargetingConfig = DEFAULT_TARGETING) -> ThreatScore:
    t_d = min(1.0, max(0.0, 1.0 - own_to_target.d / cfg.d_detect))
    if cfg.posture_view == "threat":
        t_a = 1.0 - target_to_own.alpha / math.pi
    else:
        t_a = 1.0 - own_to_target.alpha / math.pi
    i = capability(target_role, cfg)
    return ThreatScore(weights.w_d * t_d + weights.w_a * t_a + weights.w_i * i, t_d, t_a, i)


def score_target(own: UavState, target: UavState, weights: ThreatWeights, target_role: str = "follower",
                 cfg: TargetingConfig = DEFAULT_TARGETING) -> ThreatScore:
    return score_geometry(relative_geometry(own, target), relative_geometry(target, own), target_role, weights, cfg)


def n_step_projection(own: UavState, target: UavState, n: int, dt: float) -> list[RelativeGeometry]:
    """Geometry at t = dt, 2 dt, ..., n dt under constant-velocity extrapolation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [relative_geometry(extrapolate(own, k * dt), extrapolate(target, k * dt)) for k in range(1, n + 1)]


def projected_score(own: UavState, target: UavState, weights: ThreatWeights, target_role: str,
                    n: int, dt: float, cfg: TargetingConfig = DEFAULT_TARGETING) -> float:
    """Mean score over t = 0, dt, ..., (n - 1) dt; with n = 1 it is the current score."""
    total = 0.0
    for k in range(n):
        o, t = extrapolate(own, k * dt), extrapolate(target, k * dt)
        total += score_target(o, t, weights, target_role, cfg).total
    return total / n


def select_target(own: UavState, enemies: Iterable[tuple[int, UavState, str]], weights: ThreatWeights,
                  n: int, dt: float, cfg: TargetingConfig = DEFAULT_TARGETING) -> int | None:
    """Return the id of the best-scoring alive enemy, or None if there is none.

    ``enemies`` yields ``(id, state, role)``. Equal scores (for instance every
    enemy beyond detection range) go to the nearer enemy, then the lowest id.
    """
    best_key, best_id = None, None
    for eid, state, role in sorted(enemies, key=lambda e: e[0]):
        if not state.alive:
            continue
        key = (projected_score(own, state, weights, role, n, dt, cfg), -math.dist(own.position, state.position))
        if best_key is None or key > best_key:
            best_key, best_id = key, eid
    return best_id


def nearest_enemy(own: UavState, enemies: Sequence[tuple[int, UavState, str]]) -> int | None:
    best_id, best = None, math.inf
    for eid, state, _ in sorted(enemies, key=lambda e: e[0]):
        if not state.alive:
            continue
        d = math.dist(own.position, state.position)
        if d < best:
            best_id, best = eid, d
    return best_id
