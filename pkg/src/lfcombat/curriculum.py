"""Per-manoeuvre pretraining: each actor trains on its own start states and reward mix.

* approach: opponents 6-10 km away in any direction, distance term dominant.
* offensive: opponent 2-5 km ahead and flying away, posture term dominant.
* defensive: own aircraft starts inside the opponent's WEZ; a per-second
  survival bonus rewards staying alive.

During a stage the selector is bypassed (every blue agent flies the stage's
actor) and only the motor level is updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

from .arena import ArenaConfig
from .flightdyn import UavState
from .hrl import SubPolicyId
from .lfmappo import CollectEnv, PolicyParams, TrainConfig, training_run

LATERAL_SPACING = 1500.0  # m between successive blue/red pairs


@dataclass(frozen=True)
class Stage:
    subpolicy: SubPolicyId
    range_m: tuple[float, float]
    w_posture: float
    w_distance: float
    survival_bonus: float = 0.0


STAGES = (
    Stage(SubPolicyId.APPROACH, (6000.0, 10000.0), w_posture=0.2, w_distance=1.0),
    Stage(SubPolicyId.OFFENSIVE, (2000.0, 5000.0), w_posture=1.0, w_distance=0.2),
    Stage(SubPolicyId.DEFENSIVE, (1000.0, 3600.0), w_posture=0.2, w_distance=0.2, survival_bonus=1.0),
)


def _pair(rng: np.random.Generator, cfg: ArenaConfig, stage: Stage, k: int) -> tuple[UavState, UavState]:
    """World-frame (blue, red) start states for pair ``k``."""
    z = float(rng.uniform(*cfg.spawn_z))
    v_b, v_r = (float(rng.uniform(*cfg.spawn_speed)) for _ in range(2))
    bx, by = 0.0, (k - 0.5 * (cfg.team_size - 1)) * LATERAL_SPACING
    rng_m = float(rng.uniform(*stage.range_m))
    if stage.subpolicy is SubPolicyId.APPROACH:
        psi_b = float(rng.uniform(-math.pi, math.pi))
        bearing = float(rng.uniform(-math.pi, math.pi))
        psi_r = float(rng.uniform(-math.pi, math.pi))
        rx, ry = bx + rng_m * math.cos(bearing), by + rng_m * math.sin(bearing)
    elif stage.subpolicy is SubPolicyId.OFFENSIVE:
        # opponent inside the nose cone, tail toward us
        psi_b = float(rng.uniform(-math.pi, math.pi))
        bearing = psi_b + float(rng.uniform(-1.0, 1.0)) * cfg.wez_angle / 4
        psi_r = bearing + float(rng.uniform(-1.0, 1.0)) * math.pi / 6
        rx, ry = bx + rng_m * math.cos(bearing), by + rng_m * math.sin(bearing)
    else:
        # opponent behind us with its nose on us, inside its WEZ cone
        psi_r = float(rng.uniform(-math.pi, math.pi))
        rx, ry = bx - rng_m * math.cos(psi_r), by - rng_m * math.sin(psi_r)
        off = float(rng.uniform(-1.0, 1.0)) * 0.8 * cfg.wez_angle / 2  # keep a margin inside the cone
        psi_r += off
        psi_b = psi_r + float(rng.uniform(-1.0, 1.0)) * math.pi / 3
    blue = UavState.from_attitude(bx, by, z, v_b, psi=psi_b)
    red = UavState.from_attitude(rx, ry, z + float(rng.uniform(-200.0, 200.0)), v_r, psi=psi_r)
    return blue, red


class StageSpawn:
    """Picklable spawn function so stages can fan out over worker processes."""

    def __init__(self, stage: Stage):
        self.stage = stage

    def __call__(self, rng: np.random.Generator, cfg: ArenaConfig) -> list[UavState]:
        pairs = [_pair(rng, cfg, self.stage, k) for k in range(cfg.team_size)]
        return [b for b, _ in pairs] + [r for _, r in pairs]


def stage_env(env: CollectEnv, stage: Stage) -> CollectEnv:
    arena = replace(env.arena, w_posture=stage.w_posture, w_distance=stage.w_distance,
                    survival_bonus=stage.survival_bonus)
    return replace(env, arena=arena, spawn_fn=StageSpawn(stage), forced_subpolicy=int(stage.subpolicy))


def stage_seed(seed: int, stage: Stage) -> int:
    return int(np.random.SeedSequence([seed, 50_021, int(stage.subpolicy)]).generate_state(1)[0])


def pretrain(params: PolicyParams, cfg: TrainConfig, env: CollectEnv, seed: int, iters: int,
             parallel: int = 1) -> Iterator[tuple[Stage, PolicyParams, dict]]:
    """Run ``iters`` motor-only iterations per stage, in stage order."""
    tcfg = replace(cfg, train_selector=False, train_motor=True)
    for stage in STAGES:
        for params, m in training_run(params, tcfg, stage_env(env, stage), stage_seed(seed, stage), 0, iters,
                                      parallel):
            yield stage, params, m
