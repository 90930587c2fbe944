"""Relative geometry between two aircraft and the weapon-sector predicates."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .flightdyn import UavState, wrap_angle

DEGENERATE_RANGE = 1e-6


@dataclass(frozen=True, slots=True)
class RelativeGeometry:
    alpha: float  # angle off, [0, pi]
    beta: float  # target aspect w.r.t. the reversed line of sight, [0, pi]
    d: float  # range, m
    alpha_signed: float = 0.0  # alpha carrying the sign of the horizontal bearing (left positive)
    degenerate: bool = False


@dataclass
class SectorConfig:
    wez_range: float = 4000.0
    wez_angle: float = math.pi / 4  # sector apex angle
    hit_range: float = 300.0
    missile_fov: float = math.pi / 4
    # read the two angles above as full apex angles (half-angle = angle / 2)
    angles_are_full: bool = True

    @property
    def wez_half_angle(self) -> float:
        return self.wez_angle / 2 if self.angles_are_full else self.wez_angle

    @property
    def fov_half_angle(self) -> float:
        return self.missile_fov / 2 if self.angles_are_full else self.missile_fov


DEFAULT_SECTORS = SectorConfig()


def _angle_between(ax, ay, az, bx, by, bz) -> float:
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    return math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), ax * bx + ay * by + az * bz)


def relative_geometry(own: UavState, target: UavState) -> RelativeGeometry:
    """Angle off, aspect and range from ``own`` to ``target`` (same frame).

    Headings are taken from the velocity vectors, so mirrored states give
    bit-identical results.
    """
    lx = target.p_x - own.p_x
    ly = target.p_y - own.p_y
    lz = target.p_z - own.p_z
    d = math.sqrt(lx * lx + ly * ly + lz * lz)
    if d < DEGENERATE_RANGE:
        return RelativeGeometry(0.0, 0.0, d, 0.0, True)
    alpha = _angle_between(own.v_x, own.v_y, own.v_z, lx, ly, lz)
    beta = _angle_between(target.v_x, target.v_y, target.v_z, -lx, -ly, -lz)
    # horizontal side of the LOS: sign of (heading x LOS).z
    side = own.v_x * ly - own.v_y * lx
    return RelativeGeometry(alpha, beta, d, alpha if side >= 0 else -alpha, False)


def bearing_and_elevation(own: UavState, target: UavState) -> tuple[float, float]:
    """Heading and pitch that would point ``own`` straight at ``target``."""
    lx = target.p_x - own.p_x
    ly = target.p_y - own.p_y
    lz = target.p_z - own.p_z
    return math.atan2(ly, lx), math.atan2(lz, math.hypot(lx, ly))


def in_wez(own: UavState, target: UavState, sectors: SectorConfig = DEFAULT_SECTORS) -> bool:
    g = relative_geometry(own, target)
    return g.d <= sectors.wez_range and g.alpha <= sectors.wez_half_angle


def missile_hit(own: UavState, target: UavState, sectors: SectorConfig = DEFAULT_SECTORS) -> bool:
    if not (own.alive and target.alive):
        return False
    g = relative_geometry(own, target)
    return g.d < sectors.hit_range and g.alpha <= sectors.fov_half_angle


def mirror(state: UavState) -> UavState:
    """Point reflection through the vertical axis at the origin.

    Positions and velocities are negated exactly; this is how one team's
    frame maps onto the other's.
    """
    return UavState(
        -state.p_x, -state.p_y, state.p_z, state.v, state.phi, state.theta,
        wrap_angle(state.psi + math.pi), -state.v_x, -state.v_y, state.v_z,
        state.p, state.q, state.r, state.alive,
    )


def extrapolate(state: UavState, t: float) -> UavState:
    """Constant-velocity prediction ``t`` seconds ahead."""
    return UavState(
        state.p_x + state.v_x * t, state.p_y + state.v_y * t, state.p_z + state.v_z * t,
        state.v, state.phi, state.theta, state.psi, state.v_x, state.v_y, state.v_z,
        state.p, state.q, state.r, state.alive,
    )
