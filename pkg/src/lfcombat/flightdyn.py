"""Kinematic six-degree-of-freedom aircraft model.

Attitude rates follow the surface commands through a first-order lag, speed
follows throttle minus a quadratic drag fraction, and the velocity vector is
kept aligned with the body forward axis (coordinated flight). Everything is
plain float arithmetic so trajectories are bit-reproducible.

Frame: x forward at psi = 0, y to the left, z up (``p_z`` is altitude).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

G = 9.80665
TWO_PI = 2.0 * math.pi


class MalformedStateError(ValueError):
    """A state or control record carries a non-finite field."""


@dataclass
class DynamicsConfig:
    dt: float = 0.02  # s, 50 Hz physics ceiling
    v_min: float = 60.0  # m/s
    v_max: float = 340.0  # m/s
    tau: float = 0.5  # s, attitude-rate lag
    max_roll_rate: float = 2.0 * math.pi / 3.0  # rad/s
    max_pitch_rate: float = math.pi / 6.0  # rad/s
    max_yaw_rate: float = math.pi / 6.0  # rad/s
    max_axial_accel: float = 10.0  # m/s^2
    max_bank: float = math.radians(75.0)
    max_pitch: float = math.radians(60.0)
    n_max: float = 9.0  # g, structural overload limit
    altitude_min: float = 3000.0  # m
    g: float = G

    def validate(self) -> list[str]:
        errs = []
        if self.dt <= 0:
            errs.append("dynamics.dt must be > 0")
        if not 0 < self.v_min < self.v_max:
            errs.append("dynamics.v_min/v_max must satisfy 0 < v_min < v_max")
        if self.tau <= 0:
            errs.append("dynamics.tau must be > 0")
        for name in ("max_roll_rate", "max_pitch_rate", "max_yaw_rate", "max_axial_accel", "n_max"):
            if getattr(self, name) <= 0:
                errs.append(f"dynamics.{name} must be > 0")
        if not 0 < self.max_bank < math.pi / 2:
            errs.append("dynamics.max_bank must lie in (0, pi/2)")
        if not 0 < self.max_pitch < math.pi / 2:
            errs.append("dynamics.max_pitch must lie in (0, pi/2)")
        return errs


DEFAULT_DYNAMICS = DynamicsConfig()


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi]."""
    return math.remainder(a, TWO_PI)


@dataclass(slots=True)
class UavState:
    p_x: float
    p_y: float
    p_z: float
    v: float
    phi: float
    theta: float
    psi: float
    v_x: float
    v_y: float
    v_z: float
    # body rates (roll, pitch, yaw); the lag state of the attitude loops
    p: float = 0.0
    q: float = 0.0
    r: float = 0.0
    alive: bool = True

    @classmethod
    def from_attitude(cls, p_x, p_y, p_z, v, phi=0.0, theta=0.0, psi=0.0, p=0.0, q=0.0, r=0.0, alive=True):
        ct = math.cos(theta)
        return cls(
            float(p_x), float(p_y), float(p_z), float(v),
            wrap_angle(phi), wrap_angle(theta), wrap_angle(psi),
            v * ct * math.cos(psi), v * ct * math.sin(psi), v * math.sin(theta),
            float(p), float(q), float(r), bool(alive),
        )

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.p_x, self.p_y, self.p_z)

    @property
    def velocity(self) -> tuple[float, float, float]:
        return (self.v_x, self.v_y, self.v_z)

    def is_finite(self) -> bool:
        return all(
            math.isfinite(x)
            for x in (self.p_x, self.p_y, self.p_z, self.v, self.phi, self.theta, self.psi,
                      self.v_x, self.v_y, self.v_z, self.p, self.q, self.r)
        )


@dataclass(frozen=True, slots=True)
class ControlInput:
    d_phi: float = 0.0  # aileron
    d_theta: float = 0.0  # elevator
    d_psi: float = 0.0  # rudder
    d_th: float = 0.0  # throttle, [-1, 1] -> [0, 1]

    @property
    def throttle_frac(self) -> float:
        return (self.d_th + 1.0) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_phi, self.d_theta, self.d_psi, self.d_th)


def _clamp_unit(x: float) -> float:
    if x != x:  # NaN
        return 0.0
    return -1.0 if x < -1.0 else (1.0 if x > 1.0 else float(x))


def clamp_controls(d_phi, d_theta, d_psi, d_th) -> ControlInput:
    """Saturate raw commands into [-1, 1]; NaN becomes 0."""
    return ControlInput(_clamp_unit(d_phi), _clamp_unit(d_theta), _clamp_unit(d_psi), _clamp_unit(d_th))


def trim_throttle(v: float, cfg: DynamicsConfig = DEFAULT_DYNAMICS) -> float:
    """Throttle fraction in [0, 1] that holds speed ``v`` in level flight."""
    return min(1.0, (v / cfg.v_max) ** 2)


def trim_command(v: float, cfg: DynamicsConfig = DEFAULT_DYNAMICS) -> float:
    return 2.0 * trim_throttle(v, cfg) - 1.0


def step_dynamics(state: UavState, controls: ControlInput, dt: float | None = None,
                  cfg: DynamicsConfig = DEFAULT_DYNAMICS) -> UavState:
    """Advance one aircraft by ``dt`` seconds with semi-implicit Euler."""
    if dt is None:
        dt = cfg.dt
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not state.is_finite() or not all(math.isfinite(c) for c in controls.as_tuple()):
        raise MalformedStateError(f"non-finite field in state/controls: {state} {controls}")
    if not state.alive:
        return state
    c = clamp_controls(*controls.as_tuple())

    # exact discretisation of the rate lag keeps large dt stable
    lag = 1.0 - math.exp(-dt / cfg.tau)
    p = state.p + (c.d_phi * cfg.max_roll_rate - state.p) * lag
    q = state.q + (c.d_theta * cfg.max_pitch_rate - state.q) * lag
    r = state.r + (c.d_psi * cfg.max_yaw_rate - state.r) * lag

    phi = state.phi + p * dt
    if phi > cfg.max_bank:
        phi, p = cfg.max_bank, min(p, 0.0)
    elif phi < -cfg.max_bank:
        phi, p = -cfg.max_bank, max(p, 0.0)
    theta = state.theta + q * dt
    if theta > cfg.max_pitch:
        theta, q = cfg.max_pitch, min(q, 0.0)
    elif theta < -cfg.max_pitch:
        theta, q = -cfg.max_pitch, max(q, 0.0)

    # coordinated turn: bank couples into heading rate
    psi = wrap_angle(state.psi + (r + cfg.g / state.v * math.tan(phi)) * dt)

    accel = cfg.max_axial_accel * (c.throttle_frac - (state.v / cfg.v_max) ** 2) - cfg.g * math.sin(theta)
    accel = max(-cfg.max_axial_accel, min(cfg.max_axial_accel, accel))
    v = min(cfg.v_max, max(cfg.v_min, state.v + accel * dt))

    ct = math.cos(theta)
    v_x = v * ct * math.cos(psi)
    v_y = v * ct * math.sin(psi)
    v_z = v * math.sin(theta)
    return UavState(
        state.p_x + v_x * dt, state.p_y + v_y * dt, state.p_z + v_z * dt,
        v, wrap_angle(phi), wrap_angle(theta), psi, v_x, v_y, v_z, p, q, r, True,
    )


class Violation(enum.Enum):
    NONE = "none"
    ALTITUDE_FLOOR = "altitude_floor"
    OVERLOAD = "overload"


@dataclass(frozen=True)
class EnvelopeStatus:
    within_envelope: bool
    violation: Violation
    load_factor: float


def load_factor(state: UavState, prev: UavState, dt: float, g: float = G) -> float:
    ax = (state.v_x - prev.v_x) / dt
    ay = (state.v_y - prev.v_y) / dt
    az = (state.v_z - prev.v_z) / dt + g
    return math.sqrt(ax * ax + ay * ay + az * az) / g


def check_flight_envelope(state: UavState, prev: UavState, dt: float,
                          cfg: DynamicsConfig = DEFAULT_DYNAMICS) -> EnvelopeStatus:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = load_factor(state, prev, dt, cfg.g)
    if state.p_z < cfg.altitude_min:
        return EnvelopeStatus(False, Violation.ALTITUDE_FLOOR, n)
    if n > cfg.n_max:
        return EnvelopeStatus(False, Violation.OVERLOAD, n)
    return EnvelopeStatus(True, Violation.NONE, n)
