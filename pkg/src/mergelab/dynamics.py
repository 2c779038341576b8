"""Vehicle kinematics, scenario geometry, and conflict-crossing utilities.

Positions are longitudinal, in meters, measured from the control-zone entry;
the conflict point sits at ``z_c``. Vehicles are treated as points. Both
vehicles only move forward, so speeds are non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class VehicleState:
    """Longitudinal position (m) and speed (m/s) of one vehicle."""

    z: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.z) and math.isfinite(self.v)):
            raise InvalidInputError(f"non-finite vehicle state (z={self.z}, v={self.v})")
        if self.v < 0.0:
            raise InvalidInputError(f"negative speed {self.v}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, bounds, and controller weights of one merging scenario.

    Defaults follow the reference experiment: 0.2 s sampling, a 70 m control
    zone with the conflict point at its end, speed range [0, 14] m/s,
    acceleration range [-3, 2] m/s^2, objective weights (1, 10, 1000), and a
    1.0 s reaction-delay parameter.
    """

    L_c: float = 70.0
    z_c: float = 70.0
    dt: float = 0.2
    v_min: float = 0.0
    v_max: float = 14.0
    u_min: float = -3.0
    u_max: float = 2.0
    w1: float = 1.0
    w2: float = 10.0
    w3: float = 1000.0
    rho: float = 1.0
    H: int = 10

    def __post_init__(self):
        if not (0.0 <= self.v_min < self.v_max):
            raise InvalidInputError("require 0 <= v_min < v_max")
        if not (self.u_min < 0.0 < self.u_max):
            raise InvalidInputError("require u_min < 0 < u_max")
        if min(self.w1, self.w2, self.w3) <= 0.0:
            raise InvalidInputError("objective weights must be positive")
        if self.rho <= 0.0:
            raise InvalidInputError("rho must be positive")
        if self.H < 1:
            raise InvalidInputError("horizon H must be >= 1")
        if self.dt <= 0.0:
            raise InvalidInputError("dt must be positive")
        if not (0.0 < self.z_c <= self.L_c):
            raise InvalidInputError("require 0 < z_c <= L_c")

    def replace(self, **kwargs) -> "ScenarioConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(kwargs)
        return ScenarioConfig(**fields)


@dataclass
class Trajectory:
    """Time-ordered states plus the accelerations applied between them.

    ``len(actions) == len(states) - 1``; action ``k`` moves state ``k`` to
    state ``k + 1``.
    """

    states: list[VehicleState]
    actions: list[float]
    dt: float

    def __post_init__(self):
        if len(self.actions) != len(self.states) - 1:
            raise InvalidInputError(
                f"{len(self.actions)} actions for {len(self.states)} states"
            )

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.z for s in self.states])

    @property
    def speeds(self) -> np.ndarray:
        return np.array([s.v for s in self.states])

    def __len__(self) -> int:
        return len(self.states)


def step_cav(x: VehicleState, u: float, dt: float) -> VehicleState:
    """Advance one state by the exact discrete double-integrator update.

    z' = z + dt*v + dt^2*u/2 and v' = v + dt*u. No bounds are applied here;
    enforcing speed/acceleration limits is the caller's job (the limits are
    optimizer constraints, not physics).
    """
    if not (math.isfinite(u) and math.isfinite(dt)):
        raise InvalidInputError(f"non-finite input (u={u}, dt={dt})")
    if dt <= 0.0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    z_next = x.z + dt * x.v + 0.5 * dt * dt * u
    v_next = x.v + dt * u
    return VehicleState(z_next, v_next)


@dataclass(frozen=True)
class BoundsVerdict:
    feasible: bool
    violations: tuple[str, ...] = field(default=())

    def __bool__(self) -> bool:
        return self.feasible


def check_bounds(x: VehicleState, u: float, cfg: ScenarioConfig) -> BoundsVerdict:
    """Check the speed and acceleration box constraints (closed intervals)."""
    violations = []
    if x.v < cfg.v_min:
        violations.append("v_min")
    if x.v > cfg.v_max:
        violations.append("v_max")
    if u < cfg.u_min:
        violations.append("u_min")
    if u > cfg.u_max:
        violations.append("u_max")
    return BoundsVerdict(not violations, tuple(violations))


def conflict_crossing_time(traj: Trajectory, z_c: float) -> float | None:
    """First time (s) the trajectory reaches position ``z_c``, or None.

    Linearly interpolates between samples; at 0.2 s sampling the raw index
    would be up to ~2.8 m coarse at top speed, which would swamp the
    crossing-gap safety metric.
    """
    z = traj.positions
    if z.size == 0:
        raise InvalidInputError("empty trajectory")
    if z[0] >= z_c:
        return 0.0
    for k in range(1, z.size):
        if z[k] >= z_c:
            z0, z1 = z[k - 1], z[k]
            frac = 0.0 if z1 == z0 else (z_c - z0) / (z1 - z0)
            return float((k - 1 + frac) * traj.dt)
    return None


def crossing_time_from_positions(z: np.ndarray, dt: float, z_c: float) -> float | None:
    """conflict_crossing_time on a bare position array."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise InvalidInputError("empty position array")
    if z[0] >= z_c:
        return 0.0
    above = np.nonzero(z >= z_c)[0]
    if above.size == 0:
        return None
    k = int(above[0])
    z0, z1 = z[k - 1], z[k]
    frac = 0.0 if z1 == z0 else (z_c - z0) / (z1 - z0)
    return float((k - 1 + frac) * dt)
