"""Cost-minimizing human-driver model for the merge scenario.

The human driver picks a constant acceleration by exhaustive grid search,
scoring each candidate with a weighted sum of comfort, desired-speed, and
conflict-proximity features over a short rollout. The weight vector is what
distinguishes driving styles: heavy proximity weight yields, heavy speed
weight pushes through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ScenarioConfig, VehicleState
from .errors import InvalidInputError

# proximity feature length scale (m): the penalty is appreciable only when
# both vehicles are within a few car lengths of the conflict point
SIGMA_PROX = 10.0

GRID_SIZE = 41


@dataclass(frozen=True)
class IrlWeights:
    """Feature weights plus desired speed and planning depth for one driver."""

    theta_accel: float
    theta_speed: float
    theta_prox: float
    v_des: float
    lookahead: int = 10

    def __post_init__(self):
        if min(self.theta_accel, self.theta_speed, self.theta_prox) < 0.0:
            raise InvalidInputError("feature weights must be >= 0")
        if max(self.theta_accel, self.theta_speed, self.theta_prox) == 0.0:
            raise InvalidInputError("at least one feature weight must be positive")
        if self.v_des <= 0.0:
            raise InvalidInputError(f"v_des must be positive, got {self.v_des}")
        if self.lookahead < 1:
            raise InvalidInputError(f"lookahead must be >= 1, got {self.lookahead}")


@dataclass(frozen=True)
class StyleRange:
    """Uniform sampling intervals for each IrlWeights field.

    Defaults span docile-but-attentive through fast-and-pushy drivers; they
    are wide enough that a predictor trained on samples from this family sees
    both yielding and crossing behavior.
    """

    theta_accel: tuple[float, float] = (0.2, 1.0)
    theta_speed: tuple[float, float] = (0.5, 2.0)
    theta_prox: tuple[float, float] = (10.0, 400.0)
    v_des: tuple[float, float] = (8.0, 16.0)
    lookahead: tuple[int, int] = (8, 14)

    def __post_init__(self):
        for name in ("theta_accel", "theta_speed", "theta_prox", "v_des", "lookahead"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise InvalidInputError(f"bad interval for {name}: ({lo}, {hi})")
        if self.v_des[0] <= 0:
            raise InvalidInputError("v_des interval must be positive")
        if self.lookahead[0] < 1:
            raise InvalidInputError("lookahead interval must start at >= 1")


# Named styles: the aggressive driver wants to run well above the speed limit
# and barely prices proximity, so it pushes through the conflict point first;
# the conservative driver creeps toward the merge, prices proximity very
# heavily, and looks far ahead, so it yields regardless of who starts in
# front.
AGGRESSIVE = IrlWeights(
    theta_accel=0.3, theta_speed=2.0, theta_prox=20.0, v_des=16.8, lookahead=10
)
CONSERVATIVE = IrlWeights(
    theta_accel=0.5, theta_speed=2.5, theta_prox=3000.0, v_des=5.5, lookahead=14
)

STYLE_PRESETS = {"aggressive": AGGRESSIVE, "conservative": CONSERVATIVE}


def sample_irl_weights(
    seed: int | np.random.Generator, style_range: StyleRange | None = None
) -> IrlWeights:
    """Draw one driver uniformly from the style family. Same seed, same draw."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = style_range if style_range is not None else StyleRange()
    return IrlWeights(
        theta_accel=float(rng.uniform(*r.theta_accel)),
        theta_speed=float(rng.uniform(*r.theta_speed)),
        theta_prox=float(rng.uniform(*r.theta_prox)),
        v_des=float(rng.uniform(*r.v_des)),
        lookahead=int(rng.integers(r.lookahead[0], r.lookahead[1] + 1)),
    )


def _action_grid(cfg: ScenarioConfig) -> np.ndarray:
    return np.linspace(cfg.u_min, cfg.u_max, GRID_SIZE)


def hdv_action(
    x_self: VehicleState,
    x_other: VehicleState,
    w: IrlWeights,
    cfg: ScenarioConfig,
) -> float:
    """Best constant acceleration over the lookahead, by grid search.

    Rollout per step: position by the double-integrator update, speed clamped
    at 0 from below. The other vehicle is extrapolated at constant velocity.
    Ties break toward the smaller |a| (and toward braking if still tied).
    """
    grid = _action_grid(cfg)
    K = w.lookahead
    dt = cfg.dt

    # vectorized rollout, one row per candidate acceleration
    v = np.full(grid.shape, x_self.v)
    z = np.full(grid.shape, x_self.z)
    cost = np.zeros_like(grid)
    sq = grid * grid
    for k in range(1, K + 1):
        z = z + dt * v + 0.5 * dt * dt * grid
        v = np.maximum(v + dt * grid, 0.0)
        z_other = x_other.z + k * dt * x_other.v
        prox = np.exp(
            -((z - cfg.z_c) ** 2 + (z_other - cfg.z_c) ** 2) / (SIGMA_PROX**2)
        )
        cost += w.theta_accel * sq + w.theta_speed * (v - w.v_des) ** 2
        cost += w.theta_prox * prox
    order = np.lexsort((grid, np.abs(grid), cost))
    return float(grid[order[0]])


def step_hdv(
    x: VehicleState,
    x_other: VehicleState,
    w: IrlWeights,
    cfg: ScenarioConfig,
) -> tuple[VehicleState, float]:
    """One closed-loop step of the human driver: pick action, move, clamp speed.

    Position follows the raw kinematic update; only speed is clamped at zero
    (the driver never reverses). No upper speed clamp applies to the HDV.
    """
    a = hdv_action(x, x_other, w, cfg)
    z_next = x.z + cfg.dt * x.v + 0.5 * cfg.dt * cfg.dt * a
    v_next = max(x.v + cfg.dt * a, 0.0)
    return VehicleState(z_next, v_next), a


def rollout_cost(
    x_self: VehicleState,
    x_other: VehicleState,
    a: float,
    w: IrlWeights,
    cfg: ScenarioConfig,
) -> float:
    """Cost that hdv_action assigns to one candidate acceleration."""
    if not math.isfinite(a):
        raise InvalidInputError(f"non-finite candidate acceleration {a}")
    z, v = x_self.z, x_self.v
    total = 0.0
    for k in range(1, w.lookahead + 1):
        z = z + cfg.dt * v + 0.5 * cfg.dt * cfg.dt * a
        v = max(v + cfg.dt * a, 0.0)
        z_other = x_other.z + k * cfg.dt * x_other.v
        prox = math.exp(
            -((z - cfg.z_c) ** 2 + (z_other - cfg.z_c) ** 2) / (SIGMA_PROX**2)
        )
        total += w.theta_accel * a * a + w.theta_speed * (v - w.v_des) ** 2
        total += w.theta_prox * prox
    return total
