"""Receding-horizon controller for the ego vehicle.

The horizon problem eliminates states by single shooting: controls u_0..u_{H-1}
determine the ego trajectory in closed form, so the objective is a smooth
function of u alone, minimized by projected gradient descent with Armijo
backtracking. Acceleration bounds are handled exactly by projection; speed
bounds by a stiff quadratic penalty. The opponent's predicted horizon is held
fixed during a solve; the outer iteration re-predicts between solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ais import AisModel, HorizonPrediction, Observation
from .dynamics import ScenarioConfig, VehicleState
from .errors import InvalidInputError, ShapeError, SolverError

EPS_LOG = 1e-6
SPEED_PENALTY_MU = 1e4
PG_TOL = 1e-6
MAX_PG_ITERS = 500
ARMIJO_BETA = 0.5
ARMIJO_C = 1e-4


@dataclass(frozen=True)
class MpcSolution:
    """Optimized controls plus the ego trajectory they imply.

    z and v are the H+1 predicted positions/speeds including the initial
    state. They are plain arrays, not VehicleStates: optimizer iterates may
    carry a speed-bound violation up to the penalty tolerance, which the
    physical state type rejects.
    """

    u: np.ndarray
    z: np.ndarray
    v: np.ndarray
    objective: float
    iterations: int
    pg_norm: float
    converged: bool
    n_evals: int


def stage_cost(
    x1_next: VehicleState, u1: float, z2_hat: float, v2_hat: float, cfg: ScenarioConfig
) -> float:
    """Running cost of one step: control effort, speed-limit tracking, and a
    log barrier that explodes when both vehicles' reaction-extrapolated
    positions sit on the conflict point."""
    ego = x1_next.z - cfg.z_c + cfg.rho * x1_next.v
    other = z2_hat - cfg.z_c + cfg.rho * v2_hat
    return (
        cfg.w1 * u1 * u1
        + cfg.w2 * (x1_next.v - cfg.v_max) ** 2
        - cfg.w3 * math.log(ego * ego + other * other + EPS_LOG)
    )


def _rollout(u: np.ndarray, z0: float, v0: float, dt: float):
    """Positions and speeds after each control; same accumulation order as
    repeated step_cav calls."""
    v = v0 + dt * np.cumsum(u)
    v_prev = np.concatenate(([v0], v[:-1]))
    z = z0 + np.cumsum(dt * v_prev + 0.5 * dt * dt * u)
    return z, v


def _objective(u, z0, v0, other_sq, cfg):
    z, v = _rollout(u, z0, v0, cfg.dt)
    ego = z - cfg.z_c + cfg.rho * v
    q = ego * ego + other_sq + EPS_LOG
    cost = (
        cfg.w1 * np.dot(u, u)
        + cfg.w2 * np.sum((v - cfg.v_max) ** 2)
        - cfg.w3 * np.sum(np.log(q))
    )
    hi = np.maximum(v - cfg.v_max, 0.0)
    lo = np.maximum(cfg.v_min - v, 0.0)
    return cost + SPEED_PENALTY_MU * (np.dot(hi, hi) + np.dot(lo, lo))


def _objective_and_grad(u, z0, v0, other_sq, cfg):
    dt = cfg.dt
    z, v = _rollout(u, z0, v0, dt)
    ego = z - cfg.z_c + cfg.rho * v
    q = ego * ego + other_sq + EPS_LOG
    hi = np.maximum(v - cfg.v_max, 0.0)
    lo = np.maximum(cfg.v_min - v, 0.0)
    J = (
        cfg.w1 * np.dot(u, u)
        + cfg.w2 * np.sum((v - cfg.v_max) ** 2)
        - cfg.w3 * np.sum(np.log(q))
        + SPEED_PENALTY_MU * (np.dot(hi, hi) + np.dot(lo, lo))
    )
    # per-stage partials w.r.t. the stage's own (z_{k+1}, v_{k+1})
    gz = -2.0 * cfg.w3 * ego / q
    gv = (
        2.0 * cfg.w2 * (v - cfg.v_max)
        + cfg.rho * gz
        + 2.0 * SPEED_PENALTY_MU * (hi - lo)
    )
    # chain through the closed-form rollout sensitivities:
    #   dz_{k+1}/du_j = dt^2 (k - j + 1/2),  dv_{k+1}/du_j = dt   for j <= k
    # collapse the sums over k >= j with reversed cumulative sums
    k = np.arange(u.size)
    s_gz = np.cumsum(gz[::-1])[::-1]
    s_kgz = np.cumsum((k * gz)[::-1])[::-1]
    s_gv = np.cumsum(gv[::-1])[::-1]
    grad = 2.0 * cfg.w1 * u + dt * dt * (s_kgz - k * s_gz + 0.5 * s_gz) + dt * s_gv
    return J, grad


def solve_mpc(
    x1: VehicleState,
    pred: HorizonPrediction,
    cfg: ScenarioConfig,
    u_init: np.ndarray,
) -> MpcSolution:
    """Minimize the horizon objective over bounded accelerations.

    Projected gradient with Armijo backtracking (halving, slope fraction
    1e-4); stops when the unit-step projected-gradient norm drops below 1e-6
    or after 500 iterations. The returned objective never exceeds the
    objective of the (projected) initial iterate.
    """
    H = cfg.H
    if pred.H != H:
        raise ShapeError(f"prediction horizon {pred.H} != cfg.H {H}")
    u_init = np.asarray(u_init, dtype=np.float64)
    if u_init.shape != (H,):
        raise ShapeError(f"u_init shape {u_init.shape} != ({H},)")
    if not np.all(np.isfinite(u_init)):
        raise InvalidInputError("non-finite u_init")

    other_sq = (pred.z_hat - cfg.z_c + cfg.rho * pred.v_hat) ** 2
    lo, hi = cfg.u_min, cfg.u_max
    u = np.clip(u_init, lo, hi)
    J, grad = _objective_and_grad(u, x1.z, x1.v, other_sq, cfg)
    if not math.isfinite(J):
        raise SolverError(f"objective not finite at initial point ({J})")
    n_evals = 1
    t_init = 1.0
    pg_norm = float(np.linalg.norm(u - np.clip(u - grad, lo, hi)))
    iterations = 0
    stalled = 0
    J_window = J

    for iterations in range(1, MAX_PG_ITERS + 1):
        if pg_norm < PG_TOL:
            iterations -= 1
            break
        t = t_init
        accepted = False
        while t > 1e-14:
            u_new = np.clip(u - t * grad, lo, hi)
            step = u_new - u
            slope = float(np.dot(grad, step))
            J_new = _objective(u_new, x1.z, x1.v, other_sq, cfg)
            n_evals += 1
            if J_new <= J + ARMIJO_C * slope:
                accepted = True
                break
            t *= ARMIJO_BETA
        if not accepted:
            break
        # progress below float resolution of the objective: further iterations
        # only burn evaluations without moving the iterate meaningfully
        if abs(J_new - J) <= 32.0 * np.finfo(float).eps * max(1.0, abs(J)):
            stalled += 1
            if stalled >= 3:
                u, J = u_new, J_new
                break
        else:
            stalled = 0
        J_new, grad_new = _objective_and_grad(u_new, x1.z, x1.v, other_sq, cfg)
        n_evals += 1
        # spectral (Barzilai-Borwein) guess for the next initial step; the
        # Armijo backtracking above still guards every move
        du = u_new - u
        dg = grad_new - grad
        curv = float(np.dot(du, dg))
        if curv > 0.0:
            t_init = min(max(float(np.dot(du, du)) / curv, 1e-10), 1e3)
        else:
            t_init = min(t / ARMIJO_BETA, 1e3)
        u, J, grad = u_new, J_new, grad_new
        pg_norm = float(np.linalg.norm(u - np.clip(u - grad, lo, hi)))
        # long flat-valley grinds: improvements orders of magnitude below the
        # objective scale never change the applied control
        if iterations % 25 == 0:
            if J_window - J < 1e-7 * max(1.0, abs(J)):
                break
            J_window = J

    # reconstruct states sequentially so they match repeated exact stepping
    z_out = np.empty(H + 1)
    v_out = np.empty(H + 1)
    z_out[0], v_out[0] = x1.z, x1.v
    dt = cfg.dt
    for k in range(H):
        z_out[k + 1] = z_out[k] + dt * v_out[k] + 0.5 * dt * dt * u[k]
        v_out[k + 1] = v_out[k] + dt * u[k]
    return MpcSolution(
        u=u,
        z=z_out,
        v=v_out,
        objective=float(J),
        iterations=iterations,
        pg_norm=pg_norm,
        converged=pg_norm < PG_TOL,
        n_evals=n_evals,
    )


@dataclass(frozen=True)
class MpcStepDiagnostics:
    change_norms: tuple[float, ...]
    solution: MpcSolution
    prediction: HorizonPrediction


def iterative_mpc_step(
    model: AisModel,
    s_prev: np.ndarray,
    y: Observation,
    u_prev: float,
    cfg: ScenarioConfig,
    j_max: int = 3,
) -> tuple[float, np.ndarray, MpcStepDiagnostics]:
    """One control update: encode the observation, then alternate predicting
    the opponent (conditioned on the current plan's first move) with re-solving
    the horizon problem warm-started at the previous plan. The plan starts at
    zero each call; the first element of the final plan is applied."""
    if j_max < 1:
        raise InvalidInputError(f"j_max must be >= 1, got {j_max}")
    if model.H != cfg.H:
        raise InvalidInputError(f"model horizon {model.H} != cfg.H {cfg.H}")
    s = model.encode(s_prev, y, u_prev)
    x1 = VehicleState(y.z1, y.v1)
    u = np.zeros(cfg.H)
    change_norms = []
    sol = None
    pred = None
    for _ in range(j_max):
        pred = model.decode(s, float(u[0]))
        sol = solve_mpc(x1, pred, cfg, u_init=u)
        change_norms.append(float(np.linalg.norm(sol.u - u)))
        u = sol.u
    return (
        float(u[0]),
        s,
        MpcStepDiagnostics(tuple(change_norms), sol, pred),
    )
