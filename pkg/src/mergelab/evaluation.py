"""Closed-loop episodes, the crossing-gap safety metric, Monte-Carlo safety
tables, empirical prediction-quality bounds, and report emission.

An episode puts the controlled car (CAV, vehicle 1) on the main road and a
simulated human driver (HDV, vehicle 2) on the ramp, both heading for the
conflict point ``z_c``. The runner alternates observation -> controller
action -> plant step until both vehicles are past the conflict point or the
time cap hits. Everything downstream (safety tables, bound estimates,
reports) is a pure function of (model, config, seeds), so reruns are
byte-for-byte reproducible.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ais import AisModel, Observation, encoder_inputs
from .driver import IrlWeights, StyleRange, hdv_action, sample_irl_weights, step_hdv
from .dynamics import (
    ScenarioConfig,
    Trajectory,
    VehicleState,
    crossing_time_from_positions,
    step_cav,
)
from .errors import InvalidInputError
from .mpc import iterative_mpc_step, stage_cost

CONTROLLERS = ("iterative-mpc", "gap-acceptance", "irl")

# crossing-time gap below which an episode counts as unsafe
TAU_SAFE = 1.0

# rule-based yielding controller: accepted arrival-time gap and P gain
GAP_ACCEPT_S = 1.5
GAP_GAIN = 0.5

EPISODE_CAP_S = 60.0
EXIT_MARGIN_M = 10.0

INIT_Z_RANGE = (-10.0, 10.0)
INIT_V_RANGE = (8.0, 12.0)


@dataclass(frozen=True)
class EpisodeLog:
    """Everything one closed-loop episode produced.

    ``stage_costs[k]`` is the running cost of the transition from step k to
    k+1, evaluated on the realized next states. ``ais_states`` holds the
    predictor state after each encode (iterative-mpc controller only).
    """

    cav: Trajectory
    hdv: Trajectory
    stage_costs: np.ndarray
    cav_crossing: float | None
    hdv_crossing: float | None
    safe: bool
    tau_safe: float
    controller: str
    hdv_weights: IrlWeights
    cav_weights: IrlWeights | None = None
    ais_states: np.ndarray | None = None
    seed: int | None = None
    step_capped: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "stage_costs", np.asarray(self.stage_costs, dtype=np.float64)
        )
        n = len(self.cav)
        if len(self.hdv) != n:
            raise InvalidInputError(
                f"trajectories disagree on length: {n} vs {len(self.hdv)}"
            )
        if self.stage_costs.shape != (n - 1,):
            raise InvalidInputError(
                f"{self.stage_costs.shape[0]} stage costs for {n} states"
            )
        if self.controller not in CONTROLLERS:
            raise InvalidInputError(f"unknown controller {self.controller!r}")
        if self.ais_states is not None:
            states = np.asarray(self.ais_states, dtype=np.float64)
            object.__setattr__(self, "ais_states", states)
            if states.shape[0] != n - 1:
                raise InvalidInputError(
                    f"{states.shape[0]} predictor states for {n - 1} steps"
                )

    @property
    def n_steps(self) -> int:
        return len(self.cav) - 1


@dataclass(frozen=True)
class SafetyRow:
    rho: float
    safe_count: int
    total: int

    def __post_init__(self):
        if not 0 <= self.safe_count <= self.total:
            raise InvalidInputError(
                f"safe count {self.safe_count} outside [0, {self.total}]"
            )

    @property
    def percentage(self) -> float:
        return 100.0 * self.safe_count / self.total


@dataclass(frozen=True)
class SafetyTable:
    """Per-rho safe-episode counts for one model."""

    model: str
    rows: tuple[SafetyRow, ...]
    tau_safe: float = TAU_SAFE

    def row(self, rho: float) -> SafetyRow:
        for r in self.rows:
            if r.rho == rho:
                return r
        raise KeyError(f"no row for rho={rho}")


def sample_initial_states(
    rng: int | np.random.Generator, cfg: ScenarioConfig | None = None
) -> tuple[VehicleState, VehicleState]:
    """Draw entry conditions for one episode: CAV then HDV, position then
    speed. Both start near the control-zone entrance at cruising speed."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z1 = rng.uniform(*INIT_Z_RANGE)
    v1 = rng.uniform(*INIT_V_RANGE)
    z2 = rng.uniform(*INIT_Z_RANGE)
    v2 = rng.uniform(*INIT_V_RANGE)
    return VehicleState(z1, v1), VehicleState(z2, v2)


def gap_acceptance_action(
    x1: VehicleState, x2: VehicleState, cfg: ScenarioConfig
) -> float:
    """Rule-based yielding controller used to produce the safe dataset.

    Estimates both constant-speed arrival times at the conflict point. If the
    gap is below GAP_ACCEPT_S the CAV tracks a speed that would land it
    GAP_ACCEPT_S behind the human driver; otherwise it tracks v_max. A
    vehicle that is already past the conflict point or standing still has no
    defined arrival time, in which case the CAV just goes.
    """
    t1 = (cfg.z_c - x1.z) / x1.v if x1.z < cfg.z_c and x1.v > 1e-9 else None
    t2 = (cfg.z_c - x2.z) / x2.v if x2.z < cfg.z_c and x2.v > 1e-9 else None
    if t1 is None or t2 is None or abs(t1 - t2) >= GAP_ACCEPT_S:
        v_target = cfg.v_max
    else:
        v_target = (cfg.z_c - x1.z) / (t2 + GAP_ACCEPT_S)
    u = GAP_GAIN * (v_target - x1.v)
    return float(min(max(u, cfg.u_min), cfg.u_max))


def run_episode(
    controller: str,
    hdv_weights: IrlWeights,
    init: tuple[VehicleState, VehicleState],
    cfg: ScenarioConfig,
    seed: int | None = None,
    *,
    model: AisModel | None = None,
    j_max: int = 3,
    cav_weights: IrlWeights | None = None,
    tau_safe: float = TAU_SAFE,
    max_seconds: float = EPISODE_CAP_S,
) -> EpisodeLog:
    """Run one closed-loop episode and log everything.

    The CAV is driven by the named controller; the HDV always follows its
    sampled objective. Applied CAV accelerations are clipped so the speed
    never goes negative (the optimizer's penalty allows microscopic
    undershoot that the physical state type rejects), which keeps the logged
    trajectory exactly consistent with the logged actions.
    """
    if controller not in CONTROLLERS:
        raise InvalidInputError(f"unknown controller {controller!r}")
    if controller == "iterative-mpc" and model is None:
        raise InvalidInputError("iterative-mpc controller needs a model")
    if controller == "irl" and cav_weights is None:
        raise InvalidInputError("irl controller needs cav_weights")

    x1, x2 = init
    exit_z = cfg.z_c + EXIT_MARGIN_M
    max_steps = int(round(max_seconds / cfg.dt))

    states1, states2 = [x1], [x2]
    u1s: list[float] = []
    u2s: list[float] = []
    costs: list[float] = []
    ais_states: list[np.ndarray] = []
    s = model.init_state() if model is not None else None
    u1_prev = 0.0
    u2_prev = 0.0

    for _ in range(max_steps):
        if x1.z > exit_z and x2.z > exit_z:
            break
        if controller == "iterative-mpc":
            y = Observation(x1.z, x1.v, u1_prev, x2.z, x2.v, u2_prev)
            u1_cmd, s, _ = iterative_mpc_step(model, s, y, u1_prev, cfg, j_max)
            ais_states.append(s)
        elif controller == "gap-acceptance":
            u1_cmd = gap_acceptance_action(x1, x2, cfg)
        else:
            u1_cmd = hdv_action(x1, x2, cav_weights, cfg)
        # the full-stop floor is shaved by 1e-12 relative: an exact -v/dt can
        # round the successor speed to -1e-16-ish, which the state type rejects
        u_floor = max(cfg.u_min, -x1.v / cfg.dt * (1.0 - 1e-12))
        u1 = min(max(u1_cmd, u_floor), cfg.u_max)
        x2_next, u2 = step_hdv(x2, x1, hdv_weights, cfg)
        x1_next = step_cav(x1, u1, cfg.dt)
        costs.append(stage_cost(x1_next, u1, x2_next.z, x2_next.v, cfg))
        u1s.append(u1)
        u2s.append(u2)
        states1.append(x1_next)
        states2.append(x2_next)
        u1_prev, u2_prev = u1, u2
        x1, x2 = x1_next, x2_next

    capped = not (x1.z > exit_z and x2.z > exit_z)
    cav = Trajectory(states1, u1s, cfg.dt)
    hdv = Trajectory(states2, u2s, cfg.dt)
    t1 = crossing_time_from_positions(cav.positions, cfg.dt, cfg.z_c)
    t2 = crossing_time_from_positions(hdv.positions, cfg.dt, cfg.z_c)
    safe = bool(t1 is None or t2 is None or abs(t1 - t2) >= tau_safe)
    return EpisodeLog(
        cav=cav,
        hdv=hdv,
        stage_costs=np.array(costs),
        cav_crossing=t1,
        hdv_crossing=t2,
        safe=safe,
        tau_safe=tau_safe,
        controller=controller,
        hdv_weights=hdv_weights,
        cav_weights=cav_weights,
        ais_states=np.array(ais_states) if ais_states else None,
        seed=seed,
        step_capped=capped,
    )


def is_safe(log: EpisodeLog, tau_safe: float = TAU_SAFE) -> bool:
    """Safe iff the conflict-crossing times are at least tau_safe apart.
    A vehicle that never reaches the conflict point cannot collide there, so
    missing crossings count as safe."""
    if log.cav_crossing is None or log.hdv_crossing is None:
        return True
    return abs(log.cav_crossing - log.hdv_crossing) >= tau_safe


def _mc_episode(
    model: AisModel,
    cfg: ScenarioConfig,
    seed: int,
    style_range: StyleRange | None,
    j_max: int,
    tau_safe: float,
) -> bool:
    rng = np.random.default_rng(seed)
    weights = sample_irl_weights(rng, style_range)
    init = sample_initial_states(rng, cfg)
    log = run_episode(
        "iterative-mpc",
        weights,
        init,
        cfg,
        seed=seed,
        model=model,
        j_max=j_max,
        tau_safe=tau_safe,
    )
    return log.safe


def monte_carlo(
    model: AisModel,
    rho_values: list[float],
    n: int,
    master_seed: int,
    cfg: ScenarioConfig,
    style_range: StyleRange | None = None,
    *,
    j_max: int = 3,
    tau_safe: float = TAU_SAFE,
    jobs: int | None = None,
    label: str = "model",
) -> SafetyTable:
    """Seeded safety sweep: n episodes per rho value, same driver draws and
    initial conditions reused across rho (paired comparison). Episode seeds
    derive from the master seed alone, so the table is independent of any
    execution schedule; a failing episode aborts the whole table rather than
    biasing the counts."""
    if n < 1:
        raise InvalidInputError(f"need n >= 1 episodes per cell, got {n}")
    if not rho_values:
        raise InvalidInputError("need at least one rho value")
    seeds = [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n)]
    rows = []
    for rho in rho_values:
        cfg_rho = cfg.replace(rho=float(rho))
        if jobs is not None and jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                verdicts = list(
                    pool.map(
                        _mc_episode,
                        [model] * n,
                        [cfg_rho] * n,
                        seeds,
                        [style_range] * n,
                        [j_max] * n,
                        [tau_safe] * n,
                        chunksize=max(1, n // (4 * jobs)),
                    )
                )
        else:
            verdicts = [
                _mc_episode(model, cfg_rho, s, style_range, j_max, tau_safe)
                for s in seeds
            ]
        rows.append(SafetyRow(float(rho), sum(verdicts), n))
    return SafetyTable(label, tuple(rows), tau_safe)


def estimate_ap_bounds(
    model: AisModel, dataset, cfg: ScenarioConfig
) -> tuple[float, float]:
    """Empirical prediction-quality bounds of a model on held-out episodes.

    epsilon_hat: worst absolute gap between the stage cost computed from the
    realized next states and the same cost computed from the decoded
    prediction, over every decodable step. delta_hat: worst distance between
    the predicted mean and the realized future, measured in the decoder's
    scaled output space (where the unit-variance predictive distribution
    lives, making this the closed-form distribution distance).
    """
    if model.variant != "merge":
        raise InvalidInputError(
            "prediction-quality bounds are defined for the merge scenario only"
        )
    episodes = getattr(dataset, "episodes", dataset)
    if not episodes:
        raise InvalidInputError("empty dataset")
    H = model.H
    eps_hat = 0.0
    delta_hat = 0.0
    checked = 0
    for ep in episodes:
        obs = np.asarray(ep.observations, dtype=np.float64)
        n = obs.shape[0]
        if n < H + 1:
            continue
        feeds, u_prevs = encoder_inputs(model.variant, obs)
        s = model.init_state()
        for t in range(n - H):
            s = model.encode(s, feeds[t], u_prevs[t])
            pred = model.decode(s, obs[t, 2])
            ref_z = obs[t + 1 : t + 1 + H, 3]
            ref_v = obs[t + 1 : t + 1 + H, 4]
            scaled = np.concatenate(
                [
                    (pred.z_hat - ref_z) / model.out_scale[0],
                    (pred.v_hat - ref_v) / model.out_scale[1],
                ]
            )
            delta_hat = max(delta_hat, float(np.linalg.norm(scaled)))
            for k in range(1, H + 1):
                x1_next = VehicleState(obs[t + k, 0], obs[t + k, 1])
                u1 = obs[t + k - 1, 2]
                c_real = stage_cost(x1_next, u1, obs[t + k, 3], obs[t + k, 4], cfg)
                c_pred = stage_cost(
                    x1_next, u1, pred.z_hat[k - 1], pred.v_hat[k - 1], cfg
                )
                eps_hat = max(eps_hat, abs(c_real - c_pred))
            checked += 1
    if checked == 0:
        raise InvalidInputError(
            f"no episode is long enough to decode a horizon of {H}"
        )
    return eps_hat, delta_hat


# --- report emission ---


def _meta_lines(meta: dict | None) -> list[str]:
    from . import __version__

    lines = [f"# mergelab {__version__}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {value}")
    return lines


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return repr(float(x))


def _episode_csv(log: EpisodeLog, meta: dict | None) -> str:
    header = dict(meta or {})
    header.update(
        {
            "controller": log.controller,
            "seed": log.seed,
            "hdv_weights": _weights_str(log.hdv_weights),
            "cav_weights": _weights_str(log.cav_weights),
            "tau_safe": log.tau_safe,
            "cav_crossing": log.cav_crossing,
            "hdv_crossing": log.hdv_crossing,
            "safe": log.safe,
            "step_capped": log.step_capped,
            "dt": log.cav.dt,
        }
    )
    lines = _meta_lines(header)
    lines.append("t,z1,v1,u1,z2,v2,u2,stage_cost")
    n = len(log.cav)
    z1, v1 = log.cav.positions, log.cav.speeds
    z2, v2 = log.hdv.positions, log.hdv.speeds
    for k in range(n):
        # the final row closes the state sequence; no action follows it
        u1 = log.cav.actions[k] if k < n - 1 else 0.0
        u2 = log.hdv.actions[k] if k < n - 1 else 0.0
        c = log.stage_costs[k] if k < n - 1 else 0.0
        t = k * log.cav.dt
        lines.append(
            ",".join(_fmt(x) for x in (t, z1[k], v1[k], u1, z2[k], v2[k], u2, c))
        )
    return "\n".join(lines) + "\n"


def _weights_str(w: IrlWeights | None) -> str:
    if w is None:
        return "none"
    return (
        f"{w.theta_accel!r}/{w.theta_speed!r}/{w.theta_prox!r}"
        f"/{w.v_des!r}/{w.lookahead}"
    )


def _episode_json(log: EpisodeLog, meta: dict | None) -> str:
    doc = {
        "meta": dict(meta or {}),
        "controller": log.controller,
        "seed": log.seed,
        "dt": log.cav.dt,
        "tau_safe": log.tau_safe,
        "safe": log.safe,
        "step_capped": log.step_capped,
        "cav_crossing": log.cav_crossing,
        "hdv_crossing": log.hdv_crossing,
        "hdv_weights": _weights_str(log.hdv_weights),
        "cav_weights": _weights_str(log.cav_weights),
        "z1": log.cav.positions.tolist(),
        "v1": log.cav.speeds.tolist(),
        "u1": list(log.cav.actions),
        "z2": log.hdv.positions.tolist(),
        "v2": log.hdv.speeds.tolist(),
        "u2": list(log.hdv.actions),
        "stage_costs": log.stage_costs.tolist(),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _table_records(table: SafetyTable) -> list[dict]:
    return [
        {
            "model": table.model,
            "rho": r.rho,
            "safe": r.safe_count,
            "total": r.total,
            "percentage": r.percentage,
        }
        for r in table.rows
    ]


def _table_json(table: SafetyTable, meta: dict | None) -> str:
    doc = {
        "meta": dict(meta or {}),
        "tau_safe": table.tau_safe,
        "rows": _table_records(table),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _table_csv(table: SafetyTable, meta: dict | None) -> str:
    header = dict(meta or {})
    header["tau_safe"] = table.tau_safe
    lines = _meta_lines(header)
    lines.append("model,rho,safe,total,percentage")
    for r in table.rows:
        lines.append(
            f"{table.model},{_fmt(r.rho)},{r.safe_count},{r.total},{_fmt(r.percentage)}"
        )
    return "\n".join(lines) + "\n"


def emit_report(obj, path: str, format: str = "csv", meta: dict | None = None) -> str:
    """Write one EpisodeLog or SafetyTable to disk and return the path.

    CSV output carries a '#' metadata block (tool version plus caller-supplied
    keys such as seed and config hash) before the column header; JSON carries
    the same under a "meta" key. Writes are atomic, so a failed write never
    leaves a partial file at the target path.
    """
    if format not in ("csv", "json"):
        raise InvalidInputError(f"unknown report format {format!r}")
    if isinstance(obj, EpisodeLog):
        text = _episode_csv(obj, meta) if format == "csv" else _episode_json(obj, meta)
    elif isinstance(obj, SafetyTable):
        text = _table_csv(obj, meta) if format == "csv" else _table_json(obj, meta)
    else:
        raise InvalidInputError(f"cannot emit a report for {type(obj).__name__}")
    _atomic_write(path, text)
    return path
