"""A tour of the merging scenario: geometry, exact kinematics, driver styles.

Two vehicles approach a lane merge on separate ramps. Positions are measured
along each ramp toward a shared conflict point z_c; whoever is past z_c has
merged. The automated car (CAV) rides ramp 1, the human-driven car (HDV)
ramp 2. This script walks through the pieces that everything else builds on:
the double-integrator update, the scenario constants, and the grid-search
human driver with its two shipped personalities.

Run:  python3 demos/01_scenario_anatomy.py
"""

import numpy as np

from mergelab.driver import AGGRESSIVE, CONSERVATIVE, hdv_action, step_hdv
from mergelab.dynamics import ScenarioConfig, VehicleState, step_cav

cfg = ScenarioConfig()

print("=== Scenario constants ===")
print(f"control zone length   {cfg.L_c:6.1f} m (conflict point at z = {cfg.z_c} m)")
print(f"sampling period       {cfg.dt:6.1f} s")
print(f"speed bounds          [{cfg.v_min}, {cfg.v_max}] m/s")
print(f"acceleration bounds   [{cfg.u_min}, {cfg.u_max}] m/s^2")
print(f"planning horizon      {cfg.H} steps = {cfg.H * cfg.dt:.1f} s")
print()

# --- exact discrete kinematics -------------------------------------------
# One step is the closed-form double integrator: no Euler error to tune away.
x = VehicleState(z=10.0, v=8.0)
u = 1.5
nxt = step_cav(x, u, cfg.dt)
by_hand_z = x.z + cfg.dt * x.v + 0.5 * cfg.dt**2 * u
by_hand_v = x.v + cfg.dt * u
print("=== One kinematic step ===")
print(f"from (z={x.z}, v={x.v}) with u={u}:")
print(f"  step_cav   -> z={nxt.z}, v={nxt.v}")
print(f"  closed form-> z={by_hand_z}, v={by_hand_v}")
print(f"  difference: {abs(nxt.z - by_hand_z):.1e} m, {abs(nxt.v - by_hand_v):.1e} m/s")
print()

# --- the human driver ------------------------------------------------------
# The HDV picks a constant acceleration by brute force: roll every candidate
# forward over its personal lookahead and price acceleration effort, speed
# tracking, and proximity to a simultaneous arrival at the conflict point.
print("=== Driver personalities ===")
for name, w in [("aggressive", AGGRESSIVE), ("conservative", CONSERVATIVE)]:
    print(f"{name}: {w}")
print()

situations = [
    ("far out, rolling slow", VehicleState(5.0, 6.0), VehicleState(5.0, 10.0)),
    ("mid-zone dead heat", VehicleState(40.0, 12.0), VehicleState(40.0, 10.0)),
    ("already at 16.5 m/s", VehicleState(40.0, 16.5), VehicleState(40.0, 10.0)),
    ("merge cleared, alone", VehicleState(75.0, 4.0), VehicleState(-40.0, 10.0)),
]
print(f"{'situation (HDV vs CAV)':<24}{'aggressive u':>14}{'conservative u':>16}")
for label, hdv, cav in situations:
    ua = hdv_action(hdv, cav, AGGRESSIVE, cfg)
    uc = hdv_action(hdv, cav, CONSERVATIVE, cfg)
    print(f"{label:<24}{ua:>14.2f}{uc:>16.2f}")
print()
print("The aggressive profile floors it until it nears its (high) desired")
print("speed. The conservative one trims toward 5.5 m/s in open road, brakes")
print("hard whenever a simultaneous arrival looms, and only speeds back up")
print("once the merge is behind it.")
print()

# --- a closed-loop flavor ----------------------------------------------
# March both personalities against the same scripted CAV (steady 10 m/s from
# z = 40, so it reaches the conflict point at exactly t = 3.0 s) and watch
# when each crosses relative to it.
print("=== Crossing the merge against a steady 10 m/s CAV ===")
t_cav = (cfg.z_c - 40.0) / 10.0
for name, w in [("aggressive", AGGRESSIVE), ("conservative", CONSERVATIVE)]:
    hdv = VehicleState(40.0, 10.0)
    cav = VehicleState(40.0, 10.0)
    t, t_cross = 0.0, None
    while t < 20.0 and t_cross is None:
        hdv, _ = step_hdv(hdv, cav, w, cfg)
        cav = step_cav(cav, 0.0, cfg.dt)
        t += cfg.dt
        if hdv.z >= cfg.z_c:
            t_cross = t
    order = "before" if t_cross < t_cav else "after"
    print(f"{name:<14} crossed at t={t_cross:5.2f} s, "
          f"{abs(t_cross - t_cav):.1f} s {order} the CAV (t={t_cav:.1f} s)")
print()
print("Same road, same start, two different merges. The predictor trained in")
print("demo 02 learns to anticipate this spread from trajectories alone.")
