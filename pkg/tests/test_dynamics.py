import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mergelab.dynamics import (
    ScenarioConfig,
    Trajectory,
    VehicleState,
    check_bounds,
    conflict_crossing_time,
    crossing_time_from_positions,
    step_cav,
)
from mergelab.errors import InvalidInputError

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
speeds = st.floats(min_value=0.0, max_value=1e3, allow_nan=False)
accels = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


class TestStepCav:
    def test_accelerating_step(self):
        # z' = 10 + 0.2*10 + 0.5*0.04*2 = 12.04, v' = 10 + 0.4
        x = step_cav(VehicleState(10.0, 10.0), 2.0, 0.2)
        assert x.z == pytest.approx(12.04, abs=1e-12)
        assert x.v == pytest.approx(10.4, abs=1e-12)

    def test_coasting_step(self):
        x = step_cav(VehicleState(0.0, 10.0), 0.0, 0.2)
        assert x.z == pytest.approx(2.0, abs=1e-15)
        assert x.v == 10.0

    def test_rest_stays_at_rest(self):
        x = step_cav(VehicleState(5.0, 0.0), 0.0, 0.2)
        assert x.z == 5.0
        assert x.v == 0.0

    def test_no_clamping_beyond_limits(self):
        # the stepper is pure kinematics: speeds above any scenario v_max pass through
        x = step_cav(VehicleState(0.0, 13.9), 2.0, 0.2)
        assert x.v == pytest.approx(14.3, abs=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            step_cav(VehicleState(0.0, 1.0), float("nan"), 0.2)
        with pytest.raises(InvalidInputError):
            step_cav(VehicleState(0.0, 1.0), 1.0, 0.0)
        with pytest.raises(InvalidInputError):
            VehicleState(float("inf"), 1.0)

    @given(z=finite, v=speeds, u=accels, dt=st.floats(min_value=1e-3, max_value=1.0))
    def test_matches_closed_form(self, z, v, u, dt):
        if v + dt * u < 0:
            u = -v / dt  # keep the post-state speed legal for VehicleState
        x = step_cav(VehicleState(z, v), u, dt)
        assert x.z == z + dt * v + 0.5 * dt * dt * u
        assert x.v == v + dt * u

    @given(z=finite, v=st.floats(min_value=0.1, max_value=100.0), dt=st.floats(min_value=1e-3, max_value=1.0))
    def test_position_grows_at_positive_speed(self, z, v, dt):
        x = step_cav(VehicleState(z, v), 0.0, dt)
        assert x.z > z


class TestScenarioConfig:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert cfg.dt == 0.2
        assert cfg.z_c == 70.0
        assert (cfg.v_min, cfg.v_max) == (0.0, 14.0)
        assert (cfg.u_min, cfg.u_max) == (-3.0, 2.0)
        assert (cfg.w1, cfg.w2, cfg.w3) == (1.0, 10.0, 1000.0)
        assert cfg.rho == 1.0
        assert cfg.H == 10

    def test_replace(self):
        cfg = ScenarioConfig().replace(rho=0.6)
        assert cfg.rho == 0.6
        assert cfg.dt == 0.2

    @pytest.mark.parametrize(
        "bad",
        [
            dict(v_min=-1.0),
            dict(v_max=0.0),
            dict(u_min=0.5),
            dict(u_max=-0.5),
            dict(w3=0.0),
            dict(rho=0.0),
            dict(H=0),
            dict(dt=-0.2),
            dict(z_c=90.0),
        ],
    )
    def test_rejects_bad_values(self, bad):
        with pytest.raises(InvalidInputError):
            ScenarioConfig(**bad)


class TestCheckBounds:
    def test_interior_point_feasible(self):
        verdict = check_bounds(VehicleState(0.0, 10.0), 0.0, ScenarioConfig())
        assert verdict.feasible
        assert verdict.violations == ()
        assert bool(verdict)

    def test_boundaries_are_inclusive(self):
        cfg = ScenarioConfig()
        assert check_bounds(VehicleState(0.0, 14.0), 2.0, cfg).feasible
        assert check_bounds(VehicleState(0.0, 0.0), -3.0, cfg).feasible

    def test_reports_each_violation(self):
        cfg = ScenarioConfig()
        verdict = check_bounds(VehicleState(0.0, 15.0), -4.0, cfg)
        assert not verdict.feasible
        assert set(verdict.violations) == {"v_max", "u_min"}
        verdict = check_bounds(VehicleState(0.0, 10.0), 3.0, cfg)
        assert verdict.violations == ("u_max",)


class TestCrossingTime:
    def _traj(self, zs, dt=0.2):
        states = [VehicleState(z, 1.0) for z in zs]
        return Trajectory(states, [0.0] * (len(states) - 1), dt)

    def test_interpolated_crossing(self):
        # crosses 70 between samples 1 (69.5) and 2 (71.0): 0.2 + 0.2*(0.5/1.5)
        t = conflict_crossing_time(self._traj([68.0, 69.5, 71.0]), 70.0)
        assert t == pytest.approx(0.26666666666, abs=1e-9)

    def test_starts_past_conflict(self):
        assert conflict_crossing_time(self._traj([70.0, 71.0]), 70.0) == 0.0
        assert conflict_crossing_time(self._traj([75.0, 76.0]), 70.0) == 0.0

    def test_never_crosses(self):
        assert conflict_crossing_time(self._traj([0.0, 1.0, 2.0]), 70.0) is None

    def test_exact_sample_hit(self):
        t = conflict_crossing_time(self._traj([68.0, 70.0, 72.0]), 70.0)
        assert t == pytest.approx(0.2, abs=1e-12)

    def test_array_variant_matches(self):
        zs = [60.0, 64.0, 69.0, 73.0]
        t1 = conflict_crossing_time(self._traj(zs), 70.0)
        t2 = crossing_time_from_positions(np.array(zs), 0.2, 70.0)
        assert t1 == pytest.approx(t2, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            crossing_time_from_positions(np.array([]), 0.2, 70.0)

    @given(shift=st.floats(min_value=0.01, max_value=5.0))
    def test_upward_shift_crosses_no_later(self, shift):
        zs = np.array([60.0, 63.0, 66.0, 69.0, 72.0, 75.0])
        t0 = crossing_time_from_positions(zs, 0.2, 70.0)
        t1 = crossing_time_from_positions(zs + shift, 0.2, 70.0)
        assert t1 <= t0

    @given(
        v=st.floats(min_value=1.0, max_value=14.0),
        z0=st.floats(min_value=0.0, max_value=60.0),
    )
    def test_constant_speed_crossing_is_analytic(self, v, z0):
        dt = 0.2
        states = [VehicleState(z0 + v * dt * k, v) for k in range(400)]
        traj = Trajectory(states, [0.0] * 399, dt)
        t = conflict_crossing_time(traj, 70.0)
        assert t == pytest.approx((70.0 - z0) / v, rel=1e-9)


class TestTrajectory:
    def test_length_invariant(self):
        with pytest.raises(InvalidInputError):
            Trajectory([VehicleState(0.0, 1.0)], [0.0], 0.2)

    def test_accessors(self):
        traj = Trajectory(
            [VehicleState(0.0, 1.0), VehicleState(0.2, 1.0)], [0.0], 0.2
        )
        assert len(traj) == 2
        np.testing.assert_allclose(traj.positions, [0.0, 0.2])
        np.testing.assert_allclose(traj.speeds, [1.0, 1.0])
