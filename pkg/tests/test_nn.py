import numpy as np
import pytest

from mergelab import autodiff as ad
from mergelab.errors import ShapeError
from mergelab.nn import (
    AdamState,
    DenseLayer,
    FdReport,
    GruCell,
    ParamStore,
    adam_step,
    bind_dense,
    bind_gru,
    finite_diff_check,
    init_dense,
    init_gru,
)


def small_gru(seed=0, n_in=3, n_h=4):
    p = ParamStore()
    init_gru(p, "g", n_in, n_h, np.random.default_rng(seed))
    return bind_gru(p, "g"), p


class TestDense:
    def test_identity(self):
        layer = DenseLayer(np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(layer(np.array([3.0, -1.0])), [3.0, -1.0])

    def test_zero_weight_returns_bias(self):
        layer = DenseLayer(np.zeros((2, 3)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(layer(np.array([9.0, 9.0, 9.0])), [1.0, 2.0])

    def test_hand_product(self):
        layer = DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
        np.testing.assert_array_equal(layer(np.array([1.0, 1.0])), [3.0, 7.0])

    def test_batched(self):
        layer = DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, -1.0]))
        out = layer(np.array([[1.0, 1.0], [0.0, 0.0]]))
        np.testing.assert_array_equal(out, [[4.0, 6.0], [1.0, -1.0]])

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            DenseLayer(np.zeros((2, 3)), np.zeros(3))
        layer = DenseLayer(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ShapeError):
            layer(np.zeros(4))

    def test_init_bounds_and_zero_bias(self):
        p = ParamStore()
        init_dense(p, "d", 16, 8, np.random.default_rng(0))
        bound = np.sqrt(1.0 / 16)
        assert np.all(np.abs(p["d.W"]) <= bound)
        assert np.all(p["d.b"] == 0.0)
        assert p["d.W"].shape == (8, 16)


class TestGru:
    def test_zero_cell_zero_state(self):
        p = ParamStore()
        init_gru(p, "g", 3, 4, np.random.default_rng(0))
        for k in p:
            p[k] = np.zeros_like(p[k])
        cell = bind_gru(p, "g")
        out = cell(np.array([1.0, -2.0, 3.0]), np.zeros(4))
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_zero_cell_halves_hidden(self):
        p = ParamStore()
        init_gru(p, "g", 3, 4, np.random.default_rng(0))
        for k in p:
            p[k] = np.zeros_like(p[k])
        cell = bind_gru(p, "g")
        h = np.array([1.0, -2.0, 0.5, 4.0])
        np.testing.assert_allclose(cell(np.ones(3), h), h / 2)

    def test_hull_property(self):
        # each output component lies in the convex hull of {h_i} and (-1, 1)
        cell, _ = small_gru(seed=3)
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.uniform(-5, 5, size=3)
            h = rng.uniform(-2, 2, size=4)
            out = cell(x, h)
            assert np.all(np.abs(out) <= np.maximum(np.abs(h), 1.0) + 1e-12)

    def test_batched_matches_loop(self):
        cell, _ = small_gru(seed=5)
        rng = np.random.default_rng(11)
        X = rng.standard_normal((6, 3))
        H = rng.standard_normal((6, 4))
        batched = cell(X, H)
        rows = np.stack([cell(X[i], H[i]) for i in range(6)])
        np.testing.assert_allclose(batched, rows, atol=1e-14)

    def test_width_validation(self):
        cell, _ = small_gru()
        with pytest.raises(ShapeError):
            cell(np.zeros(5), np.zeros(4))
        with pytest.raises(ShapeError):
            cell(np.zeros(3), np.zeros(2))
        with pytest.raises(ShapeError):
            GruCell(W_ir=np.zeros((4, 3)))

    def test_gradients_match_finite_differences(self):
        cell, params = small_gru(seed=9)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(3)
        h = rng.standard_normal(4)
        w = rng.standard_normal(4)

        def loss_fn(p):
            return ad.sum_all(ad.mul(bind_gru(p, "g")(x, h), w))

        report = finite_diff_check(params, loss_fn, tolerance=1e-6)
        assert report.passed, report


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = ParamStore()
        p["w"] = np.array([1.0, -1.0, 2.0])
        g = np.array([10.0, -0.5, 3.0])
        state = AdamState(lr=1e-3)
        adam_step(p, {"w": g}, state)
        np.testing.assert_allclose(p["w"], [1.0, -1.0, 2.0] - 1e-3 * np.sign(g), atol=1e-6)
        assert state.t == 1

    def test_zero_gradient_no_move(self):
        p = ParamStore()
        p["w"] = np.array([1.0, 2.0])
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])

    def test_missing_gradient_treated_as_zero(self):
        p = ParamStore()
        p["w"] = np.array([1.0])
        adam_step(p, {}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0])

    def test_identical_runs_identical_trajectories(self):
        def run():
            p = ParamStore()
            p["w"] = np.array([0.3, -0.7])
            state = AdamState(lr=0.01)
            rng = np.random.default_rng(4)
            for _ in range(25):
                adam_step(p, {"w": rng.standard_normal(2)}, state)
            return p["w"]

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch_rejected(self):
        p = ParamStore()
        p["w"] = np.zeros(3)
        with pytest.raises(ShapeError):
            adam_step(p, {"w": np.zeros(4)}, AdamState())

    def test_converges_on_quadratic(self):
        p = ParamStore()
        p["w"] = np.array([5.0, -3.0])
        state = AdamState(lr=0.05)
        for _ in range(2000):
            adam_step(p, {"w": 2.0 * p["w"]}, state)
        assert np.all(np.abs(p["w"]) < 1e-3)


class TestFiniteDiffCheck:
    def _linear_setup(self):
        params = ParamStore()
        rng = np.random.default_rng(0)
        init_dense(params, "d", 4, 3, rng)
        x = rng.standard_normal(4)
        w = rng.standard_normal(3)

        def loss_fn(p):
            return ad.sum_all(ad.mul(bind_dense(p, "d")(x), w))

        return params, loss_fn

    def test_linear_model_near_exact(self):
        params, loss_fn = self._linear_setup()
        report = finite_diff_check(params, loss_fn, tolerance=1e-8)
        assert isinstance(report, FdReport)
        assert report.passed
        assert report.max_rel_error < 1e-8
        assert report.n_checked == params.n_params

    def test_corrupted_gradient_fails(self):
        params, loss_fn = self._linear_setup()
        report = finite_diff_check(params, loss_fn, tolerance=1e-4, corrupt="d.W")
        assert not report.passed
        assert report.worst_param == "d.W"

    def test_subsampling_large_model(self):
        params = ParamStore()
        rng = np.random.default_rng(1)
        init_dense(params, "big", 40, 30, rng)
        x = rng.standard_normal(40)

        def loss_fn(p):
            return ad.sum_all(bind_dense(p, "big")(x))

        report = finite_diff_check(params, loss_fn, max_checks=200)
        assert report.n_checked == 200
        assert report.passed

    def test_stacked_dense_gru_composition(self):
        params = ParamStore()
        rng = np.random.default_rng(6)
        init_dense(params, "l1", 5, 8, rng)
        init_dense(params, "l2", 8, 6, rng)
        init_gru(params, "g", 6, 4, rng)
        x = rng.standard_normal(5)
        h = rng.standard_normal(4)
        w = rng.standard_normal(4)

        def loss_fn(p):
            mid = ad.relu(bind_dense(p, "l1")(x))
            mid = ad.relu(bind_dense(p, "l2")(mid))
            out = bind_gru(p, "g")(mid, h)
            return ad.sum_all(ad.mul(out, w))

        report = finite_diff_check(params, loss_fn, tolerance=1e-4)
        assert report.passed, report


class TestParamStore:
    def test_coerces_to_float64(self):
        p = ParamStore()
        p["x"] = [1, 2, 3]
        assert p["x"].dtype == np.float64

    def test_counts(self):
        p = ParamStore()
        p["a"] = np.zeros((2, 3))
        p["b"] = np.zeros(5)
        assert p.n_params == 11

    def test_copy_is_deep(self):
        p = ParamStore()
        p["a"] = np.zeros(2)
        q = p.copy_arrays()
        q["a"][0] = 9.0
        assert p["a"][0] == 0.0
