import numpy as np
import pytest

from mergelab.ais import (
    AisModel,
    HorizonPrediction,
    NgsimPrediction,
    Observation,
    build_model,
    decode,
    encode,
    init_state,
    load_model,
    save_model,
)
from mergelab.errors import (
    InvalidInputError,
    ModelDimensionError,
    ModelFormatError,
    ModelVersionError,
    ShapeError,
)


@pytest.fixture(scope="module")
def merge_model():
    return build_model("merge", H=10, seed=42)


@pytest.fixture(scope="module")
def ngsim_model():
    return build_model("ngsim", H=1, seed=42)


def zero_model(variant="merge", H=10, **kwargs):
    m = build_model(variant, H=H, seed=0, **kwargs)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    return m


OBS = Observation(z1=10.0, v1=11.0, u1_prev=0.5, z2=8.0, v2=10.0, u2_prev=-0.25)


class TestInitState:
    def test_merge_four_zeros(self, merge_model):
        s = init_state(merge_model)
        assert s.shape == (4,)
        assert np.all(s == 0.0)

    def test_ngsim_24_zeros(self, ngsim_model):
        s = init_state(ngsim_model)
        assert s.shape == (24,)
        assert np.all(s == 0.0)

    def test_repeatable(self, merge_model):
        np.testing.assert_array_equal(init_state(merge_model), init_state(merge_model))


class TestEncode:
    def test_deterministic(self, merge_model):
        s0 = init_state(merge_model)
        a = encode(merge_model, s0, OBS, 0.5)
        b = encode(merge_model, s0, OBS, 0.5)
        np.testing.assert_array_equal(a, b)

    def test_zero_model_halves_state(self):
        m = zero_model()
        s = np.array([1.0, -2.0, 0.5, 4.0])
        np.testing.assert_allclose(m.encode(s, OBS, 0.0), s / 2)

    def test_output_bounded_and_finite(self, merge_model):
        rng = np.random.default_rng(0)
        s = init_state(merge_model)
        for _ in range(100):
            y = Observation(*rng.uniform(-5, 70, size=6))
            s_next = encode(merge_model, s, y, float(rng.uniform(-3, 2)))
            assert np.all(np.isfinite(s_next))
            assert np.all(np.abs(s_next) <= np.maximum(np.abs(s), 1.0) + 1e-12)
            s = s_next

    def test_u_prev_argument_wins_over_observation_slot(self, merge_model):
        # the action slot inside the observation is replaced by u_prev
        s0 = init_state(merge_model)
        y_stale = Observation(10.0, 11.0, 999.0, 8.0, 10.0, -0.25)
        y_fresh = Observation(10.0, 11.0, 0.5, 8.0, 10.0, -0.25)
        a = encode(merge_model, s0, y_stale, 0.5)
        b = encode(merge_model, s0, y_fresh, 0.5)
        np.testing.assert_array_equal(a, b)

    def test_prefix_replay_matches_full_replay(self, merge_model):
        rng = np.random.default_rng(3)
        obs = [Observation(*rng.uniform(0, 20, size=6)) for _ in range(12)]
        us = rng.uniform(-3, 2, size=12)
        s = init_state(merge_model)
        mid = None
        for t in range(12):
            s = encode(merge_model, s, obs[t], us[t])
            if t == 5:
                mid = s.copy()
        s2 = init_state(merge_model)
        for t in range(6):
            s2 = encode(merge_model, s2, obs[t], us[t])
        np.testing.assert_array_equal(mid, s2)

    def test_width_mismatches(self, merge_model, ngsim_model):
        s0 = init_state(merge_model)
        with pytest.raises(ShapeError):
            encode(merge_model, s0, np.zeros(9), 0.0)
        with pytest.raises(ShapeError):
            encode(merge_model, np.zeros(5), OBS, 0.0)
        with pytest.raises(ShapeError):
            encode(merge_model, s0, OBS, np.zeros(3))
        with pytest.raises(ShapeError):
            encode(ngsim_model, init_state(ngsim_model), np.zeros(9), 0.0)

    def test_nonfinite_rejected(self, merge_model):
        with pytest.raises(InvalidInputError):
            encode(merge_model, init_state(merge_model), np.full(6, np.nan), 0.0)
        with pytest.raises(InvalidInputError):
            Observation(np.inf, 0, 0, 0, 0, 0)

    def test_ngsim_overwrites_three_action_slots(self, ngsim_model):
        y = np.arange(9.0)
        s0 = init_state(ngsim_model)
        a = encode(ngsim_model, s0, y, np.array([20.0, 21.0, 22.0]))
        y2 = y.copy()
        y2[[2, 5, 8]] = [20.0, 21.0, 22.0]
        b = encode(ngsim_model, s0, y2, np.array([20.0, 21.0, 22.0]))
        np.testing.assert_array_equal(a, b)


class TestDecode:
    def test_deterministic(self, merge_model):
        s = encode(merge_model, init_state(merge_model), OBS, 0.5)
        p1 = decode(merge_model, s, 1.0)
        p2 = decode(merge_model, s, 1.0)
        np.testing.assert_array_equal(p1.z_hat, p2.z_hat)
        np.testing.assert_array_equal(p1.v_hat, p2.v_hat)

    def test_zero_model_zero_prediction(self):
        m = zero_model()
        p = m.decode(np.ones(4), 2.0)
        np.testing.assert_array_equal(p.z_hat, np.zeros(10))
        np.testing.assert_array_equal(p.v_hat, np.zeros(10))

    def test_horizon_length_is_H(self, merge_model):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = decode(merge_model, rng.standard_normal(4), float(rng.uniform(-3, 2)))
            assert p.H == 10
            assert p.z_hat.shape == (10,)
            assert p.v_hat.shape == (10,)
            assert np.all(np.isfinite(p.z_hat))

    def test_various_H(self):
        for H in (1, 3, 25):
            m = build_model("merge", H=H, seed=1)
            p = m.decode(np.zeros(4), 0.0)
            assert p.H == H

    def test_width_mismatch(self, merge_model):
        with pytest.raises(ShapeError):
            decode(merge_model, np.zeros(3), 0.0)
        with pytest.raises(ShapeError):
            decode(merge_model, np.zeros(4), np.zeros(2))

    def test_fd_mode_speeds_are_position_differences(self):
        m = build_model("merge", H=10, seed=7, decoder_mode="fd", dt=0.2)
        p = m.decode(np.array([0.3, -0.2, 0.8, 0.1]), 1.0)
        assert p.z_hat.shape == (10,)
        diffs = np.diff(p.z_hat) / 0.2
        np.testing.assert_allclose(p.v_hat[1:], diffs)
        assert p.v_hat[0] == p.v_hat[1]

    def test_ngsim_decode_pair(self, ngsim_model):
        s = encode(ngsim_model, init_state(ngsim_model), np.ones(9), np.zeros(3))
        p = decode(ngsim_model, s, np.array([0.1, 0.2, 0.3]))
        assert isinstance(p, NgsimPrediction)
        assert np.isfinite(p.lat) and np.isfinite(p.lon)


class TestVariants:
    def test_merge_dims(self, merge_model):
        p = merge_model.params
        assert p["enc1.W"].shape == (8, 6)
        assert p["enc2.W"].shape == (16, 8)
        assert p["gru.W_ir"].shape == (4, 16)
        assert p["gru.W_hn"].shape == (4, 4)
        assert p["dec1.W"].shape == (2, 5)
        assert p["dec2.W"].shape == (4, 2)
        assert p["dec3.W"].shape == (20, 4)

    def test_ngsim_dims(self, ngsim_model):
        p = ngsim_model.params
        assert p["enc1.W"].shape == (8, 9)
        assert p["gru.W_ir"].shape == (24, 16)
        assert p["gru.W_hn"].shape == (24, 24)
        assert p["dec1.W"].shape == (32, 27)
        assert p["dec2.W"].shape == (64, 32)
        assert p["dec3.W"].shape == (2, 64)

    def test_ngsim_requires_H1_and_direct(self):
        with pytest.raises(InvalidInputError):
            build_model("ngsim", H=10)
        with pytest.raises(InvalidInputError):
            build_model("ngsim", H=1, decoder_mode="fd")

    def test_unknown_variant(self):
        with pytest.raises(InvalidInputError):
            build_model("highway")

    def test_wrong_shape_rejected(self, merge_model):
        params = merge_model.params.copy_arrays()
        params["dec3.W"] = np.zeros((7, 4))
        with pytest.raises(ModelDimensionError):
            AisModel("merge", 10, params, merge_model.in_scale, merge_model.out_scale)


class TestSerialization:
    def test_round_trip_bitwise(self, merge_model, tmp_path):
        path = str(tmp_path / "m.json")
        save_model(merge_model, path)
        loaded = load_model(path)
        assert loaded.variant == "merge"
        assert loaded.H == 10
        assert loaded.decoder_mode == "direct"
        for k, v in merge_model.params.items():
            np.testing.assert_array_equal(loaded.params[k], v)
        np.testing.assert_array_equal(loaded.in_scale, merge_model.in_scale)
        s = init_state(merge_model)
        a = encode(merge_model, s, OBS, 0.3)
        b = encode(loaded, s, OBS, 0.3)
        np.testing.assert_array_equal(a, b)
        pa = decode(merge_model, a, 1.0)
        pb = decode(loaded, b, 1.0)
        np.testing.assert_array_equal(pa.z_hat, pb.z_hat)

    def test_round_trip_ngsim(self, ngsim_model, tmp_path):
        path = str(tmp_path / "n.json")
        save_model(ngsim_model, path)
        loaded = load_model(path)
        assert loaded.variant == "ngsim"
        for k, v in ngsim_model.params.items():
            np.testing.assert_array_equal(loaded.params[k], v)

    def test_tampered_dimension_field(self, merge_model, tmp_path):
        import json

        path = str(tmp_path / "m.json")
        save_model(merge_model, path)
        with open(path) as fh:
            doc = json.load(fh)
        doc["dims"]["hidden"] = 8
        with open(path, "w") as fh:
            json.dump(doc, fh)
        with pytest.raises(ModelDimensionError):
            load_model(path)

    def test_tampered_parameter_shape(self, merge_model, tmp_path):
        import json

        path = str(tmp_path / "m.json")
        save_model(merge_model, path)
        with open(path) as fh:
            doc = json.load(fh)
        doc["params"]["enc1.W"]["shape"] = [4, 6]
        with open(path, "w") as fh:
            json.dump(doc, fh)
        with pytest.raises(ModelDimensionError):
            load_model(path)

    def test_truncated_file(self, merge_model, tmp_path):
        path = str(tmp_path / "m.json")
        save_model(merge_model, path)
        with open(path) as fh:
            text = fh.read()
        with open(path, "w") as fh:
            fh.write(text[: len(text) // 2])
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_version_mismatch(self, merge_model, tmp_path):
        import json

        path = str(tmp_path / "m.json")
        save_model(merge_model, path)
        with open(path) as fh:
            doc = json.load(fh)
        doc["format_version"] = 99
        with open(path, "w") as fh:
            json.dump(doc, fh)
        with pytest.raises(ModelVersionError):
            load_model(path)

    def test_missing_field(self, tmp_path):
        import json

        path = str(tmp_path / "m.json")
        with open(path, "w") as fh:
            json.dump({"format_version": 1, "variant": "merge"}, fh)
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_error_types_are_distinct_load_errors(self):
        from mergelab.errors import ModelLoadError

        assert issubclass(ModelVersionError, ModelLoadError)
        assert issubclass(ModelDimensionError, ModelLoadError)
        assert issubclass(ModelFormatError, ModelLoadError)
        assert not issubclass(ModelVersionError, ModelFormatError)


class TestPredictionTypes:
    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ShapeError):
            HorizonPrediction(np.zeros(5), np.zeros(4))

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            HorizonPrediction(np.full(3, np.nan), np.zeros(3))
