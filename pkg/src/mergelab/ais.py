"""Recurrent state encoder and horizon decoder for opponent prediction.

The encoder compresses the running observation history into a small hidden
vector (the model's information state); the decoder maps that vector plus the
ego vehicle's current action to a prediction of the opponent's future. Two
fixed architectures exist:

- "merge": 6-wide observations (z1, v1, u1_prev, z2, v2, u2_prev), hidden
  width 4, decoder emits H future (position, speed) pairs for vehicle 2.
- "ngsim": 9-wide observations, packed (ramp lateral, ramp longitudinal,
  ramp action, lead z, lead v, lead a, lag z, lag v, lag a), hidden width 24,
  decoder takes the 3 current actions and emits the ramp vehicle's next
  (lateral, longitudinal) position.

Inputs are divided by fixed per-slot scales and decoder outputs multiplied
by output scales, so the network works near unit magnitude regardless of the
physical ranges; the scales are part of the model and are persisted with it.
Scaling has no offset, which keeps "all parameters zero implies all outputs
zero" true.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (
    InvalidInputError,
    ModelDimensionError,
    ModelFormatError,
    ModelVersionError,
    ShapeError,
)
from .nn import ParamStore, bind_dense, bind_gru, init_dense, init_gru

FORMAT_VERSION = 1

MERGE_OBS_WIDTH = 6
NGSIM_OBS_WIDTH = 9
MERGE_HIDDEN = 4
NGSIM_HIDDEN = 24

# default merge-variant scales: control-zone length, speed cap, accel cap
MERGE_IN_SCALE = (70.0, 14.0, 3.0, 70.0, 14.0, 3.0)
MERGE_OUT_SCALE = (70.0, 14.0)


@dataclass(frozen=True)
class Observation:
    """One merge-variant observation: both vehicles' state plus the actions
    that produced it (zero at episode start)."""

    z1: float
    v1: float
    u1_prev: float
    z2: float
    v2: float
    u2_prev: float

    def __post_init__(self):
        for name in ("z1", "v1", "u1_prev", "z2", "v2", "u2_prev"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"non-finite observation field {name}")

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.z1, self.v1, self.u1_prev, self.z2, self.v2, self.u2_prev]
        )


@dataclass(frozen=True)
class HorizonPrediction:
    """Predicted opponent horizon: H positions and H speeds (means of a
    unit-variance normal predictive distribution)."""

    z_hat: np.ndarray
    v_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z_hat", np.asarray(self.z_hat, dtype=np.float64))
        object.__setattr__(self, "v_hat", np.asarray(self.v_hat, dtype=np.float64))
        if self.z_hat.shape != self.v_hat.shape or self.z_hat.ndim != 1:
            raise ShapeError(
                f"prediction shapes {self.z_hat.shape}, {self.v_hat.shape}"
            )
        if not (np.all(np.isfinite(self.z_hat)) and np.all(np.isfinite(self.v_hat))):
            raise InvalidInputError("non-finite prediction")

    @property
    def H(self) -> int:
        return self.z_hat.shape[0]


@dataclass(frozen=True)
class NgsimPrediction:
    """Predicted next-step (lateral, longitudinal) position of the ramp car."""

    lat: float
    lon: float


def _expected_shapes(variant: str, H: int, decoder_mode: str) -> dict:
    if variant == "merge":
        obs, hid, act = MERGE_OBS_WIDTH, MERGE_HIDDEN, 1
        dec_out = H if decoder_mode == "fd" else 2 * H
        dec_dims = [(hid + act, 2), (2, 4), (4, dec_out)]
    else:
        obs, hid, act = NGSIM_OBS_WIDTH, NGSIM_HIDDEN, 3
        dec_dims = [(hid + act, 32), (32, 64), (64, 2)]
    shapes = {
        "enc1.W": (8, obs), "enc1.b": (8,),
        "enc2.W": (16, 8), "enc2.b": (16,),
    }
    for gate in ("ir", "iz", "in"):
        shapes[f"gru.W_{gate}"] = (hid, 16)
        shapes[f"gru.b_{gate}"] = (hid,)
    for gate in ("hr", "hz", "hn"):
        shapes[f"gru.W_{gate}"] = (hid, hid)
        shapes[f"gru.b_{gate}"] = (hid,)
    for i, (n_in, n_out) in enumerate(dec_dims, start=1):
        shapes[f"dec{i}.W"] = (n_out, n_in)
        shapes[f"dec{i}.b"] = (n_out,)
    return shapes


class AisModel:
    """Encoder-decoder pair with its scales and metadata.

    ``params`` maps layer names (enc1, enc2, gru, dec1, dec2, dec3) to
    arrays. A frozen model is immutable in practice: nothing here mutates
    parameters; training replaces them wholesale.
    """

    def __init__(
        self,
        variant: str,
        H: int,
        params: ParamStore,
        in_scale: np.ndarray,
        out_scale: np.ndarray,
        decoder_mode: str = "direct",
        dt: float = 0.2,
    ):
        if variant not in ("merge", "ngsim"):
            raise InvalidInputError(f"unknown variant {variant!r}")
        if decoder_mode not in ("direct", "fd"):
            raise InvalidInputError(f"unknown decoder mode {decoder_mode!r}")
        if variant == "ngsim":
            if H != 1:
                raise InvalidInputError("ngsim variant predicts one step: H must be 1")
            if decoder_mode != "direct":
                raise InvalidInputError("ngsim variant has no fd decoder mode")
        if H < 1:
            raise InvalidInputError(f"H must be >= 1, got {H}")
        if dt <= 0:
            raise InvalidInputError(f"dt must be positive, got {dt}")
        self.variant = variant
        self.H = H
        self.decoder_mode = decoder_mode
        self.dt = dt
        self.params = params
        self.in_scale = np.asarray(in_scale, dtype=np.float64)
        self.out_scale = np.asarray(out_scale, dtype=np.float64)

        expected = _expected_shapes(variant, H, decoder_mode)
        if set(params) != set(expected):
            extra = sorted(set(params) ^ set(expected))
            raise ModelDimensionError(f"parameter set mismatch: {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ModelDimensionError(
                    f"{name} has shape {params[name].shape}, expected {shape}"
                )
        if self.in_scale.shape != (self.obs_width,):
            raise ModelDimensionError(
                f"in_scale width {self.in_scale.shape} != ({self.obs_width},)"
            )
        if self.out_scale.shape != (2,):
            raise ModelDimensionError("out_scale must have width 2")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise InvalidInputError("scales must be positive")
        for name, arr in params.items():
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"non-finite parameter {name}")

    @property
    def obs_width(self) -> int:
        return MERGE_OBS_WIDTH if self.variant == "merge" else NGSIM_OBS_WIDTH

    @property
    def hidden_width(self) -> int:
        return MERGE_HIDDEN if self.variant == "merge" else NGSIM_HIDDEN

    @property
    def action_width(self) -> int:
        return 1 if self.variant == "merge" else 3

    @property
    def action_slots(self) -> tuple[int, ...]:
        """Observation indices that hold previous actions (overwritten by
        the u_prev argument during encoding)."""
        return (2,) if self.variant == "merge" else (2, 5, 8)

    # --- forward cores: run taped when p holds Tensors, plain otherwise ---

    def encoder_core(self, p: dict, x_scaled, h):
        mid = ad.relu(bind_dense(p, "enc1")(x_scaled))
        mid = ad.relu(bind_dense(p, "enc2")(mid))
        return bind_gru(p, "gru")(mid, h)

    def decoder_core(self, p: dict, s, u_scaled):
        mid = ad.concat([s, u_scaled], axis=-1)
        mid = ad.relu(bind_dense(p, "dec1")(mid))
        mid = ad.relu(bind_dense(p, "dec2")(mid))
        return bind_dense(p, "dec3")(mid)

    # --- inference API (plain numpy) ---

    def init_state(self) -> np.ndarray:
        return np.zeros(self.hidden_width)

    def scale_obs(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=np.float64) / self.in_scale

    def scale_actions(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=np.float64) / self.in_scale[list(self.action_slots)]

    def encode(self, s_prev: np.ndarray, y, u_prev) -> np.ndarray:
        vec = y.as_vector() if isinstance(y, Observation) else np.asarray(y, dtype=np.float64)
        if vec.shape != (self.obs_width,):
            raise ShapeError(f"observation width {vec.shape} != ({self.obs_width},)")
        if not np.all(np.isfinite(vec)):
            raise InvalidInputError("non-finite observation")
        s_prev = np.asarray(s_prev, dtype=np.float64)
        if s_prev.shape != (self.hidden_width,):
            raise ShapeError(f"state width {s_prev.shape} != ({self.hidden_width},)")
        u_prev = np.atleast_1d(np.asarray(u_prev, dtype=np.float64))
        if u_prev.shape != (self.action_width,):
            raise ShapeError(f"u_prev width {u_prev.shape} != ({self.action_width},)")
        vec = vec.copy()
        vec[list(self.action_slots)] = u_prev
        return self.encoder_core(self.params, self.scale_obs(vec), s_prev)

    def decode(self, s: np.ndarray, u1):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.hidden_width,):
            raise ShapeError(f"state width {s.shape} != ({self.hidden_width},)")
        u = np.atleast_1d(np.asarray(u1, dtype=np.float64))
        if u.shape != (self.action_width,):
            raise ShapeError(f"action width {u.shape} != ({self.action_width},)")
        raw = self.decoder_core(self.params, s, self.scale_actions(u))
        if self.variant == "ngsim":
            out = raw * self.out_scale
            return NgsimPrediction(float(out[0]), float(out[1]))
        if self.decoder_mode == "fd":
            z_hat = raw * self.out_scale[0]
            diffs = np.diff(z_hat) / self.dt
            if self.H == 1:
                v_hat = np.zeros(1)
            else:
                v_hat = np.concatenate([diffs[:1], diffs])
        else:
            z_hat = raw[: self.H] * self.out_scale[0]
            v_hat = raw[self.H :] * self.out_scale[1]
        return HorizonPrediction(z_hat, v_hat)


def build_model(
    variant: str = "merge",
    H: int = 10,
    seed: int = 0,
    decoder_mode: str = "direct",
    dt: float = 0.2,
    in_scale=None,
    out_scale=None,
) -> AisModel:
    """Fresh randomly initialized model of the given variant."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    if variant == "merge":
        obs, hid = MERGE_OBS_WIDTH, MERGE_HIDDEN
        dec_out = H if decoder_mode == "fd" else 2 * H
        dec_dims = [(hid + 1, 2), (2, 4), (4, dec_out)]
        in_scale = MERGE_IN_SCALE if in_scale is None else in_scale
        out_scale = MERGE_OUT_SCALE if out_scale is None else out_scale
    elif variant == "ngsim":
        obs, hid = NGSIM_OBS_WIDTH, NGSIM_HIDDEN
        dec_dims = [(hid + 3, 32), (32, 64), (64, 2)]
        in_scale = np.ones(obs) if in_scale is None else in_scale
        out_scale = np.ones(2) if out_scale is None else out_scale
    else:
        raise InvalidInputError(f"unknown variant {variant!r}")
    init_dense(params, "enc1", obs, 8, rng)
    init_dense(params, "enc2", 8, 16, rng)
    init_gru(params, "gru", 16, hid, rng)
    for i, (n_in, n_out) in enumerate(dec_dims, start=1):
        init_dense(params, f"dec{i}", n_in, n_out, rng)
    return AisModel(variant, H, params, in_scale, out_scale, decoder_mode, dt)


def encoder_inputs(variant: str, observations) -> tuple[np.ndarray, np.ndarray]:
    """Turn recorded episode rows into per-step encoder feeds.

    A recorded row holds the state at time t with the action slots carrying
    the actions applied AT t; the encoder wants the actions that led INTO t.
    Returns (feeds, u_prevs): feeds[t] is row t with every action slot shifted
    back one step (zeros at t=0), and u_prevs[t] holds the shifted values for
    the slots the encoder overwrites anyway.
    """
    obs = np.asarray(observations, dtype=np.float64)
    width = MERGE_OBS_WIDTH if variant == "merge" else NGSIM_OBS_WIDTH
    if obs.ndim != 2 or obs.shape[1] != width:
        raise ShapeError(f"observation matrix {obs.shape} != (n, {width})")
    action_cols = [2, 5] if variant == "merge" else [2, 5, 8]
    u_prev_cols = [2] if variant == "merge" else [2, 5, 8]
    feeds = obs.copy()
    feeds[1:, action_cols] = obs[:-1, action_cols]
    feeds[0, action_cols] = 0.0
    return feeds, feeds[:, u_prev_cols].copy()


def init_state(model: AisModel) -> np.ndarray:
    return model.init_state()


def encode(model: AisModel, s_prev, y, u_prev) -> np.ndarray:
    return model.encode(s_prev, y, u_prev)


def decode(model: AisModel, s, u1):
    return model.decode(s, u1)


def save_model(model: AisModel, path: str) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "variant": model.variant,
        "H": model.H,
        "dt": model.dt,
        "decoder_mode": model.decoder_mode,
        "dims": {
            "obs": model.obs_width,
            "hidden": model.hidden_width,
            "action": model.action_width,
        },
        "in_scale": model.in_scale.tolist(),
        "out_scale": model.out_scale.tolist(),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in model.params.items()
        },
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_model(path: str) -> AisModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"not a valid model file: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must contain a JSON object")
    for key in ("format_version", "variant", "H", "in_scale", "out_scale", "params"):
        if key not in doc:
            raise ModelFormatError(f"model file missing field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelVersionError(
            f"model format {doc['format_version']} unsupported (want {FORMAT_VERSION})"
        )
    params = ParamStore()
    for name, entry in doc["params"].items():
        try:
            shape, data = entry["shape"], entry["data"]
        except (TypeError, KeyError) as exc:
            raise ModelFormatError(f"parameter {name} malformed") from exc
        arr = np.asarray(data, dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise ModelDimensionError(
                f"parameter {name}: {arr.size} values for shape {shape}"
            )
        params[name] = arr.reshape(shape)
    declared = doc.get("dims", {})
    try:
        model = AisModel(
            doc["variant"],
            int(doc["H"]),
            params,
            np.asarray(doc["in_scale"], dtype=np.float64),
            np.asarray(doc["out_scale"], dtype=np.float64),
            doc.get("decoder_mode", "direct"),
            float(doc.get("dt", 0.2)),
        )
    except ModelDimensionError:
        raise
    except InvalidInputError as exc:
        raise ModelFormatError(str(exc)) from exc
    for key, actual in (
        ("obs", model.obs_width),
        ("hidden", model.hidden_width),
        ("action", model.action_width),
    ):
        if key in declared and declared[key] != actual:
            raise ModelDimensionError(
                f"declared {key} width {declared[key]} != {actual}"
            )
    return model
