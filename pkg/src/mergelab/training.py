"""Dataset generation and ingestion, the distribution-matching surrogate
loss, the training loop, and prediction-accuracy reporting.

Episodes store one row per time step: the state at t together with the
actions applied AT t (so the final row carries zeros). That matches the
trajectory CSV schema exactly, and `mergelab.ais.encoder_inputs` turns it
into the shifted feeds the encoder wants.

Training unrolls the encoder over whole episodes (padded and masked so a
batch can mix lengths), decodes a horizon wherever the episode still has H
future rows, and averages the surrogate loss over those decode points in the
model's scaled output space. Adam updates follow each minibatch; the model
snapshot with the best validation loss is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .ais import (
    AisModel,
    HorizonPrediction,
    NgsimPrediction,
    build_model,
    encoder_inputs,
)
from .autodiff import Tensor, backward, value_of
from .driver import IrlWeights, StyleRange, sample_irl_weights
from .dynamics import ScenarioConfig
from .errors import InvalidInputError, ParseError, SchemaError, ShapeError, TimingError
from .evaluation import _atomic_write, _meta_lines, run_episode, sample_initial_states
from .nn import AdamState, adam_step

MERGE_COLUMNS = ("episode_id", "t", "z1", "v1", "u1", "z2", "v2", "u2")
NGSIM_COLUMNS = (
    "episode_id",
    "t",
    "z_ramp_lat",
    "z_ramp_lon",
    "v_ramp",
    "a_ramp",
    "z_lead",
    "v_lead",
    "a_lead",
    "z_lag",
    "v_lag",
    "a_lag",
)

GENERATOR_MODES = ("safe", "exploratory")


@dataclass(frozen=True)
class Episode:
    """One recorded encounter.

    ``observations`` is (n, 6) for the merge variant (z1, v1, u1, z2, v2, u2)
    or (n, 9) for the ngsim variant (ramp lat, ramp lon, ramp action, then
    z/v/a for the lead and lag highway cars). ``v_ramp`` keeps the ramp speed
    column alive for ngsim exports; the predictor never sees it.
    """

    observations: np.ndarray
    dt: float
    variant: str = "merge"
    episode_id: str = ""
    v_ramp: np.ndarray | None = None
    seed: int | None = None
    mode: str = ""
    hdv_weights: IrlWeights | None = None
    cav_weights: IrlWeights | None = None
    safe: bool | None = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        object.__setattr__(self, "observations", obs)
        width = 6 if self.variant == "merge" else 9
        if self.variant not in ("merge", "ngsim"):
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if obs.ndim != 2 or obs.shape[1] != width:
            raise ShapeError(f"observations {obs.shape} != (n, {width})")
        if obs.shape[0] < 1:
            raise InvalidInputError("episode needs at least one row")
        if not np.all(np.isfinite(obs)):
            raise InvalidInputError("non-finite observation")
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if self.v_ramp is not None:
            v = np.asarray(self.v_ramp, dtype=np.float64)
            object.__setattr__(self, "v_ramp", v)
            if v.shape != (obs.shape[0],):
                raise ShapeError(f"v_ramp {v.shape} != ({obs.shape[0]},)")

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def cav_actions(self) -> np.ndarray:
        return self.observations[:-1, 2]

    @property
    def hdv_actions(self) -> np.ndarray:
        return self.observations[:-1, 5]


@dataclass(frozen=True)
class Dataset:
    episodes: tuple[Episode, ...]
    variant: str = "merge"
    split: str = ""

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        for ep in self.episodes:
            if ep.variant != self.variant:
                raise InvalidInputError(
                    f"{ep.variant!r} episode in a {self.variant!r} dataset"
                )

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def dt(self) -> float:
        if not self.episodes:
            raise InvalidInputError("empty dataset has no time step")
        return self.episodes[0].dt


def unsafe_fraction(dataset: Dataset) -> float | None:
    """Share of episodes whose recorded verdict is unsafe; None if no
    episode carries a verdict (e.g. data loaded from an external file)."""
    flags = [ep.safe for ep in dataset.episodes if ep.safe is not None]
    if not flags:
        return None
    return sum(1 for s in flags if not s) / len(flags)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    seed: int = 0
    H: int = 10
    bptt_span: int | None = None
    val_fraction: float = 0.2
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    decoder_mode: str = "direct"

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidInputError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}"
            )
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidInputError(
                f"lr_decay must be in (0, 1], got {self.lr_decay}"
            )
        if self.H < 1:
            raise InvalidInputError(f"H must be >= 1, got {self.H}")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.bptt_span is not None and self.bptt_span < 1:
            raise InvalidInputError("bptt_span must be >= 1 when set")
        if self.decoder_mode not in ("direct", "fd"):
            raise InvalidInputError(f"unknown decoder_mode {self.decoder_mode!r}")

    def replace(self, **kwargs) -> "TrainConfig":
        from dataclasses import replace as dc_replace

        return dc_replace(self, **kwargs)


# --- dataset generation ---


def episode_from_log(log, episode_id: str = "", seed: int | None = None,
                     mode: str = "") -> Episode:
    """Pack an EpisodeLog into the row convention used by files and training."""
    n = len(log.cav)
    obs = np.zeros((n, 6))
    obs[:, 0] = log.cav.positions
    obs[:, 1] = log.cav.speeds
    obs[:-1, 2] = log.cav.actions
    obs[:, 3] = log.hdv.positions
    obs[:, 4] = log.hdv.speeds
    obs[:-1, 5] = log.hdv.actions
    return Episode(
        observations=obs,
        dt=log.cav.dt,
        variant="merge",
        episode_id=episode_id,
        seed=seed,
        mode=mode,
        hdv_weights=log.hdv_weights,
        cav_weights=log.cav_weights,
        safe=log.safe,
    )


def generate_dataset(
    mode: str,
    n_episodes: int,
    seed: int,
    cfg: ScenarioConfig,
    style_range: StyleRange | None = None,
) -> Dataset:
    """Simulate n_episodes encounters and record them.

    safe mode: the CAV yields via the gap-acceptance rule while the human
    driver follows freshly sampled objective weights. exploratory mode: both
    vehicles follow independently sampled weights, so the data also covers
    pushy, non-yielding behavior. Per-episode draws are (hdv weights,
    [cav weights,] initial states), all derived from the master seed.
    """
    if mode not in GENERATOR_MODES:
        raise InvalidInputError(f"unknown generator mode {mode!r}")
    if n_episodes < 1:
        raise InvalidInputError(f"need n_episodes >= 1, got {n_episodes}")
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(n_episodes)]
    width = len(str(n_episodes - 1))
    episodes = []
    for i, ep_seed in enumerate(seeds):
        rng = np.random.default_rng(ep_seed)
        hdv_w = sample_irl_weights(rng, style_range)
        cav_w = sample_irl_weights(rng, style_range) if mode == "exploratory" else None
        init = sample_initial_states(rng, cfg)
        controller = "gap-acceptance" if mode == "safe" else "irl"
        log = run_episode(
            controller, hdv_w, init, cfg, seed=ep_seed, cav_weights=cav_w
        )
        episodes.append(
            episode_from_log(log, episode_id=f"ep{i:0{width}d}", seed=ep_seed, mode=mode)
        )
    return Dataset(tuple(episodes), "merge")


# --- trajectory CSV ingestion and export ---


def _detect_schema(header: list[str]) -> str:
    cols = set(header)
    if set(MERGE_COLUMNS) <= cols:
        return "merge"
    if set(NGSIM_COLUMNS) <= cols:
        return "ngsim"
    merge_missing = [c for c in MERGE_COLUMNS if c not in cols]
    ngsim_missing = [c for c in NGSIM_COLUMNS if c not in cols]
    missing = merge_missing if len(merge_missing) <= len(ngsim_missing) else ngsim_missing
    raise SchemaError(f"missing column(s): {', '.join(missing)}")


def _parse_value(raw: str, line_no: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(
            f"line {line_no}, column {column}: cannot parse {raw!r}"
        ) from None
    if not np.isfinite(value):
        raise ParseError(f"line {line_no}, column {column}: non-finite value {raw}")
    return value


def load_trajectory_csv(path: str) -> Dataset:
    """Read a trajectory file into a Dataset, one Episode per episode_id.

    Rows may arrive in any order; they are sorted by t within each episode.
    The file must use a single uniform time step, checked to 1e-6 s. Lines
    starting with '#' are metadata and are skipped.
    """
    with open(path, encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    content = [
        (no, line)
        for no, line in enumerate(raw_lines, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not content:
        raise SchemaError(f"{path}: no header row")
    header = [c.strip() for c in content[0][1].split(",")]
    variant = _detect_schema(header)
    columns = MERGE_COLUMNS if variant == "merge" else NGSIM_COLUMNS
    idx = {c: header.index(c) for c in columns}

    by_episode: dict[str, list] = {}
    for no, line in content[1:]:
        fields = line.split(",")
        if len(fields) != len(header):
            raise ParseError(
                f"line {no}: {len(fields)} fields, header has {len(header)}"
            )
        ep_id = fields[idx["episode_id"]].strip()
        values = {
            c: _parse_value(fields[idx[c]], no, c) for c in columns[1:]
        }
        by_episode.setdefault(ep_id, []).append((values["t"], no, values))

    if not by_episode:
        raise SchemaError(f"{path}: no data rows")
    for rows in by_episode.values():
        rows.sort(key=lambda r: r[0])

    dt = None
    for rows in by_episode.values():
        if len(rows) >= 2:
            dt = rows[1][0] - rows[0][0]
            break
    if dt is None or dt <= 0:
        raise TimingError(f"{path}: cannot determine a positive time step")
    for rows in by_episode.values():
        for k in range(1, len(rows)):
            gap = rows[k][0] - rows[k - 1][0]
            if abs(gap - dt) > 1e-6:
                raise TimingError(
                    f"line {rows[k][1]}: time gap {gap:.6g} != {dt:.6g}"
                )

    episodes = []
    for ep_id, rows in by_episode.items():
        n = len(rows)
        if variant == "merge":
            obs = np.array(
                [[r[2][c] for c in ("z1", "v1", "u1", "z2", "v2", "u2")] for r in rows]
            )
            episodes.append(Episode(obs, dt, "merge", episode_id=ep_id))
        else:
            packing = (
                "z_ramp_lat",
                "z_ramp_lon",
                "a_ramp",
                "z_lead",
                "v_lead",
                "a_lead",
                "z_lag",
                "v_lag",
                "a_lag",
            )
            obs = np.array([[r[2][c] for c in packing] for r in rows])
            v_ramp = np.array([r[2]["v_ramp"] for r in rows])
            episodes.append(
                Episode(obs, dt, "ngsim", episode_id=ep_id, v_ramp=v_ramp)
            )
    return Dataset(tuple(episodes), variant)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_trajectory_csv(dataset: Dataset, path: str, meta: dict | None = None) -> str:
    """Write a Dataset back to the trajectory CSV schema (atomic write).

    The metadata block ('#' lines) carries the tool version plus any
    caller-supplied keys; the data section below it is deterministic, so
    identical datasets produce byte-identical files.
    """
    columns = MERGE_COLUMNS if dataset.variant == "merge" else NGSIM_COLUMNS
    lines = _meta_lines(meta)
    lines.append(",".join(columns))
    for ep in dataset.episodes:
        if dataset.variant == "ngsim" and ep.v_ramp is None:
            raise InvalidInputError(
                f"episode {ep.episode_id!r} has no ramp-speed column to export"
            )
        for k in range(len(ep)):
            t = k * ep.dt
            if dataset.variant == "merge":
                cells = ep.observations[k]
            else:
                o = ep.observations[k]
                cells = [o[0], o[1], ep.v_ramp[k], o[2], o[3], o[4], o[5], o[6], o[7], o[8]]
            lines.append(ep.episode_id + "," + ",".join(_fmt(x) for x in [t, *cells]))
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


# --- surrogate loss ---


def surrogate_loss(pred_mean, sample):
    """Distribution-matching training loss: (x - 2*x_ref)^T x.

    Equals ||x - x_ref||^2 - ||x_ref||^2, so its gradient in x is
    2 (x - x_ref) while never needing the intractable reference-distribution
    term. Accepts a plain vector (returns float) or a taped Tensor (returns a
    scalar Tensor whose backward pass yields that gradient).
    """
    ref = np.asarray(sample, dtype=np.float64)
    x_val = value_of(pred_mean)
    if np.shape(x_val) != ref.shape:
        raise ShapeError(f"prediction {np.shape(x_val)} vs sample {ref.shape}")
    out = ad.sum_all(ad.mul(ad.sub(pred_mean, 2.0 * ref), pred_mean))
    return out if isinstance(out, Tensor) else float(out)


# --- training ---


@dataclass(frozen=True)
class TrainingReport:
    """Per-epoch loss history. Index 0 of both curves is the pre-training
    evaluation; val_loss is shifted by the reference-norm term so it is
    nonnegative and 0 means perfect prediction."""

    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    best_epoch: int
    skipped_episodes: int
    n_train: int
    n_val: int

    @property
    def best_val(self) -> float:
        return self.val_loss[self.best_epoch]


def _prepare_episode(ep: Episode, H: int, model: AisModel) -> dict:
    """Scaled per-step arrays for one episode: encoder feeds X, decoder
    actions A, reference futures R, and the decode-validity mask M."""
    obs = ep.observations
    n = obs.shape[0]
    feeds, _ = encoder_inputs(model.variant, obs)
    X = feeds / model.in_scale
    slots = list(model.action_slots)
    A = np.zeros((n, model.action_width))
    A[: n - 1] = obs[: n - 1, slots] / model.in_scale[slots]
    out_w = 2 if model.variant == "ngsim" else (
        H if model.decoder_mode == "fd" else 2 * H
    )
    R = np.zeros((n, out_w))
    M = np.zeros(n)
    n_valid = n - H
    if n_valid > 0:
        M[:n_valid] = 1.0
        if model.variant == "ngsim":
            R[: n - 1] = obs[1:, :2] / model.out_scale
        else:
            win_z = np.lib.stride_tricks.sliding_window_view(obs[1:, 3], H)
            win_v = np.lib.stride_tricks.sliding_window_view(obs[1:, 4], H)
            if model.decoder_mode == "fd":
                R[:n_valid] = win_z / model.out_scale[0]
            else:
                R[:n_valid] = np.concatenate(
                    [win_z / model.out_scale[0], win_v / model.out_scale[1]], axis=1
                )
    return {"X": X, "A": A, "R": R, "M": M, "n": n}


def _make_batches(episodes, H: int, model: AisModel, batch_size: int) -> list[dict]:
    """Pad same-batch episodes to a common length; longest episodes first so
    padding stays small."""
    prepared = [_prepare_episode(ep, H, model) for ep in episodes]
    order = sorted(range(len(prepared)), key=lambda i: -prepared[i]["n"])
    batches = []
    for start in range(0, len(order), batch_size):
        group = [prepared[i] for i in order[start : start + batch_size]]
        B = len(group)
        T = max(g["n"] for g in group)
        X = np.zeros((B, T, group[0]["X"].shape[1]))
        A = np.zeros((B, T, group[0]["A"].shape[1]))
        R = np.zeros((B, T, group[0]["R"].shape[1]))
        M = np.zeros((B, T))
        for b, g in enumerate(group):
            n = g["n"]
            X[b, :n] = g["X"]
            A[b, :n] = g["A"]
            R[b, :n] = g["R"]
            M[b, :n] = g["M"]
        # no decode happens after the last valid step of the longest episode
        t_stop = int(np.max(np.nonzero(M.sum(axis=0))[0])) + 1 if M.any() else 0
        batches.append(
            {"X": X, "A": A, "R": R, "M": M, "count": float(M.sum()), "t_stop": t_stop,
             "shift": float(np.sum(M[:, :, None] * R * R))}
        )
    return batches


def _batch_loss(params: dict, model: AisModel, batch: dict,
                bptt_span: int | None = None):
    """Mean surrogate loss over the batch's valid decode points. Works taped
    (params hold Tensors) or plain (params hold arrays)."""
    X, A, R, M = batch["X"], batch["A"], batch["R"], batch["M"]
    B = X.shape[0]
    s = np.zeros((B, model.hidden_width))
    total = None
    for t in range(batch["t_stop"]):
        if bptt_span is not None and t > 0 and t % bptt_span == 0:
            s = value_of(s)
        s = model.encoder_core(params, X[:, t, :], s)
        mask = M[:, t]
        if not mask.any():
            continue
        p = model.decoder_core(params, s, A[:, t, :])
        r = R[:, t, :]
        term = ad.sum_all(ad.mul(ad.mul(ad.sub(p, 2.0 * r), p), mask[:, None]))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise InvalidInputError("batch has no decodable step")
    return ad.mul(total, np.float64(1.0 / batch["count"]))


def _eval_loss(params: dict, model: AisModel, batches: list[dict]) -> float:
    """Count-weighted mean surrogate loss over a batch list (no tape)."""
    total = 0.0
    count = 0.0
    for batch in batches:
        total += float(value_of(_batch_loss(params, model, batch))) * batch["count"]
        count += batch["count"]
    return total / count


def _split_episodes(episodes, val_fraction: float, rng) -> tuple[list, list]:
    n = len(episodes)
    if n == 1:
        # nothing to hold out; validate on the training episode
        return list(episodes), list(episodes)
    perm = rng.permutation(n)
    n_val = min(max(1, int(round(val_fraction * n))), n - 1)
    val_idx = set(int(i) for i in perm[:n_val])
    train = [episodes[i] for i in range(n) if i not in val_idx]
    val = [episodes[i] for i in range(n) if i in val_idx]
    return train, val


def _data_scales(episodes) -> tuple[np.ndarray, np.ndarray]:
    """Max-abs column scales for the ngsim variant (1.0 where a column is
    degenerate), derived from the training split only."""
    stacked = np.concatenate([ep.observations for ep in episodes], axis=0)
    m = np.max(np.abs(stacked), axis=0)
    in_scale = np.where(m > 1e-9, m, 1.0)
    return in_scale, in_scale[:2].copy()


def train(
    dataset: Dataset, variant: str = "merge", config: TrainConfig | None = None
) -> tuple[AisModel, TrainingReport]:
    """Fit the encoder and decoder on recorded episodes.

    Episodes shorter than H + 2 rows cannot supply a single decode point with
    a preceding action, so they are skipped and counted in the report. The
    returned model is the snapshot with the lowest validation loss, not
    necessarily the final iterate.
    """
    config = config if config is not None else TrainConfig()
    if not dataset.episodes:
        raise InvalidInputError("empty dataset")
    if variant != dataset.variant:
        raise InvalidInputError(
            f"cannot train a {variant!r} model on a {dataset.variant!r} dataset"
        )
    H = config.H
    if variant == "ngsim" and H != 1:
        raise InvalidInputError("the ngsim variant predicts one step, set H=1")
    usable = [ep for ep in dataset.episodes if len(ep) >= H + 2]
    skipped = len(dataset.episodes) - len(usable)
    if not usable:
        raise InvalidInputError("no trainable episodes")

    rng = np.random.default_rng(config.seed)
    train_eps, val_eps = _split_episodes(usable, config.val_fraction, rng)

    if variant == "ngsim":
        in_scale, out_scale = _data_scales(train_eps)
    else:
        in_scale, out_scale = None, None
    model = build_model(
        variant,
        H=H,
        seed=config.seed,
        decoder_mode=config.decoder_mode,
        dt=usable[0].dt,
        in_scale=in_scale,
        out_scale=out_scale,
    )

    train_batches = _make_batches(train_eps, H, model, config.batch_size)
    val_batches = _make_batches(val_eps, H, model, config.batch_size)
    val_shift = sum(b["shift"] for b in val_batches) / sum(
        b["count"] for b in val_batches
    )

    adam = AdamState(
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps_adam,
    )
    train_hist = [_eval_loss(model.params, model, train_batches)]
    val_hist = [_eval_loss(model.params, model, val_batches) + val_shift]
    best_val = val_hist[0]
    best_epoch = 0
    best_params = model.params.copy_arrays()

    for epoch in range(1, config.epochs + 1):
        adam.lr = config.learning_rate * config.lr_decay ** (epoch - 1)
        epoch_total = 0.0
        epoch_count = 0.0
        for i in rng.permutation(len(train_batches)):
            batch = train_batches[int(i)]
            tensors = model.params.as_tensors()
            loss = _batch_loss(tensors, model, batch, config.bptt_span)
            backward(loss)
            grads = {name: t.grad for name, t in tensors.items()}
            adam_step(model.params, grads, adam)
            epoch_total += float(value_of(loss)) * batch["count"]
            epoch_count += batch["count"]
        train_hist.append(epoch_total / epoch_count)
        val = _eval_loss(model.params, model, val_batches) + val_shift
        val_hist.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = model.params.copy_arrays()

    best_model = AisModel(
        variant,
        H,
        best_params,
        model.in_scale,
        model.out_scale,
        model.decoder_mode,
        model.dt,
    )
    report = TrainingReport(
        train_loss=tuple(train_hist),
        val_loss=tuple(val_hist),
        best_epoch=best_epoch,
        skipped_episodes=skipped,
        n_train=len(train_eps),
        n_val=len(val_eps),
    )
    return best_model, report


# --- prediction accuracy ---


@dataclass(frozen=True)
class RmseReport:
    """Root-mean-square prediction errors, aggregated over every decode
    point of every episode and split per horizon step."""

    variant: str
    position_rmse: float
    speed_rmse: float | None
    per_step_position: tuple[float, ...]
    per_step_speed: tuple[float, ...] | None
    lat_rmse: float | None
    lon_rmse: float | None
    n_points: int
    skipped_episodes: int


def evaluate_rmse(model, dataset: Dataset) -> RmseReport:
    """Replay each episode through the model and score decoded horizons
    against what actually happened, in meters and meters per second."""
    if model.variant != dataset.variant:
        raise InvalidInputError(
            f"{model.variant!r} model cannot score a {dataset.variant!r} dataset"
        )
    H = model.H
    skipped = 0
    n_points = 0
    if model.variant == "merge":
        sq_z = np.zeros(H)
        sq_v = np.zeros(H)
        counts = np.zeros(H)
    else:
        sq_lat = 0.0
        sq_lon = 0.0
    for ep in dataset.episodes:
        if len(ep) < H + 2:
            skipped += 1
            continue
        obs = ep.observations
        n = obs.shape[0]
        feeds, u_prevs = encoder_inputs(model.variant, obs)
        s = model.init_state()
        slots = list(model.action_slots)
        for t in range(n - H):
            s = model.encode(s, feeds[t], u_prevs[t])
            pred = model.decode(s, obs[t, slots] if len(slots) > 1 else obs[t, 2])
            if model.variant == "merge":
                sq_z += (pred.z_hat - obs[t + 1 : t + 1 + H, 3]) ** 2
                sq_v += (pred.v_hat - obs[t + 1 : t + 1 + H, 4]) ** 2
                counts += 1.0
            else:
                sq_lat += (pred.lat - obs[t + 1, 0]) ** 2
                sq_lon += (pred.lon - obs[t + 1, 1]) ** 2
            n_points += 1
    if n_points == 0:
        raise InvalidInputError("no episode is long enough to score")
    if model.variant == "merge":
        per_z = np.sqrt(sq_z / counts)
        per_v = np.sqrt(sq_v / counts)
        return RmseReport(
            variant="merge",
            position_rmse=float(np.sqrt(sq_z.sum() / counts.sum())),
            speed_rmse=float(np.sqrt(sq_v.sum() / counts.sum())),
            per_step_position=tuple(float(x) for x in per_z),
            per_step_speed=tuple(float(x) for x in per_v),
            lat_rmse=None,
            lon_rmse=None,
            n_points=n_points,
            skipped_episodes=skipped,
        )
    lat = float(np.sqrt(sq_lat / n_points))
    lon = float(np.sqrt(sq_lon / n_points))
    return RmseReport(
        variant="ngsim",
        position_rmse=float(np.sqrt((sq_lat + sq_lon) / (2 * n_points))),
        speed_rmse=None,
        per_step_position=(float(np.sqrt((sq_lat + sq_lon) / (2 * n_points))),),
        per_step_speed=None,
        lat_rmse=lat,
        lon_rmse=lon,
        n_points=n_points,
        skipped_episodes=skipped,
    )


class OracleStub:
    """Perfect-prediction stand-in: looks up each presented observation in
    the recorded data and 'predicts' the future that actually followed.

    Useful as a pipeline test double; prediction-error metrics must come out
    exactly zero on the dataset it was built from.
    """

    def __init__(self, dataset: Dataset, H: int = 10):
        self.variant = dataset.variant
        self.H = 1 if dataset.variant == "ngsim" else H
        self.decoder_mode = "direct"
        self.dt = dataset.dt
        self.out_scale = np.ones(2)
        self._state_cols = (0, 1, 3, 4) if self.variant == "merge" else (0, 1, 3, 4, 6, 7)
        self._episodes = [ep.observations for ep in dataset.episodes]
        self._index: dict[bytes, tuple[int, int]] = {}
        for e, obs in enumerate(self._episodes):
            for t in range(obs.shape[0]):
                key = obs[t, list(self._state_cols)].tobytes()
                self._index.setdefault(key, (e, t))

    @property
    def action_slots(self) -> tuple[int, ...]:
        return (2,) if self.variant == "merge" else (2, 5, 8)

    def init_state(self) -> np.ndarray:
        return np.zeros(2)

    def encode(self, s_prev, y, u_prev) -> np.ndarray:
        vec = y.as_vector() if hasattr(y, "as_vector") else np.asarray(y, dtype=np.float64)
        key = vec[list(self._state_cols)].tobytes()
        loc = self._index.get(key)
        if loc is None:
            raise InvalidInputError("observation not present in the recorded data")
        return np.array(loc, dtype=np.float64)

    def decode(self, s, u):
        e, t = int(s[0]), int(s[1])
        obs = self._episodes[e]
        future = obs[t + 1 : t + 1 + self.H]
        if future.shape[0] < self.H:
            raise InvalidInputError(
                f"episode {e} has no {self.H}-step future at step {t}"
            )
        if self.variant == "merge":
            return HorizonPrediction(future[:, 3], future[:, 4])
        return NgsimPrediction(float(future[0, 0]), float(future[0, 1]))
