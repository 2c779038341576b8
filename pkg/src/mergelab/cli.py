"""Command-line front end.

Five subcommands cover the whole experiment cycle: ``generate`` records
simulated encounters, ``train`` fits the behavior predictor, ``predict``
scores it against recorded data, ``simulate`` runs one closed-loop merging
episode under the receding-horizon controller, and ``evaluate`` sweeps
Monte-Carlo safety tables over the robustness parameter.

Every run is driven by one JSON config (deep-merged over built-in defaults)
plus flag overrides, with the resolved config's hash stamped into each output
file. Outputs contain no timestamps, so identical invocations produce
byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .ais import load_model, save_model
from .driver import STYLE_PRESETS, IrlWeights, StyleRange
from .dynamics import ScenarioConfig
from .errors import InvalidInputError, MergeLabError
from .evaluation import (
    _atomic_write,
    _meta_lines,
    emit_report,
    monte_carlo,
    run_episode,
    sample_initial_states,
)
from .training import (
    OracleStub,
    TrainConfig,
    evaluate_rmse,
    export_trajectory_csv,
    generate_dataset,
    load_trajectory_csv,
    train,
    unsafe_fraction,
)
from .ais import encoder_inputs

DEFAULT_CONFIG = {
    "seed": 0,
    "out": ".",
    "jobs": None,
    "scenario": {
        "L_c": 70.0,
        "z_c": 70.0,
        "dt": 0.2,
        "v_min": 0.0,
        "v_max": 14.0,
        "u_min": -3.0,
        "u_max": 2.0,
        "w1": 1.0,
        "w2": 10.0,
        "w3": 1000.0,
        "rho": 1.0,
        "H": 10,
    },
    "style_range": {
        "theta_accel": [0.2, 1.0],
        "theta_speed": [0.5, 2.0],
        "theta_prox": [10.0, 400.0],
        "v_des": [8.0, 16.0],
        "lookahead": [8, 14],
    },
    "train": {
        "epochs": 400,
        "learning_rate": 3e-3,
        "lr_decay": 0.994,
        "seed": 0,
        "H": 10,
        "bptt_span": None,
        "val_fraction": 0.2,
        "batch_size": 32,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_adam": 1e-8,
        "decoder_mode": "direct",
    },
    "evaluation": {
        "n": 500,
        "rho": [0.6, 0.8, 1.0],
        "tau_safe": 1.0,
        "j_max": 3,
    },
    "paths": {"dataset": "", "model": ""},
}


def available_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise InvalidInputError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidInputError(f"config key {where!r} must be an object")
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_run_config(path: str | None) -> dict:
    """Built-in defaults, deep-merged with the JSON config file if given.
    Unknown keys are rejected so typos cannot silently fall back on defaults."""
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    return _deep_merge(DEFAULT_CONFIG, user)


def resolve_config(args) -> dict:
    """Config file plus command-line overrides (flags win)."""
    cfg = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the experiment-defining part of the resolved config. Output
    location and worker count do not change results, so they are excluded."""
    experiment = {
        k: v for k, v in cfg.items() if k not in ("out", "jobs", "paths")
    }
    canon = json.dumps(experiment, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _scenario(cfg: dict) -> ScenarioConfig:
    return ScenarioConfig(**cfg["scenario"])


def _style(cfg: dict) -> StyleRange:
    sr = cfg["style_range"]
    return StyleRange(
        theta_accel=tuple(sr["theta_accel"]),
        theta_speed=tuple(sr["theta_speed"]),
        theta_prox=tuple(sr["theta_prox"]),
        v_des=tuple(sr["v_des"]),
        lookahead=tuple(sr["lookahead"]),
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def _fmt(x: float) -> str:
    return repr(float(x))


class _OutputTracker:
    """Collects written paths so a failed command can clean up after itself,
    leaving either the full output set or nothing."""

    def __init__(self):
        self.paths = []

    def add(self, path: str) -> str:
        self.paths.append(path)
        return path

    def discard_all(self):
        for p in self.paths:
            try:
                os.remove(p)
            except OSError:
                pass


def _run_tracked(fn, args) -> int:
    tracker = _OutputTracker()
    try:
        return fn(args, tracker)
    except BaseException:
        tracker.discard_all()
        raise


def _out_dir(cfg: dict) -> str:
    out = cfg["out"] or "."
    os.makedirs(out, exist_ok=True)
    return out


def _base_meta(cfg: dict) -> dict:
    return {"seed": cfg["seed"], "config_hash": config_hash(cfg)}


# --- generate ---


def cmd_generate(args, tracker: _OutputTracker) -> int:
    cfg = resolve_config(args)
    scenario = _scenario(cfg)
    style = _style(cfg)
    dataset = generate_dataset(args.mode, args.n, cfg["seed"], scenario, style)
    frac = unsafe_fraction(dataset)
    out = os.path.join(_out_dir(cfg), f"dataset_{args.mode}.csv")
    meta = _base_meta(cfg)
    meta.update({"mode": args.mode, "n_episodes": args.n, "unsafe_fraction": frac})
    tracker.add(export_trajectory_csv(dataset, out, meta=meta))
    print(f"wrote {out}")
    print(f"episodes: {len(dataset)}  unsafe fraction: {frac:.4f}")
    return 0


# --- train ---


def cmd_train(args, tracker: _OutputTracker) -> int:
    cfg = resolve_config(args)
    dataset_path = args.dataset or cfg["paths"]["dataset"]
    if not dataset_path:
        raise InvalidInputError("no dataset: pass --dataset or set paths.dataset")
    dataset = load_trajectory_csv(dataset_path)
    train_cfg = _train_config(cfg)
    model, report = train(dataset, dataset.variant, train_cfg)

    out_dir = _out_dir(cfg)
    model_path = os.path.join(out_dir, args.model_name)
    save_model(model, model_path)
    tracker.add(model_path)

    loss_path = os.path.join(out_dir, "training_loss.csv")
    meta = _base_meta(cfg)
    meta.update(
        {
            "dataset": dataset_path,
            "n_train": report.n_train,
            "n_val": report.n_val,
            "skipped_episodes": report.skipped_episodes,
            "best_epoch": report.best_epoch,
        }
    )
    lines = _meta_lines(meta)
    lines.append("epoch,train_loss,val_loss")
    for epoch, (tr, va) in enumerate(zip(report.train_loss, report.val_loss)):
        lines.append(f"{epoch},{_fmt(tr)},{_fmt(va)}")
    _atomic_write(loss_path, "\n".join(lines) + "\n")
    tracker.add(loss_path)

    print(f"wrote {model_path}")
    print(f"wrote {loss_path}")
    print(
        f"trained on {report.n_train} episodes ({report.n_val} held out, "
        f"{report.skipped_episodes} skipped); best epoch {report.best_epoch}, "
        f"validation loss {report.best_val:.6f}"
    )
    return 0


# --- predict ---


def _prediction_rows(model, dataset):
    """Yield (episode_id, t_index, k, predicted, reference) per horizon step."""
    H = model.H
    for ep in dataset.episodes:
        if len(ep) < H + 2:
            continue
        obs = ep.observations
        feeds, u_prevs = encoder_inputs(model.variant, obs)
        s = model.init_state()
        slots = list(model.action_slots)
        for t in range(len(ep) - H):
            s = model.encode(s, feeds[t], u_prevs[t])
            pred = model.decode(s, obs[t, slots] if len(slots) > 1 else obs[t, 2])
            if model.variant == "merge":
                for k in range(H):
                    yield (
                        ep.episode_id,
                        t,
                        k + 1,
                        (pred.z_hat[k], pred.v_hat[k]),
                        (obs[t + 1 + k, 3], obs[t + 1 + k, 4]),
                    )
            else:
                yield (
                    ep.episode_id,
                    t,
                    1,
                    (pred.lat, pred.lon),
                    (obs[t + 1, 0], obs[t + 1, 1]),
                )


def cmd_predict(args, tracker: _OutputTracker) -> int:
    cfg = resolve_config(args)
    dataset_path = args.dataset or cfg["paths"]["dataset"]
    if not dataset_path:
        raise InvalidInputError("no dataset: pass --dataset or set paths.dataset")
    dataset = load_trajectory_csv(dataset_path)
    if args.stub_oracle:
        model = OracleStub(dataset, H=cfg["train"]["H"])
    else:
        model_path = args.model or cfg["paths"]["model"]
        if not model_path:
            raise InvalidInputError("no model: pass --model or set paths.model")
        model = load_model(model_path)
    report = evaluate_rmse(model, dataset)

    out_dir = _out_dir(cfg)
    meta = _base_meta(cfg)
    meta["dataset"] = dataset_path
    pred_path = os.path.join(out_dir, "predictions.csv")
    lines = _meta_lines(meta)
    if model.variant == "merge":
        lines.append("episode_id,t,k,z2_pred,z2_ref,v2_pred,v2_ref")
    else:
        lines.append("episode_id,t,k,lat_pred,lat_ref,lon_pred,lon_ref")
    dt = dataset.dt
    for ep_id, t, k, pred, ref in _prediction_rows(model, dataset):
        lines.append(
            f"{ep_id},{_fmt(t * dt)},{k},"
            f"{_fmt(pred[0])},{_fmt(ref[0])},{_fmt(pred[1])},{_fmt(ref[1])}"
        )
    _atomic_write(pred_path, "\n".join(lines) + "\n")
    tracker.add(pred_path)

    rmse_path = os.path.join(out_dir, "rmse.json")
    doc = {
        "meta": {"mergelab": __version__, **meta},
        "variant": report.variant,
        "position_rmse": report.position_rmse,
        "speed_rmse": report.speed_rmse,
        "per_step_position": list(report.per_step_position),
        "per_step_speed": (
            list(report.per_step_speed) if report.per_step_speed is not None else None
        ),
        "lat_rmse": report.lat_rmse,
        "lon_rmse": report.lon_rmse,
        "n_points": report.n_points,
        "skipped_episodes": report.skipped_episodes,
    }
    _atomic_write(rmse_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tracker.add(rmse_path)

    print(f"wrote {pred_path}")
    print(f"wrote {rmse_path}")
    if report.variant == "merge":
        print(
            f"position RMSE {report.position_rmse:.4f} m, "
            f"speed RMSE {report.speed_rmse:.4f} m/s "
            f"({report.n_points} decode points)"
        )
    else:
        print(
            f"lateral RMSE {report.lat_rmse:.4f} m, "
            f"longitudinal RMSE {report.lon_rmse:.4f} m "
            f"({report.n_points} decode points)"
        )
    return 0


# --- simulate ---


def _parse_weights(text: str) -> IrlWeights:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 5:
        raise InvalidInputError(
            "custom weights need 5 comma-separated values: "
            "theta_accel,theta_speed,theta_prox,v_des,lookahead"
        )
    try:
        return IrlWeights(
            float(parts[0]),
            float(parts[1]),
            float(parts[2]),
            float(parts[3]),
            int(parts[4]),
        )
    except ValueError as exc:
        raise InvalidInputError(f"cannot parse weights {text!r}: {exc}") from exc


def cmd_simulate(args, tracker: _OutputTracker) -> int:
    cfg = resolve_config(args)
    model_path = args.model or cfg["paths"]["model"]
    if not model_path:
        raise InvalidInputError("no model: pass --model or set paths.model")
    model = load_model(model_path)
    scenario = _scenario(cfg)
    if scenario.H != model.H:
        # the model file fixes the prediction horizon; plan over the same span
        scenario = scenario.replace(H=model.H)
    if args.preset == "custom":
        if not args.weights:
            raise InvalidInputError("--preset custom needs --weights")
        weights = _parse_weights(args.weights)
    else:
        if args.weights:
            raise InvalidInputError("--weights only applies with --preset custom")
        weights = STYLE_PRESETS[args.preset]
    rng = np.random.default_rng(cfg["seed"])
    init = sample_initial_states(rng, scenario)
    log = run_episode(
        "iterative-mpc",
        weights,
        init,
        scenario,
        seed=cfg["seed"],
        model=model,
        j_max=cfg["evaluation"]["j_max"],
        tau_safe=cfg["evaluation"]["tau_safe"],
    )
    out = os.path.join(_out_dir(cfg), f"episode_{args.preset}.csv")
    meta = _base_meta(cfg)
    meta.update({"preset": args.preset, "model": model_path})
    tracker.add(emit_report(log, out, format="csv", meta=meta))
    print(f"wrote {out}")

    def when(t):
        return "never" if t is None else f"{t:.2f} s"

    print(
        f"CAV crossed at {when(log.cav_crossing)}, HDV at {when(log.hdv_crossing)}; "
        f"{'safe' if log.safe else 'UNSAFE'} "
        f"(threshold {log.tau_safe} s, {log.n_steps} steps)"
    )
    return 0


# --- evaluate ---


def cmd_evaluate(args, tracker: _OutputTracker) -> int:
    cfg = resolve_config(args)
    model_paths = args.models or ([cfg["paths"]["model"]] if cfg["paths"]["model"] else [])
    if not model_paths:
        raise InvalidInputError("no models: pass --model or set paths.model")
    ev = cfg["evaluation"]
    n = args.n if args.n is not None else ev["n"]
    if args.rho:
        try:
            rho_values = [float(r) for r in args.rho.split(",")]
        except ValueError as exc:
            raise InvalidInputError(f"cannot parse rho list {args.rho!r}: {exc}") from exc
    else:
        rho_values = list(ev["rho"])
    scenario = _scenario(cfg)
    style = _style(cfg)
    jobs = cfg["jobs"] if cfg["jobs"] is not None else available_jobs()

    tables = []
    for path in model_paths:
        model = load_model(path)
        label = os.path.splitext(os.path.basename(path))[0]
        cfg_model = (
            scenario if scenario.H == model.H else scenario.replace(H=model.H)
        )
        table = monte_carlo(
            model,
            rho_values,
            n,
            master_seed=cfg["seed"],
            cfg=cfg_model,
            style_range=style,
            j_max=ev["j_max"],
            tau_safe=ev["tau_safe"],
            jobs=jobs,
            label=label,
        )
        tables.append((path, table))

    out_dir = _out_dir(cfg)
    meta = _base_meta(cfg)
    meta.update({"n": n, "tau_safe": ev["tau_safe"], "j_max": ev["j_max"]})

    json_path = os.path.join(out_dir, "safety.json")
    doc = {
        "meta": {"mergelab": __version__, **meta},
        "tables": [
            {
                "model": table.model,
                "model_path": path,
                "tau_safe": table.tau_safe,
                "rows": [
                    {
                        "rho": row.rho,
                        "safe_count": row.safe_count,
                        "total": row.total,
                        "percentage": row.percentage,
                    }
                    for row in table.rows
                ],
            }
            for path, table in tables
        ],
    }
    _atomic_write(json_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tracker.add(json_path)

    text_lines = [f"safety rates (n={n} episodes per cell, tau_safe={ev['tau_safe']} s)", ""]
    name_w = max(len(t.model) for _, t in tables)
    text_lines.append(f"{'model':<{name_w}}  {'rho':>5}  {'safe':>6}  {'total':>6}  {'percent':>8}")
    for _, table in tables:
        for row in table.rows:
            text_lines.append(
                f"{table.model:<{name_w}}  {row.rho:>5.2f}  {row.safe_count:>6d}  "
                f"{row.total:>6d}  {row.percentage:>7.1f}%"
            )
    text = "\n".join(text_lines) + "\n"
    txt_path = os.path.join(out_dir, "safety.txt")
    _atomic_write(txt_path, text)
    tracker.add(txt_path)

    print(f"wrote {json_path}")
    print(f"wrote {txt_path}")
    print(text, end="")
    return 0


# --- parser plumbing ---


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        metavar="PATH",
        help="JSON run config; missing keys fall back on built-in defaults",
    )
    common.add_argument(
        "--seed", type=int, metavar="N", help="master seed (default: config value, 0)"
    )
    common.add_argument(
        "--out",
        metavar="DIR",
        help="output directory (default: config value, current directory)",
    )
    common.add_argument(
        "--jobs",
        type=_positive_int,
        metavar="N",
        help="parallel worker cap (default: config value, else available cores)",
    )

    parser = argparse.ArgumentParser(
        prog="mergelab",
        description="Mixed-traffic merging lab: data generation, behavior "
        "prediction, and receding-horizon control experiments.",
    )
    parser.add_argument("--version", action="version", version=f"mergelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser(
        "generate",
        parents=[common],
        help="simulate encounters and write a trajectory dataset CSV",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument(
        "--mode",
        choices=("safe", "exploratory"),
        default="safe",
        help="safe: yielding controller drives the CAV; exploratory: both cars "
        "follow sampled objective weights",
    )
    p.add_argument("--n", type=_positive_int, default=100, help="number of episodes")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "train",
        parents=[common],
        help="fit the behavior predictor on a trajectory CSV",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--dataset", metavar="PATH", help="trajectory CSV (or config paths.dataset)")
    p.add_argument(
        "--model-name",
        default="model.json",
        metavar="NAME",
        help="output model file name inside the output directory",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "predict",
        parents=[common],
        help="score a model's decoded horizons against recorded data",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--model", metavar="PATH", help="model file (or config paths.model)")
    p.add_argument("--dataset", metavar="PATH", help="trajectory CSV (or config paths.dataset)")
    p.add_argument(
        "--stub-oracle",
        action="store_true",
        help="replace the model with a lookup of the recorded futures "
        "(pipeline check: every error must be exactly zero)",
    )
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser(
        "simulate",
        parents=[common],
        help="run one closed-loop merging episode under the learned-model controller",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--model", metavar="PATH", help="model file (or config paths.model)")
    p.add_argument(
        "--preset",
        choices=("aggressive", "conservative", "custom"),
        default="aggressive",
        help="human-driver style",
    )
    p.add_argument(
        "--weights",
        metavar="A,S,P,V,L",
        help="custom driver weights: theta_accel,theta_speed,theta_prox,v_des,lookahead",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "evaluate",
        parents=[common],
        help="Monte-Carlo safety table over the robustness parameter",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument(
        "--model",
        dest="models",
        metavar="PATH",
        action="append",
        help="model file; repeat the flag to compare several models",
    )
    p.add_argument("--n", type=_positive_int, help="episodes per table cell (default: config value, 500)")
    p.add_argument(
        "--rho",
        metavar="R1,R2,...",
        help="robustness values to sweep (default: config value, 0.6,0.8,1.0)",
    )
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run_tracked(args.func, args)
    except (MergeLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
