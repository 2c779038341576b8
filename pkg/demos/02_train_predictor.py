"""Train the behavior predictor on simulated merges and inspect what it knows.

The predictor is a small GRU encoder-decoder. The encoder folds each new
observation (both cars' states, plus the control the automated car just
applied) into a fixed-width summary state; the decoder turns that summary
plus a hypothetical next control into a 10-step forecast of the human
driver's position and speed. Training minimizes a surrogate of the squared
forecast error, so the fit can be judged directly in meters.

This is a reduced run (500 episodes, 200 epochs, about 90 seconds) that gets
under a meter; the shipped defaults (2000 episodes, 400 epochs) reach about
a third of a meter. The trained model is cached under demos/_artifacts/ and
reused by demos 03 and 04.

Run:  python3 demos/02_train_predictor.py
"""

import pathlib

import numpy as np

from mergelab.ais import encoder_inputs, save_model
from mergelab.dynamics import ScenarioConfig
from mergelab.training import TrainConfig, evaluate_rmse, generate_dataset, train

ARTIFACTS = pathlib.Path(__file__).resolve().parent / "_artifacts"
cfg = ScenarioConfig()

# --- data ------------------------------------------------------------------
# "safe" mode: a rule-based yielding controller drives the CAV while the HDV
# follows randomly drawn objective weights, one personality per episode.
print("generating 500 training episodes and 60 held-out episodes ...")
train_set = generate_dataset("safe", 500, 7, cfg)
heldout = generate_dataset("safe", 60, 8, cfg)
lengths = [len(ep) for ep in train_set.episodes]
print(f"episode length: min {min(lengths)}, median {int(np.median(lengths))}, "
      f"max {max(lengths)} rows at dt={cfg.dt} s")
print()

# --- fit ---------------------------------------------------------------
recipe = TrainConfig(epochs=200, learning_rate=3e-3, lr_decay=0.994,
                     batch_size=32, seed=0)
print(f"training: {recipe.epochs} epochs, lr {recipe.learning_rate} "
      f"(decay {recipe.lr_decay}/epoch), batch size {recipe.batch_size}")
model, report = train(train_set, "merge", recipe)
print()
print("validation loss trace (0 = perfect prediction in scaled units):")
for e in [0, 1, 5, 10, 25, 50, 100, 150, report.best_epoch]:
    if e < len(report.val_loss):
        tag = "  <- best kept" if e == report.best_epoch else ""
        print(f"  epoch {e:3d}: {report.val_loss[e]:10.5f}{tag}")
drop = 100.0 * (report.val_loss[0] - report.best_val) / report.val_loss[0]
print(f"reduction from initialization: {drop:.1f}%")
print()

# --- score on unseen encounters ------------------------------------------
rmse = evaluate_rmse(model, heldout)
print(f"held-out RMSE over the {model.H}-step horizon "
      f"({rmse.n_points} forecasts): position {rmse.position_rmse:.3f} m, "
      f"speed {rmse.speed_rmse:.3f} m/s")
print("per-step position RMSE (m):",
      " ".join(f"{v:.2f}" for v in rmse.per_step_position))
print()

# --- one forecast, end to end ---------------------------------------------
# Feed the first 3 seconds of a held-out episode through the encoder, then
# ask for the next 2 seconds of HDV motion and compare with what happened.
ep = heldout.episodes[0]
obs = ep.observations
k = 15
feeds, u_prevs = encoder_inputs("merge", obs)
s = model.init_state()
for t in range(k + 1):
    s = model.encode(s, feeds[t], u_prevs[t])
pred = model.decode(s, obs[k, 2])
truth_z = obs[k + 1 : k + 1 + model.H, 3]
truth_v = obs[k + 1 : k + 1 + model.H, 4]
print(f"episode {ep.episode_id!r}, forecast made at t={k * ep.dt:.1f} s:")
print(f"{'step':>4}{'z_pred':>9}{'z_true':>9}{'err':>7}   "
      f"{'v_pred':>7}{'v_true':>7}")
for i in range(model.H):
    print(f"{i + 1:>4}{pred.z_hat[i]:>9.2f}{truth_z[i]:>9.2f}"
          f"{pred.z_hat[i] - truth_z[i]:>7.2f}   "
          f"{pred.v_hat[i]:>7.2f}{truth_v[i]:>7.2f}")
print()

ARTIFACTS.mkdir(exist_ok=True)
out = ARTIFACTS / "model.json"
save_model(model, str(out))
print(f"saved the trained model to {out}")
print("demos 03 and 04 will pick it up from there.")
