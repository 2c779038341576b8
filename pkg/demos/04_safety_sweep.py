"""Measure closed-loop safety statistically, and bound the predictor's error.

One episode proves nothing: the interesting question is how often the
planner keeps a comfortable crossing gap when the human driver's style,
both starting positions, and both starting speeds are all randomized.
monte_carlo reuses the same episode seeds at every rho, so the sweep is a
paired comparison: each draw faces the identical opponent at each setting
and only the planner's conservatism changes.

An episode counts as safe when the two cars cross the conflict point at
least 1 second apart. This is a reduced run (60 episodes per rho, a couple
of minutes); the shipped evaluate subcommand defaults to 500.

Uses the model demo 02 cached under demos/_artifacts/ (trains a quick
replacement if it is missing).

Run:  python3 demos/04_safety_sweep.py
"""

import pathlib
import time

from mergelab.ais import load_model
from mergelab.dynamics import ScenarioConfig
from mergelab.evaluation import estimate_ap_bounds, monte_carlo
from mergelab.training import OracleStub, generate_dataset

MODEL_PATH = pathlib.Path(__file__).resolve().parent / "_artifacts" / "model.json"
cfg = ScenarioConfig()


def get_model():
    if MODEL_PATH.exists():
        print(f"using the cached predictor from {MODEL_PATH}")
        return load_model(str(MODEL_PATH))
    print("no cached predictor; training a quick one (about a minute) ...")
    from mergelab.ais import save_model
    from mergelab.training import TrainConfig, train

    data = generate_dataset("safe", 500, 7, cfg)
    model, _ = train(data, "merge", TrainConfig(
        epochs=200, learning_rate=3e-3, lr_decay=0.994, batch_size=32, seed=0))
    MODEL_PATH.parent.mkdir(exist_ok=True)
    save_model(model, str(MODEL_PATH))
    return model


model = get_model()

print()
print("sweeping rho over {0.6, 0.8, 1.0}, 60 paired episodes each ...")
t0 = time.monotonic()
table = monte_carlo(model, [0.6, 0.8, 1.0], 60, 11, cfg)
print(f"({time.monotonic() - t0:.0f} s)")
print()
print(f"{'rho':>5}{'safe':>7}{'total':>7}{'percent':>9}")
for row in table.rows:
    print(f"{row.rho:>5.1f}{row.safe_count:>7}{row.total:>7}"
          f"{row.percentage:>8.1f}%")
print()
print("More conservatism never hurts here, and the paired seeds mean the")
print("comparison is episode by episode, not noise against noise.")
print()

# --- how wrong can the forecasts be? ----------------------------------------
# Two worst-case numbers over a fresh held-out set: delta is the largest
# distance between a forecast and what the human actually did (in the
# decoder's scaled units); epsilon is the largest error that forecast
# induced in the planner's stage cost. A lookup stub that replays the
# recorded futures is the zero point of both.
heldout = generate_dataset("safe", 60, 8, cfg)
eps_hat, delta_hat = estimate_ap_bounds(model, heldout, cfg)
stub_eps, stub_delta = estimate_ap_bounds(OracleStub(heldout), heldout, cfg)
print("worst-case forecast quality on 60 held-out episodes:")
print(f"  trained model: cost error <= {eps_hat:.1f}, "
      f"scaled distance <= {delta_hat:.3f}")
print(f"  perfect-recall stub: cost error {stub_eps}, distance {stub_delta}")
print()
print("The same sweep is available from the command line:")
print("  python3 -m mergelab evaluate --model demos/_artifacts/model.json \\")
print("      --n 60 --rho 0.6,0.8,1.0 --out results/")
