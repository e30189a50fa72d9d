"""
Individual analysis: one network across its training run
=========================================================

Instead of comparing many networks at fixed accuracy levels, follow a
single network through training: snapshot it every epoch, compute the
metric record of each snapshot, and order the records by accuracy.  The
per-layer fluctuation series is the error-bar view used when too few
samples exist for meaningful density plots.

Writes the error-bar CSV to demo_output/trajectory/.
"""

from pathlib import Path

from cntnets import (
    TrainConfig,
    analyze_snapshot,
    load_bundled_digits,
    train,
    train_eval_split,
    trajectory_report,
)
from cntnets.ensemble import trajectory_errorbar_csv

train_data, eval_data = train_eval_split(load_bundled_digits(), eval_fraction=0.2, seed=0)

cfg = TrainConfig(
    layer_sizes=(64, 32, 32, 10),
    init_family="normal",
    init_scale=0.05,
    learning_rate=0.05,
    batch_size=32,
    max_epochs=12,
    seed=99,
    snapshot_schedule="every_epoch",
    task_tag="trajectory-demo",
)

print("training one network, snapshot per epoch...")
snapshots = train(cfg, train_data, eval_data)
print("accuracies:", " ".join(f"{s.meta.accuracy:.3f}" for s in snapshots))

records = [analyze_snapshot(s) for s in snapshots]
report = trajectory_report(records, hist_bins=30)

print("\nfluctuation of the first hidden layer along the run:")
for p in report.fluctuation_series[1]:
    bar = "#" * int(p["y"] * 60)
    print(f"  acc {p['accuracy']:.3f}: Y = {p['y']:.4f} {bar}")

out = Path("demo_output/trajectory")
out.mkdir(parents=True, exist_ok=True)
(out / "fluctuation_errorbars.csv").write_text(trajectory_errorbar_csv(report))
print(f"\nwrote {out}/fluctuation_errorbars.csv "
      f"({len(report.errorbar_rows())} rows: layer, accuracy, Y, spread)")
