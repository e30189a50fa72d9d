"""
Node strength, layer fluctuation, node disparity
================================================

Three views of the same graph, at three scales:

* link weights  -- per-edge mean and variance of one layer,
* node strength -- per-neuron sum of incident weights, split into the
  incoming and outgoing contribution,
* layer fluctuation -- the population spread of strengths within a layer.

Disparity, the classical per-node heterogeneity measure, is shown last
together with its failure mode: with signed weights its denominator can
cancel to zero, which is why it ships behind a flag.
"""

import numpy as np

from cntnets import SnapshotMeta, analyze_snapshot, node_disparity
from cntnets import Dense, NetworkSnapshot

rng = np.random.default_rng(21)
sizes = [6, 12, 12, 4]
layers = tuple(
    Dense(weights=rng.normal(0, 0.4, (a, b)), bias=np.zeros(b))
    for a, b in zip(sizes[:-1], sizes[1:])
)
snapshot = NetworkSnapshot(layers=layers, meta=SnapshotMeta(accuracy=0.5, task_tag="demo"))

record = analyze_snapshot(snapshot, with_disparity=True)

print("per-block link-weight statistics:")
for ls in record.link_stats:
    print(f"  block {ls.layer_index}: mean {ls.mu:+.4f}  variance {ls.delta:.4f}  links {ls.n_links}")

print("\nper-layer strengths and fluctuation:")
for sv, lf in zip(record.strengths, record.fluctuations):
    print(
        f"  layer {sv.layer_index}: neurons {len(sv)}, "
        f"strength range [{sv.s.min():+.3f}, {sv.s.max():+.3f}], fluctuation {lf.y:.4f}"
    )

# The strength of one neuron decomposes exactly into in + out.
sv = record.strengths[1]
k = int(np.argmax(np.abs(sv.s)))
print(f"\nstrongest neuron in layer 1 is #{k}: "
      f"s_in {sv.s_in[k]:+.4f} + s_out {sv.s_out[k]:+.4f} = {sv.s[k]:+.4f}")

# Disparity is bounded in [1/I, 1] for nonnegative weights ...
print("\ndisparity of (5, 0, 0, 0):", node_disparity([5.0, 0.0, 0.0, 0.0]))
print("disparity of (1, 1, 1, 1):", node_disparity([1.0, 1.0, 1.0, 1.0]))
# ... but signed weights can cancel, so the result carries a validity flag.
print("disparity of (1, -1):     ", node_disparity([1.0, -1.0]), "(cancelled denominator)")

disp = record.disparities[1]
n_valid = int(disp.valid.sum())
print(f"\nlayer 1 disparity: {n_valid}/{len(disp.valid)} neurons valid, "
      f"values in [{np.nanmin(disp.values):.4f}, {np.nanmax(disp.values):.4f}]")
print("(signed weights break the [1/I, 1] bound: near-cancelling strengths inflate "
      "the ratio, which is exactly why fluctuation replaces disparity)")
