"""
Networks as weighted bipartite graphs
=====================================

A trained feed-forward network is just a stack of weight tensors, and every
weight is one directed edge between two neurons.  This script builds a tiny
conv + dense network, stores it in the portable CNTS format, reads it back
bit-exactly, and expands one layer into its explicit edge list.
"""

import numpy as np

from cntnets import (
    Conv2D,
    Dense,
    NetworkSnapshot,
    SnapshotMeta,
    export_edge_list,
    neuron_count,
    read_snapshot,
    snapshot_to_json,
    unroll_layer,
    write_snapshot,
)

rng = np.random.default_rng(7)

# A 4x4 single-channel input, one 3x3 conv with two filters, then a dense head.
conv = Conv2D(
    kernel=rng.normal(0, 0.5, (3, 3, 1, 2)),
    bias=np.zeros(2),
    stride=(1, 1),
    padding="same",
    input_dims=(4, 4, 1),
)
head = Dense(weights=rng.normal(0, 0.5, (neuron_count(conv, "output"), 3)), bias=np.zeros(3))
snapshot = NetworkSnapshot(
    layers=(conv, head),
    meta=SnapshotMeta(accuracy=0.37, epoch=2, seed=7, task_tag="demo"),
)

print("neuron layers:", snapshot.neuron_layer_sizes())
print("parameters:   ", snapshot.parameter_count())

# CNTS round trip is bit-exact: float64 payloads, deterministic header.
data = write_snapshot(snapshot)
restored = read_snapshot(data)
assert np.array_equal(restored.layers[0].kernel, conv.kernel)
print(f"CNTS file size: {len(data)} bytes, round-trip exact")

# The JSON variant is human-readable and just as exact.
print("JSON variant starts with:", snapshot_to_json(snapshot)[:80], "...")

# Every layer expands into explicit graph edges.  Padded positions simply
# have no edge, so border output neurons have smaller receptive fields.
edges = unroll_layer(conv)
print(f"conv layer unrolls into {len(edges)} edges "
      f"({neuron_count(conv, 'input')} -> {neuron_count(conv, 'output')} neurons)")

first = next(edges.edges())
print("first edge:", first[0], "->", first[1], "weight", round(first[2], 4))

csv_head = export_edge_list(edges).decode().splitlines()[:3]
print("edge list CSV:", *csv_head, sep="\n  ")
