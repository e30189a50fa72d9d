"""Brute-force graph expansion: every layer as an explicit weighted edge list.

This module is the reference the fast metric paths are checked against.  It
materializes each parameter block as the edges of the directed bipartite
graph it induces and recomputes the metrics by direct per-edge summation,
with no use of weight sharing or translational symmetry.  It is deliberately
slow relative to the closed-form paths; its only performance concession is
an edge-count cap so it stays usable as a test instrument.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .snapshot import (
    Conv2D,
    Dense,
    LayerWeights,
    NetworkSnapshot,
    NeuronId,
    unflatten_index,
)

DEFAULT_EDGE_CAP = 10**7


class EdgeCapError(ValueError):
    """Unrolling refused: the geometry's edge count exceeds the cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"unrolled graph would have {count} edges, above the cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class EdgeList:
    """All edges of one parameter block, stored as parallel arrays.

    ``from_flat[e] -> to_flat[e]`` with weight ``weights[e]``; source neurons
    belong to neuron layer ``layer_index``, targets to ``layer_index + 1``.
    ``from_dims`` / ``to_dims`` carry (h, w, c) when the respective side is a
    conv activation tensor, enabling (channel, row, col) coordinates.
    """

    layer_index: int
    from_size: int
    to_size: int
    from_flat: np.ndarray
    to_flat: np.ndarray
    weights: np.ndarray
    from_dims: tuple[int, int, int] | None = None
    to_dims: tuple[int, int, int] | None = None

    def __len__(self) -> int:
        return len(self.weights)

    def edges(self):
        """Yield (from: NeuronId, to: NeuronId, weight) triples."""
        for f, t, w in zip(self.from_flat, self.to_flat, self.weights):
            f, t = int(f), int(t)
            f_coords = unflatten_index(f, self.from_dims) if self.from_dims else None
            t_coords = unflatten_index(t, self.to_dims) if self.to_dims else None
            yield (
                NeuronId(self.layer_index, f, f_coords),
                NeuronId(self.layer_index + 1, t, t_coords),
                float(w),
            )

    def has_duplicate_pairs(self) -> bool:
        keys = self.from_flat.astype(np.int64) * self.to_size + self.to_flat
        return len(np.unique(keys)) != len(keys)


def _conv_edge_count(conv: Conv2D) -> int:
    kh, kw, c_in, c_out = conv.kernel.shape
    h, w, _ = conv.input_dims
    sh, sw = conv.stride
    pt, pl = conv.pad_before()
    h_out, w_out = conv.output_spatial()
    rows = sum(
        1
        for y in range(h_out)
        for i in range(kh)
        if 0 <= y * sh - pt + i < h
    )
    cols = sum(
        1
        for x in range(w_out)
        for j in range(kw)
        if 0 <= x * sw - pl + j < w
    )
    return rows * cols * c_in * c_out


def unroll_layer(
    layer: LayerWeights, layer_index: int = 0, max_edges: int = DEFAULT_EDGE_CAP
) -> EdgeList:
    """Expand one block into its explicit edge list.

    Dense blocks yield the complete bipartite graph.  Conv blocks yield one
    edge per (output neuron, in-bounds kernel offset) pair; padded positions
    contribute no edge.
    """
    if isinstance(layer, Dense):
        n_in, n_out = layer.weights.shape
        count = n_in * n_out
        if count > max_edges:
            raise EdgeCapError(count, max_edges)
        from_flat = np.repeat(np.arange(n_in), n_out)
        to_flat = np.tile(np.arange(n_out), n_in)
        return EdgeList(
            layer_index=layer_index,
            from_size=n_in,
            to_size=n_out,
            from_flat=from_flat,
            to_flat=to_flat,
            weights=layer.weights.ravel().copy(),
        )

    count = _conv_edge_count(layer)
    if count > max_edges:
        raise EdgeCapError(count, max_edges)

    kernel = layer.kernel
    kh, kw, c_in, c_out = kernel.shape
    h, w, _ = layer.input_dims
    sh, sw = layer.stride
    pt, pl = layer.pad_before()
    h_out, w_out = layer.output_spatial()

    from_flat = np.empty(count, dtype=np.int64)
    to_flat = np.empty(count, dtype=np.int64)
    weights = np.empty(count, dtype=np.float64)

    in_plane = h * w
    out_plane = h_out * w_out
    in_channels = np.arange(c_in) * in_plane
    out_channels = np.arange(c_out) * out_plane
    pos = 0
    block = c_in * c_out
    for y in range(h_out):
        for x in range(w_out):
            for i in range(kh):
                r = y * sh - pt + i
                if not 0 <= r < h:
                    continue
                for j in range(kw):
                    c = x * sw - pl + j
                    if not 0 <= c < w:
                        continue
                    # complete bipartite block over channels at this offset
                    from_flat[pos : pos + block] = np.repeat(in_channels + r * w + c, c_out)
                    to_flat[pos : pos + block] = np.tile(out_channels + y * w_out + x, c_in)
                    weights[pos : pos + block] = kernel[i, j, :, :].ravel()
                    pos += block
    assert pos == count
    return EdgeList(
        layer_index=layer_index,
        from_size=h * w * c_in,
        to_size=out_plane * c_out,
        from_flat=from_flat,
        to_flat=to_flat,
        weights=weights,
        from_dims=(h, w, c_in),
        to_dims=(h_out, w_out, c_out),
    )


@dataclass(frozen=True)
class OracleMetrics:
    """Naive per-edge metric sums for one edge list."""

    mu: float
    delta: float
    s_out: np.ndarray  # out-strength per source neuron
    s_in: np.ndarray  # in-strength per target neuron
    y_out: float  # population std of s_out
    y_in: float  # population std of s_in
    n_edges: int


def _population_std(values: np.ndarray) -> float:
    m = values.mean()
    return float(np.sqrt(((values - m) ** 2).mean()))


def oracle_metrics(edges: EdgeList) -> OracleMetrics:
    """Direct summation over the edge list; no shortcuts."""
    if len(edges) == 0:
        raise ValueError("oracle_metrics requires a non-empty edge list")
    w = edges.weights
    mu = float(w.mean())
    delta = float(((w - mu) ** 2).mean())
    s_out = np.zeros(edges.from_size)
    s_in = np.zeros(edges.to_size)
    np.add.at(s_out, edges.from_flat, w)
    np.add.at(s_in, edges.to_flat, w)
    return OracleMetrics(
        mu=mu,
        delta=delta,
        s_out=s_out,
        s_in=s_in,
        y_out=_population_std(s_out),
        y_in=_population_std(s_in),
        n_edges=len(edges),
    )


def oracle_snapshot_strengths(
    s: NetworkSnapshot, max_edges: int = DEFAULT_EDGE_CAP
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per neuron layer (s_in, s_out, s) from full graph expansion."""
    sizes = s.neuron_layer_sizes()
    s_in = [np.zeros(n) for n in sizes]
    s_out = [np.zeros(n) for n in sizes]
    for j, block in enumerate(s.layers):
        el = unroll_layer(block, j, max_edges)
        np.add.at(s_out[j], el.from_flat, el.weights)
        np.add.at(s_in[j + 1], el.to_flat, el.weights)
    return [(s_in[k], s_out[k], s_in[k] + s_out[k]) for k in range(len(sizes))]


def oracle_node_incident_weights(s: NetworkSnapshot, layer: int, node: int,
                                 max_edges: int = DEFAULT_EDGE_CAP) -> np.ndarray:
    """All weights incident to one neuron (in-edges then out-edges)."""
    parts = []
    if layer > 0:
        el = unroll_layer(s.layers[layer - 1], layer - 1, max_edges)
        parts.append(el.weights[el.to_flat == node])
    if layer < s.n_blocks:
        el = unroll_layer(s.layers[layer], layer, max_edges)
        parts.append(el.weights[el.from_flat == node])
    return np.concatenate(parts) if parts else np.empty(0)


# ---------------------------------------------------------------------------
# exports


def export_edge_list(edges: EdgeList, format: str = "csv") -> bytes:
    """Serialize an edge list; ``csv`` or ``graph_exchange`` (GraphML XML)."""
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["from_layer", "from_index", "to_index", "weight"])
        for f, t, w in zip(edges.from_flat, edges.to_flat, edges.weights):
            writer.writerow([edges.layer_index, int(f), int(t), repr(float(w))])
        return buf.getvalue().encode("utf-8")
    if format == "graph_exchange":
        return _to_graphml(edges)
    raise ValueError(f"unknown export format {format!r}")


def _to_graphml(edges: EdgeList) -> bytes:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="w" for="edge" attr.name="weight" attr.type="double"/>',
        '  <graph id="layer%d" edgedefault="directed">' % edges.layer_index,
    ]
    for i in range(edges.from_size):
        lines.append(f'    <node id="L{edges.layer_index}_{i}"/>')
    for i in range(edges.to_size):
        lines.append(f'    <node id="L{edges.layer_index + 1}_{i}"/>')
    for f, t, w in zip(edges.from_flat, edges.to_flat, edges.weights):
        lines.append(
            f'    <edge source="L{edges.layer_index}_{int(f)}" '
            f'target="L{edges.layer_index + 1}_{int(t)}">'
            f'<data key="w">{escape(repr(float(w)))}</data></edge>'
        )
    lines.append("  </graph>")
    lines.append("</graphml>")
    return "\n".join(lines).encode("utf-8")


def read_edge_list_csv(data: bytes, from_size: int, to_size: int,
                       from_dims=None, to_dims=None) -> EdgeList:
    """Inverse of the CSV export (sizes are not stored in the CSV)."""
    text = data.decode("utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["from_layer", "from_index", "to_index", "weight"]:
        raise ValueError("not an edge-list CSV: bad header")
    body = rows[1:]
    layer_index = int(body[0][0]) if body else 0
    from_flat = np.array([int(r[1]) for r in body], dtype=np.int64)
    to_flat = np.array([int(r[2]) for r in body], dtype=np.int64)
    weights = np.array([float(r[3]) for r in body], dtype=np.float64)
    return EdgeList(
        layer_index=layer_index,
        from_size=from_size,
        to_size=to_size,
        from_flat=from_flat,
        to_flat=to_flat,
        weights=weights,
        from_dims=from_dims,
        to_dims=to_dims,
    )


# ---------------------------------------------------------------------------
# fast-path verification


def verify_snapshot(s: NetworkSnapshot, max_edges: int = DEFAULT_EDGE_CAP) -> list[dict]:
    """Compare the closed-form metrics against this oracle, block by block.

    Returns one dict per parameter block with the maximum absolute deviation
    over link stats and both strength vectors, plus the applicable tolerance
    (1e-12 for dense blocks, 1e-9 for conv).
    """
    from . import metrics as _metrics  # local import keeps the oracle standalone

    results = []
    for j, block in enumerate(s.layers):
        el = unroll_layer(block, j, max_edges)
        om = oracle_metrics(el)
        stats = _metrics.link_weight_stats(block)
        s_out_fast, s_in_fast = _metrics.block_side_strengths(block)
        dev = max(
            abs(stats.mu - om.mu),
            abs(stats.delta - om.delta),
            float(np.max(np.abs(s_out_fast - om.s_out))),
            float(np.max(np.abs(s_in_fast - om.s_in))),
        )
        tolerance = 1e-12 if isinstance(block, Dense) else 1e-9
        results.append(
            {
                "layer_index": j,
                "kind": block.kind,
                "n_edges": om.n_edges,
                "max_abs_deviation": dev,
                "tolerance": tolerance,
                "within_tolerance": bool(dev <= tolerance),
            }
        )
    return results
