"""Graph metrics over snapshots: link-weight moments, node strength,
layer fluctuation, node disparity.

Conventions
-----------
* Parameter block ``j`` connects neuron layer ``j`` to neuron layer
  ``j + 1``; a snapshot with ``B`` blocks spans ``B + 1`` neuron layers.
* In-strength of a neuron is the sum of weights on its incoming edges,
  out-strength the sum on outgoing edges; total strength is their sum.
  Input-layer neurons have in-strength 0, output-layer neurons have
  out-strength 0.  Biases never enter any metric.
* Layer fluctuation is the population standard deviation of total
  strengths within one neuron layer.
* Conv layers are treated through their unrolled bipartite graph: padded
  positions contribute no edge, and link-weight statistics count each
  kernel entry once per edge it realizes (its multiplicity), matching the
  brute-force expansion in :mod:`cntnets.oracle`.

The conv computations never materialize the unrolled graph.  Neurons are
grouped into boundary classes (rows/columns whose in-bounds kernel-offset
pattern is identical); per-class sums are computed once over the kernel
and broadcast back, so the cost is O(classes x kernel volume) plus one
O(1)-per-neuron gather, regardless of spatial size.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .snapshot import (
    Conv2D,
    Dense,
    LayerWeights,
    NetworkSnapshot,
    SnapshotMeta,
    _meta_from_dict,
    _meta_to_dict,
)

DISPARITY_EPS = 1e-12

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LayerLinkStats:
    """Mean and population variance of one block's link weights."""

    layer_index: int
    mu: float
    delta: float
    n_links: int


@dataclass(frozen=True)
class StrengthVector:
    """Per-neuron strengths for one neuron layer; s = s_in + s_out."""

    layer_index: int
    s_in: np.ndarray
    s_out: np.ndarray
    s: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        s_in = np.asarray(self.s_in, dtype=np.float64)
        s_out = np.asarray(self.s_out, dtype=np.float64)
        if s_in.shape != s_out.shape or s_in.ndim != 1:
            raise ValueError("s_in and s_out must be 1-D vectors of equal length")
        object.__setattr__(self, "s_in", s_in)
        object.__setattr__(self, "s_out", s_out)
        object.__setattr__(self, "s", s_in + s_out)

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class LayerFluctuation:
    layer_index: int
    y: float


@dataclass(frozen=True)
class NodeDisparity:
    """Per-neuron disparity for one neuron layer; invalid entries are NaN
    with ``valid`` False (near-zero total strength)."""

    layer_index: int
    values: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class MetricRecord:
    """All metric families for one snapshot.

    ``link_weights`` optionally keeps the flattened raw weight samples per
    parameter block (unique kernel entries for conv blocks) so ensemble
    pooling works from records alone.
    """

    snapshot_meta: SnapshotMeta
    link_stats: tuple[LayerLinkStats, ...]
    strengths: tuple[StrengthVector, ...]
    fluctuations: tuple[LayerFluctuation, ...]
    disparities: tuple[NodeDisparity, ...] | None = None
    link_weights: tuple[np.ndarray, ...] | None = None

    @property
    def n_blocks(self) -> int:
        return len(self.link_stats)

    @property
    def n_neuron_layers(self) -> int:
        return len(self.strengths)

    def neuron_layer_sizes(self) -> list[int]:
        return [len(sv) for sv in self.strengths]


# ---------------------------------------------------------------------------
# boundary-class machinery for conv layers


def _outward_inbounds(n_positions: int, k: int, stride: int, pad_before: int,
                      n_source: int) -> np.ndarray:
    """M[p, o] = True iff output position p reaches an in-bounds source cell
    through kernel offset o (one spatial axis)."""
    p = np.arange(n_positions)[:, None]
    o = np.arange(k)[None, :]
    src = p * stride - pad_before + o
    return (src >= 0) & (src < n_source)


def _inward_inbounds(n_source: int, k: int, stride: int, pad_before: int,
                     n_positions: int) -> np.ndarray:
    """M[r, o] = True iff source cell r feeds some output position through
    kernel offset o (one spatial axis)."""
    r = np.arange(n_source)[:, None]
    o = np.arange(k)[None, :]
    q, rem = np.divmod(r + pad_before - o, stride)
    return (rem == 0) & (q >= 0) & (q < n_positions)


def _classed_sum(m_rows: np.ndarray, m_cols: np.ndarray, per_offset: np.ndarray) -> np.ndarray:
    """Broadcast per-boundary-class kernel sums back to a full spatial map.

    m_rows: (H, KH) bool, m_cols: (W, KW) bool, per_offset: (KH, KW, C).
    Returns (H, W, C).  Rows/columns with identical offset patterns share one
    computed class; only the distinct classes touch the kernel.
    """
    u_rows, inv_rows = np.unique(m_rows, axis=0, return_inverse=True)
    u_cols, inv_cols = np.unique(m_cols, axis=0, return_inverse=True)
    core = np.einsum(
        "ak,bl,klc->abc",
        u_rows.astype(np.float64),
        u_cols.astype(np.float64),
        per_offset,
    )
    return core[inv_rows.reshape(-1)][:, inv_cols.reshape(-1), :]


def _channel_major_flat(spatial_map: np.ndarray) -> np.ndarray:
    # (h, w, c) -> flat vector in (channel, row, col) order
    return np.moveaxis(spatial_map, 2, 0).reshape(-1)


def _conv_side_strengths(conv: Conv2D, kernel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(out-strength of input neurons, in-strength of output neurons),
    both flattened channel-major, for an arbitrary kernel tensor with the
    geometry of ``conv``."""
    kh, kw, c_in, c_out = kernel.shape
    h, w, _ = conv.input_dims
    sh, sw = conv.stride
    pt, pl = conv.pad_before()
    h_out, w_out = conv.output_spatial()

    m_out_rows = _outward_inbounds(h_out, kh, sh, pt, h)
    m_out_cols = _outward_inbounds(w_out, kw, sw, pl, w)
    s_in_map = _classed_sum(m_out_rows, m_out_cols, kernel.sum(axis=2))

    m_in_rows = _inward_inbounds(h, kh, sh, pt, h_out)
    m_in_cols = _inward_inbounds(w, kw, sw, pl, w_out)
    s_out_map = _classed_sum(m_in_rows, m_in_cols, kernel.sum(axis=3))

    return _channel_major_flat(s_out_map), _channel_major_flat(s_in_map)


def block_side_strengths(layer: LayerWeights, squared: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Strength contributions of one block: (out-strengths of its input
    side, in-strengths of its output side).

    With ``squared`` the sums run over squared weights (used by disparity).
    """
    if isinstance(layer, Dense):
        w = layer.weights**2 if squared else layer.weights
        return w.sum(axis=1), w.sum(axis=0)
    kernel = layer.kernel**2 if squared else layer.kernel
    return _conv_side_strengths(layer, kernel)


def node_strength_conv(conv: Conv2D, role: str) -> np.ndarray:
    """Strength vector of a conv block's neurons on one side.

    role = "as_input_layer"  -> out-strength per input neuron
    role = "as_output_layer" -> in-strength per output neuron
    """
    s_out, s_in = block_side_strengths(conv)
    if role == "as_input_layer":
        return s_out
    if role == "as_output_layer":
        return s_in
    raise ValueError(f"role must be 'as_input_layer' or 'as_output_layer', got {role!r}")


def node_strength_dense(prev: Dense | None, nxt: Dense | None, k: int) -> tuple[float, float, float]:
    """(s_in, s_out, s) for neuron k sitting between two dense blocks.

    ``prev`` is the block feeding the neuron, ``nxt`` the block it feeds.
    Pass None at the network boundary: missing side contributes 0.
    """
    if prev is None and nxt is None:
        raise ValueError("at least one adjacent block is required")
    if prev is not None and nxt is not None and prev.weights.shape[1] != nxt.weights.shape[0]:
        raise ValueError("prev output count does not match next input count")
    size = prev.weights.shape[1] if prev is not None else nxt.weights.shape[0]
    if not 0 <= k < size:
        raise IndexError(f"neuron index {k} out of range for layer of size {size}")
    s_in = float(prev.weights[:, k].sum()) if prev is not None else 0.0
    s_out = float(nxt.weights[k, :].sum()) if nxt is not None else 0.0
    return s_in, s_out, s_in + s_out


def strengths_for_snapshot(s: NetworkSnapshot) -> list[StrengthVector]:
    """One StrengthVector per neuron layer, boundary layers included."""
    sides = [block_side_strengths(b) for b in s.layers]
    sizes = s.neuron_layer_sizes()
    out = []
    for k, size in enumerate(sizes):
        s_out = sides[k][0] if k < len(sides) else np.zeros(size)
        s_in = sides[k - 1][1] if k > 0 else np.zeros(size)
        out.append(StrengthVector(layer_index=k, s_in=s_in, s_out=s_out))
    return out


def layer_fluctuation(sv) -> float:
    """Population standard deviation of a layer's total strengths."""
    values = sv.s if isinstance(sv, StrengthVector) else np.asarray(sv, dtype=np.float64)
    if values.size == 0:
        raise ValueError("layer fluctuation of an empty strength vector is undefined")
    m = values.mean()
    return float(np.sqrt(((values - m) ** 2).mean()))


def node_disparity(incident_weights, eps: float = DISPARITY_EPS) -> float | None:
    """Sum of (w / s)^2 over one node's incident weights, s their sum.

    Returns None when |s| < eps: with signed weights the denominator can
    cancel to zero, which is exactly the failure mode this flag guards.
    """
    w = np.asarray(incident_weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("node disparity of an empty weight vector is undefined")
    s = w.sum()
    if abs(s) < eps:
        return None
    return float(((w / s) ** 2).sum())


def link_weight_stats(layer: LayerWeights, layer_index: int = 0,
                      per_unique_weight: bool = False) -> LayerLinkStats:
    """Mean and population variance of a block's link weights.

    Dense blocks: all matrix entries.  Conv blocks: the unrolled graph's
    edge multiset, i.e. each kernel entry weighted by the number of edges
    it realizes.  ``per_unique_weight`` switches conv blocks to plain
    once-per-entry kernel statistics for comparison.
    """
    if isinstance(layer, Dense):
        w = layer.weights.ravel()
        mu = float(w.mean())
        return LayerLinkStats(layer_index, mu, float(((w - mu) ** 2).mean()), w.size)

    kernel = layer.kernel
    if per_unique_weight:
        w = kernel.ravel()
        mu = float(w.mean())
        return LayerLinkStats(layer_index, mu, float(((w - mu) ** 2).mean()), w.size)

    kh, kw, c_in, c_out = kernel.shape
    h, w_dim, _ = layer.input_dims
    sh, sw = layer.stride
    pt, pl = layer.pad_before()
    h_out, w_out = layer.output_spatial()
    mult_rows = _outward_inbounds(h_out, kh, sh, pt, h).sum(axis=0)
    mult_cols = _outward_inbounds(w_out, kw, sw, pl, w_dim).sum(axis=0)
    mult = np.outer(mult_rows, mult_cols).astype(np.float64)  # edges per (kh, kw) offset
    n = float(mult.sum()) * c_in * c_out
    mu = float((mult * kernel.sum(axis=(2, 3))).sum() / n)
    delta = float((mult * ((kernel - mu) ** 2).sum(axis=(2, 3))).sum() / n)
    return LayerLinkStats(layer_index, mu, delta, int(n))


def disparities_for_snapshot(s: NetworkSnapshot, eps: float = DISPARITY_EPS) -> list[NodeDisparity]:
    """Per-neuron disparity over all incident edges (in and out).

    Uses the identity sum((w/s)^2) = (sum of squared incident weights) / s^2,
    so the conv fast path applies unchanged to the squared kernel.
    """
    lin = [block_side_strengths(b) for b in s.layers]
    sq = [block_side_strengths(b, squared=True) for b in s.layers]
    sizes = s.neuron_layer_sizes()
    out = []
    for k, size in enumerate(sizes):
        s_tot = np.zeros(size)
        q_tot = np.zeros(size)
        if k < len(lin):
            s_tot += lin[k][0]
            q_tot += sq[k][0]
        if k > 0:
            s_tot += lin[k - 1][1]
            q_tot += sq[k - 1][1]
        valid = np.abs(s_tot) >= eps
        values = np.full(size, np.nan)
        np.divide(q_tot, s_tot**2, out=values, where=valid)
        out.append(NodeDisparity(layer_index=k, values=values, valid=valid))
    return out


def analyze_snapshot(
    s: NetworkSnapshot,
    with_disparity: bool = False,
    keep_weights: bool = True,
    disparity_eps: float = DISPARITY_EPS,
) -> MetricRecord:
    """Compute every metric family for one snapshot.

    Disparity is off by default (its zero-denominator failure mode makes it
    a diagnostic, not a headline metric).  ``keep_weights`` attaches raw
    weight samples per block so ensemble pooling can run from the record.
    """
    link_stats = tuple(
        link_weight_stats(b, layer_index=j) for j, b in enumerate(s.layers)
    )
    strengths = tuple(strengths_for_snapshot(s))
    fluctuations = tuple(
        LayerFluctuation(sv.layer_index, layer_fluctuation(sv)) for sv in strengths
    )
    disparities = tuple(disparities_for_snapshot(s, disparity_eps)) if with_disparity else None
    link_weights = None
    if keep_weights:
        link_weights = tuple(
            (b.weights if isinstance(b, Dense) else b.kernel).ravel().copy()
            for b in s.layers
        )
    return MetricRecord(
        snapshot_meta=s.meta,
        link_stats=link_stats,
        strengths=strengths,
        fluctuations=fluctuations,
        disparities=disparities,
        link_weights=link_weights,
    )


# ---------------------------------------------------------------------------
# serialization


def metric_record_to_dict(rec: MetricRecord) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "snapshot_meta": _meta_to_dict(rec.snapshot_meta),
        "link_stats": [
            {"layer_index": ls.layer_index, "mu": ls.mu, "delta": ls.delta, "n_links": ls.n_links}
            for ls in rec.link_stats
        ],
        "strengths": [
            {
                "layer_index": sv.layer_index,
                "s_in": sv.s_in.tolist(),
                "s_out": sv.s_out.tolist(),
                "s": sv.s.tolist(),
            }
            for sv in rec.strengths
        ],
        "fluctuations": [
            {"layer_index": lf.layer_index, "y": lf.y} for lf in rec.fluctuations
        ],
    }
    if rec.disparities is not None:
        doc["disparities"] = [
            {
                "layer_index": nd.layer_index,
                "values": [v if ok else None for v, ok in zip(nd.values.tolist(), nd.valid.tolist())],
                "valid": nd.valid.tolist(),
            }
            for nd in rec.disparities
        ]
    if rec.link_weights is not None:
        doc["link_weights"] = [
            {"layer_index": j, "values": w.tolist()} for j, w in enumerate(rec.link_weights)
        ]
    return doc


def metric_record_from_dict(doc: dict) -> MetricRecord:
    disparities = None
    if "disparities" in doc:
        disparities = tuple(
            NodeDisparity(
                layer_index=d["layer_index"],
                values=np.array(
                    [np.nan if v is None else v for v in d["values"]], dtype=np.float64
                ),
                valid=np.array(d["valid"], dtype=bool),
            )
            for d in doc["disparities"]
        )
    link_weights = None
    if "link_weights" in doc:
        link_weights = tuple(
            np.array(d["values"], dtype=np.float64) for d in doc["link_weights"]
        )
    return MetricRecord(
        snapshot_meta=_meta_from_dict(doc["snapshot_meta"]),
        link_stats=tuple(
            LayerLinkStats(d["layer_index"], d["mu"], d["delta"], d["n_links"])
            for d in doc["link_stats"]
        ),
        strengths=tuple(
            StrengthVector(
                layer_index=d["layer_index"],
                s_in=np.array(d["s_in"], dtype=np.float64),
                s_out=np.array(d["s_out"], dtype=np.float64),
            )
            for d in doc["strengths"]
        ),
        fluctuations=tuple(
            LayerFluctuation(d["layer_index"], d["y"]) for d in doc["fluctuations"]
        ),
        disparities=disparities,
        link_weights=link_weights,
    )


def metric_record_to_json(rec: MetricRecord) -> str:
    return json.dumps(metric_record_to_dict(rec), sort_keys=True, separators=(",", ":"))


def metric_record_from_json(text: str) -> MetricRecord:
    return metric_record_from_dict(json.loads(text))


CSV_COLUMNS = [
    "snapshot", "family", "layer", "neuron",
    "mu", "delta", "s_in", "s_out", "s", "y", "disparity", "disparity_valid",
]


def records_to_csv(named_records: list[tuple[str, MetricRecord]]) -> str:
    """Flat CSV: one row per neuron for strengths/disparities, one row per
    layer for link stats and fluctuations."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)

    def row(name, family, layer, neuron="", **vals):
        writer.writerow(
            [name, family, layer, neuron]
            + [repr(vals[c]) if c in vals else "" for c in CSV_COLUMNS[4:]]
        )

    for name, rec in named_records:
        for ls in rec.link_stats:
            row(name, "link_stats", ls.layer_index, mu=ls.mu, delta=ls.delta)
        for sv in rec.strengths:
            for i in range(len(sv)):
                row(name, "strength", sv.layer_index, i,
                    s_in=float(sv.s_in[i]), s_out=float(sv.s_out[i]), s=float(sv.s[i]))
        for lf in rec.fluctuations:
            row(name, "fluctuation", lf.layer_index, y=lf.y)
        if rec.disparities is not None:
            for nd in rec.disparities:
                for i in range(len(nd.values)):
                    writer.writerow(
                        [name, "disparity", nd.layer_index, i, "", "", "", "", "", "",
                         repr(float(nd.values[i])) if nd.valid[i] else "",
                         repr(bool(nd.valid[i]))]
                    )
    return buf.getvalue()
