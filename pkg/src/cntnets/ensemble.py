"""Ensemble and trajectory analysis over populations of metric records.

Ensemble analysis clusters the records of independently trained networks
into ten width-0.1 accuracy bins and summarizes the pooled per-layer
metric distributions (density histograms, mean/variance, skewness and
excess kurtosis) per bin, with histogram edges shared across bins of the
same (metric, layer) so the distributions are directly comparable.

Trajectory analysis orders the snapshots of a single network by accuracy
and reports per-layer fluctuation series with min/max spread, plus
per-snapshot strength distributions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .metrics import MetricRecord, SCHEMA_VERSION

ACCURACY_EDGES = np.arange(11) / 10.0
DEFAULT_MIN_POPULATION = 50
DEFAULT_HIST_BINS = 100

POOLABLE_METRICS = ("link_weights", "strength", "fluctuation")

_VAR_EPS = 1e-15  # below this variance, skewness/kurtosis are undefined


def accuracy_bin_index(accuracy: float) -> int:
    """Bin index in 0..9 for an accuracy in [0, 1]; the last bin is closed."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must be in [0, 1], got {accuracy}")
    idx = int(np.searchsorted(ACCURACY_EDGES, accuracy, side="right")) - 1
    return min(idx, 9)


@dataclass(frozen=True)
class AccuracyBins:
    """Ten accuracy bins of MetricRecords plus population bookkeeping."""

    edges: np.ndarray
    bins: tuple[tuple[MetricRecord, ...], ...]
    min_population: int = DEFAULT_MIN_POPULATION

    @property
    def counts(self) -> list[int]:
        return [len(b) for b in self.bins]

    @property
    def underpopulated(self) -> list[bool]:
        # flags occupied bins below the minimum population; empty bins are not flagged
        return [0 < len(b) < self.min_population for b in self.bins]

    def occupied(self) -> list[int]:
        return [i for i, b in enumerate(self.bins) if b]


def bin_by_accuracy(records, min_population: int = DEFAULT_MIN_POPULATION) -> AccuracyBins:
    """Assign records to bins; each bin is held in a canonical order
    (accuracy, seed, epoch, task_tag) so downstream reports are independent
    of the input ordering."""
    bins: list[list[MetricRecord]] = [[] for _ in range(10)]
    for rec in records:
        bins[accuracy_bin_index(rec.snapshot_meta.accuracy)].append(rec)
    key = lambda r: (r.snapshot_meta.accuracy, r.snapshot_meta.seed,
                     r.snapshot_meta.epoch, r.snapshot_meta.task_tag)
    return AccuracyBins(
        edges=ACCURACY_EDGES.copy(),
        bins=tuple(tuple(sorted(b, key=key)) for b in bins),
        min_population=min_population,
    )


def _record_label(i: int, rec: MetricRecord) -> str:
    return f"record[{i}] (seed={rec.snapshot_meta.seed}, epoch={rec.snapshot_meta.epoch})"


def _check_layer_compatible(records, layer: int, sizes) -> None:
    first = sizes(records[0])
    for i, rec in enumerate(records[1:], start=1):
        if sizes(rec) != first:
            raise ValueError(
                f"topology mismatch at layer {layer}: {_record_label(0, records[0])} "
                f"has size {first}, {_record_label(i, rec)} has size {sizes(rec)}"
            )


def pool_layer_metric(records, layer: int, metric: str, allow_empty: bool = False) -> np.ndarray:
    """Pool one metric of one layer across records into a sample vector.

    link_weights -> every stored weight sample of parameter block ``layer``
    strength     -> every total node strength of neuron layer ``layer``
    fluctuation  -> one scalar Y per record for neuron layer ``layer``
    """
    if metric not in POOLABLE_METRICS:
        raise ValueError(f"metric must be one of {POOLABLE_METRICS}, got {metric!r}")
    records = list(records)
    if not records:
        if allow_empty:
            return np.empty(0)
        raise ValueError("cannot pool an empty record list (pass allow_empty=True for [])")

    if metric == "strength":
        _check_layer_compatible(records, layer, lambda r: len(r.strengths[layer]))
        return np.concatenate([r.strengths[layer].s for r in records])
    if metric == "fluctuation":
        _check_layer_compatible(records, layer, lambda r: len(r.strengths[layer]))
        return np.array([r.fluctuations[layer].y for r in records])
    for i, r in enumerate(records):
        if r.link_weights is None:
            raise ValueError(
                f"{_record_label(i, r)} carries no link-weight samples; "
                "analyze snapshots with keep_weights=True to pool link weights"
            )
    _check_layer_compatible(records, layer, lambda r: r.link_weights[layer].size)
    return np.concatenate([r.link_weights[layer] for r in records])


# ---------------------------------------------------------------------------
# distribution summaries


@dataclass(frozen=True)
class DistributionSummary:
    """Histogram (density-normalized) plus moment statistics of a sample.

    ``skewness`` is Fisher-Pearson g1 = m3 / m2^1.5 and ``kurtosis`` is the
    excess g2 = m4 / m2^2 - 3 (normal -> 0); both are None when the variance
    is below 1e-15.
    """

    bin_edges: np.ndarray
    densities: np.ndarray
    mean: float
    variance: float
    skewness: float | None
    kurtosis: float | None
    n: int

    def to_dict(self) -> dict:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "densities": self.densities.tolist(),
            "mean": self.mean,
            "variance": self.variance,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "n": self.n,
        }


def central_moments(samples: np.ndarray) -> tuple[float, float, float, float]:
    """(mean, m2, m3, m4) with pairwise-compensated numpy summation."""
    x = np.asarray(samples, dtype=np.float64)
    mean = float(x.mean())
    d = x - mean
    d2 = d * d
    m2 = float(d2.mean())
    m3 = float((d2 * d).mean())
    m4 = float((d2 * d2).mean())
    return mean, m2, m3, m4


def summarize(samples, bin_count: int = DEFAULT_HIST_BINS, hist_range=None) -> DistributionSummary:
    """Density histogram and moment statistics of a sample vector.

    ``hist_range`` pins the histogram support; the report path uses it to
    share edges across accuracy bins.  A degenerate (constant) sample gets
    a symmetric unit-wide support so the density still integrates to 1.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 1:
        raise ValueError("summarize requires at least one sample")
    if bin_count < 1:
        raise ValueError(f"bin_count must be >= 1, got {bin_count}")
    if hist_range is None:
        lo, hi = float(x.min()), float(x.max())
    else:
        lo, hi = float(hist_range[0]), float(hist_range[1])
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    densities, edges = np.histogram(x, bins=bin_count, range=(lo, hi), density=True)
    mean, m2, m3, m4 = central_moments(x)
    if m2 < _VAR_EPS:
        skewness = kurtosis = None
    else:
        skewness = m3 / m2**1.5
        kurtosis = m4 / m2**2 - 3.0
    return DistributionSummary(
        bin_edges=edges,
        densities=densities,
        mean=mean,
        variance=m2,
        skewness=skewness,
        kurtosis=kurtosis,
        n=int(x.size),
    )


# ---------------------------------------------------------------------------
# ensemble report


@dataclass(frozen=True)
class EnsembleReport:
    """Per (metric, layer, accuracy bin) distribution summaries plus the
    trend statistics (pooled strength variance, mean fluctuation) and
    optional bootstrap spreads."""

    hist_bins: int
    bin_counts: list[int]
    underpopulated: list[bool]
    occupied: list[int]
    summaries: dict  # metric -> layer -> bin -> DistributionSummary
    trend: dict  # stat name -> layer -> bin -> float
    per_network_strength_variance: dict  # layer -> bin -> list of per-record variances
    bootstrap: dict | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "ensemble",
            "hist_bins": self.hist_bins,
            "accuracy_edges": ACCURACY_EDGES.tolist(),
            "bin_counts": self.bin_counts,
            "underpopulated": self.underpopulated,
            "occupied": self.occupied,
            "summaries": {
                metric: {
                    str(layer): {str(b): s.to_dict() for b, s in per_bin.items()}
                    for layer, per_bin in per_layer.items()
                }
                for metric, per_layer in self.summaries.items()
            },
            "trend": {
                name: {
                    str(layer): {str(b): v for b, v in per_bin.items()}
                    for layer, per_bin in per_layer.items()
                }
                for name, per_layer in self.trend.items()
            },
            "per_network_strength_variance": {
                str(layer): {str(b): v for b, v in per_bin.items()}
                for layer, per_bin in self.per_network_strength_variance.items()
            },
            "bootstrap": self.bootstrap,
        }


def _metric_layers(metric: str, sample: MetricRecord) -> range:
    if metric == "link_weights":
        return range(sample.n_blocks)
    return range(sample.n_neuron_layers)


def ensemble_report(
    bins: AccuracyBins,
    hist_bins: int = DEFAULT_HIST_BINS,
    bootstrap_rounds: int = 0,
    bootstrap_seed: int = 0,
) -> EnsembleReport:
    """Summarize every (metric, layer, occupied accuracy bin) cell.

    Histogram edges are shared across the accuracy bins of one
    (metric, layer) cell: the support is the min/max over the union of the
    occupied bins' samples.  Records pooled within a bin (not averaged per
    network); per-network strength variances are reported alongside.
    """
    occupied = bins.occupied()
    if not occupied:
        raise ValueError("ensemble report requires at least one non-empty accuracy bin")
    sample_rec = bins.bins[occupied[0]][0]

    metrics = list(POOLABLE_METRICS)
    if sample_rec.link_weights is None:
        metrics.remove("link_weights")

    summaries: dict = {m: {} for m in metrics}
    for metric in metrics:
        for layer in _metric_layers(metric, sample_rec):
            pooled = {
                b: pool_layer_metric(bins.bins[b], layer, metric) for b in occupied
            }
            lo = min(float(v.min()) for v in pooled.values())
            hi = max(float(v.max()) for v in pooled.values())
            summaries[metric][layer] = {
                b: summarize(v, hist_bins, (lo, hi)) for b, v in pooled.items()
            }

    trend: dict = {"pooled_strength_variance": {}, "mean_fluctuation": {}}
    per_network: dict = {}
    for layer in range(sample_rec.n_neuron_layers):
        trend["pooled_strength_variance"][layer] = {
            b: float(np.var(pool_layer_metric(bins.bins[b], layer, "strength")))
            for b in occupied
        }
        trend["mean_fluctuation"][layer] = {
            b: float(np.mean(pool_layer_metric(bins.bins[b], layer, "fluctuation")))
            for b in occupied
        }
        per_network[layer] = {
            b: [float(np.var(r.strengths[layer].s)) for r in bins.bins[b]]
            for b in occupied
        }

    bootstrap = None
    if bootstrap_rounds > 0:
        rng = np.random.Generator(
            np.random.Philox(key=np.array([bootstrap_seed, 3], dtype=np.uint64))
        )
        spread: dict = {}
        for layer in range(sample_rec.n_neuron_layers):
            spread[str(layer)] = {}
            for b in occupied:
                recs = bins.bins[b]
                variances = []
                for _ in range(bootstrap_rounds):
                    idx = rng.integers(0, len(recs), size=len(recs))
                    resampled = [recs[i] for i in idx]
                    variances.append(
                        float(np.var(pool_layer_metric(resampled, layer, "strength")))
                    )
                spread[str(layer)][str(b)] = {
                    "rounds": bootstrap_rounds,
                    "pooled_strength_variance_min": min(variances),
                    "pooled_strength_variance_max": max(variances),
                    "pooled_strength_variance_std": float(np.std(variances)),
                }
        bootstrap = spread

    return EnsembleReport(
        hist_bins=hist_bins,
        bin_counts=bins.counts,
        underpopulated=bins.underpopulated,
        occupied=occupied,
        summaries=summaries,
        trend=trend,
        per_network_strength_variance=per_network,
        bootstrap=bootstrap,
    )


def ensemble_report_csv(report: EnsembleReport) -> str:
    """Tidy CSV serialization: metric, layer, accuracy_bin, stat_name, value."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "layer", "accuracy_bin", "stat_name", "value"])
    for metric in sorted(report.summaries):
        for layer in sorted(report.summaries[metric]):
            for b in sorted(report.summaries[metric][layer]):
                s = report.summaries[metric][layer][b]
                for stat in ("n", "mean", "variance", "skewness", "kurtosis"):
                    v = getattr(s, stat)
                    writer.writerow([metric, layer, b, stat, "" if v is None else repr(v)])
    for name in sorted(report.trend):
        for layer in sorted(report.trend[name]):
            for b, v in sorted(report.trend[name][layer].items()):
                writer.writerow(["trend", layer, b, name, repr(v)])
    return buf.getvalue()


def distribution_csv(report: EnsembleReport, metric: str) -> str:
    """Plot-ready CSV for one metric family: one row per (layer, bin)
    distribution, histogram arrays space-joined."""
    if metric not in report.summaries:
        raise ValueError(f"report has no {metric!r} summaries")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["metric", "layer", "accuracy_bin", "n", "mean", "variance",
         "skewness", "kurtosis", "hist_edges", "hist_densities"]
    )
    for layer in sorted(report.summaries[metric]):
        for b in sorted(report.summaries[metric][layer]):
            s = report.summaries[metric][layer][b]
            writer.writerow(
                [metric, layer, b, s.n, repr(s.mean), repr(s.variance),
                 "" if s.skewness is None else repr(s.skewness),
                 "" if s.kurtosis is None else repr(s.kurtosis),
                 " ".join(repr(e) for e in s.bin_edges.tolist()),
                 " ".join(repr(d) for d in s.densities.tolist())]
            )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# trajectory report (individual analysis)


@dataclass(frozen=True)
class TrajectoryReport:
    """Metric trajectory of a single network across training snapshots.

    ``fluctuation_series`` maps layer -> list of points ordered by
    accuracy; snapshots sharing an accuracy value are grouped, and each
    point carries the group's mean/min/max Y (singleton groups have zero
    spread).  ``strength_summaries`` maps layer -> one summary per
    snapshot, histogram edges shared within the layer.
    """

    seed: int
    task_tag: str
    accuracies: list[float]
    fluctuation_series: dict  # layer -> list of dicts
    strength_summaries: dict  # layer -> list of (accuracy, DistributionSummary)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "trajectory",
            "seed": self.seed,
            "task_tag": self.task_tag,
            "accuracies": self.accuracies,
            "fluctuation_series": {
                str(layer): points for layer, points in self.fluctuation_series.items()
            },
            "strength_summaries": {
                str(layer): [
                    {"accuracy": a, **s.to_dict()} for a, s in entries
                ]
                for layer, entries in self.strength_summaries.items()
            },
        }

    def errorbar_rows(self) -> list[tuple]:
        """(layer, accuracy, y, spread_lo, spread_hi) rows for plotting."""
        rows = []
        for layer in sorted(self.fluctuation_series):
            for p in self.fluctuation_series[layer]:
                rows.append((layer, p["accuracy"], p["y"], p["y_min"], p["y_max"]))
        return rows


def trajectory_report(records, hist_bins: int = DEFAULT_HIST_BINS) -> TrajectoryReport:
    """Individual analysis over ordered snapshots of one network."""
    records = list(records)
    if len(records) < 2:
        raise ValueError("trajectory analysis requires at least 2 snapshots")
    first = records[0]
    ident = (first.snapshot_meta.seed, first.snapshot_meta.task_tag, first.neuron_layer_sizes())
    for i, rec in enumerate(records[1:], start=1):
        got = (rec.snapshot_meta.seed, rec.snapshot_meta.task_tag, rec.neuron_layer_sizes())
        if got != ident:
            raise ValueError(
                f"mixed network identities: {_record_label(0, first)} vs {_record_label(i, rec)}"
            )

    ordered = sorted(records, key=lambda r: r.snapshot_meta.accuracy)
    accuracies = [r.snapshot_meta.accuracy for r in ordered]
    groups: list[tuple[float, list[MetricRecord]]] = []
    for rec in ordered:
        a = rec.snapshot_meta.accuracy
        if groups and groups[-1][0] == a:
            groups[-1][1].append(rec)
        else:
            groups.append((a, [rec]))

    n_layers = first.n_neuron_layers
    fluct_series: dict = {}
    for layer in range(n_layers):
        points = []
        for a, group in groups:
            ys = [r.fluctuations[layer].y for r in group]
            points.append(
                {"accuracy": a, "y": float(np.mean(ys)),
                 "y_min": float(min(ys)), "y_max": float(max(ys)), "n": len(ys)}
            )
        fluct_series[layer] = points

    strength_summaries: dict = {}
    for layer in range(n_layers):
        values = [r.strengths[layer].s for r in ordered]
        lo = min(float(v.min()) for v in values)
        hi = max(float(v.max()) for v in values)
        strength_summaries[layer] = [
            (rec.snapshot_meta.accuracy, summarize(v, hist_bins, (lo, hi)))
            for rec, v in zip(ordered, values)
        ]

    return TrajectoryReport(
        seed=first.snapshot_meta.seed,
        task_tag=first.snapshot_meta.task_tag,
        accuracies=accuracies,
        fluctuation_series=fluct_series,
        strength_summaries=strength_summaries,
    )


def trajectory_errorbar_csv(report: TrajectoryReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "accuracy", "y", "spread_lo", "spread_hi"])
    for layer, a, y, lo, hi in report.errorbar_rows():
        writer.writerow([layer, repr(a), repr(y), repr(lo), repr(hi)])
    return buf.getvalue()
