"""Complex-network metrics for feed-forward neural network weight snapshots.

Core model: a trained network is a directed weighted bipartite graph whose
vertices are neurons and whose edges carry the learned weights.  The
library computes link-weight moments, node strengths, layer fluctuations
and node disparities over single snapshots and accuracy-binned ensembles,
with a closed-form fast path for convolutional layers verified against a
brute-force graph-expansion oracle.
"""

from .snapshot import (
    Conv2D,
    Dense,
    NetworkSnapshot,
    NeuronId,
    SnapshotFormatError,
    SnapshotMeta,
    SnapshotValidationError,
    flatten_coords,
    load_snapshot,
    neuron_count,
    read_snapshot,
    save_snapshot,
    snapshot_from_json,
    snapshot_to_json,
    strip_output_softmax,
    unflatten_index,
    write_snapshot,
)
from .metrics import (
    LayerFluctuation,
    LayerLinkStats,
    MetricRecord,
    NodeDisparity,
    StrengthVector,
    analyze_snapshot,
    disparities_for_snapshot,
    layer_fluctuation,
    link_weight_stats,
    metric_record_from_json,
    metric_record_to_json,
    node_disparity,
    node_strength_conv,
    node_strength_dense,
    strengths_for_snapshot,
)
from .oracle import (
    DEFAULT_EDGE_CAP,
    EdgeCapError,
    EdgeList,
    OracleMetrics,
    export_edge_list,
    oracle_metrics,
    oracle_snapshot_strengths,
    unroll_layer,
    verify_snapshot,
)
from .ensemble import (
    AccuracyBins,
    DistributionSummary,
    EnsembleReport,
    TrajectoryReport,
    accuracy_bin_index,
    bin_by_accuracy,
    ensemble_report,
    pool_layer_metric,
    summarize,
    trajectory_report,
)
from .trainer import (
    Dataset,
    PopulationMember,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    forward,
    generate_population,
    init_network,
    train,
)
from .datasets import (
    gaussian_blobs,
    load_bundled_digits,
    load_digits_csv,
    load_idx_dataset,
    load_idx_images,
    load_idx_labels,
    train_eval_split,
)

__version__ = "0.1.0"
