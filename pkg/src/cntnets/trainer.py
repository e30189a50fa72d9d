"""Minimal fully connected ReLU classifier trainer.

Purpose-built to generate accuracy-tagged snapshot populations: plain
mini-batch SGD on softmax cross-entropy, deterministic given the config
seed, with snapshot emission schedules and early stopping at target
accuracies.  Convolutional training is out of scope; conv metrics run on
imported or synthetic snapshots.

Determinism: all randomness flows from numpy's Philox bit generator
(counter-based, 64-bit words), keyed with (seed, stream).  Stream 0 draws
the initial weights (layer by layer, C order), stream 1 the per-epoch
shuffle permutations, stream 2 is reserved for dataset splits and
synthetic data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .snapshot import Dense, NetworkSnapshot, SnapshotMeta

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_DATA = 2

SNAPSHOT_SCHEDULES = ("every_epoch", "on_accuracy_crossings")


def philox_rng(seed: int, stream: int) -> np.random.Generator:
    """Pinned counter-based generator; identical streams on every platform."""
    key = np.array([seed % 2**64, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    layer_sizes: tuple[int, ...]
    init_family: str = "normal"
    init_scale: float = 0.05
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 30
    early_stop_at_accuracy: float | None = None
    seed: int = 0
    snapshot_schedule: str = "every_epoch"
    schedule_thresholds: tuple[float, ...] = ()
    eval_every_batches: int | None = None
    task_tag: str = "desk"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output sizes")
        if any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        if self.init_family not in ("normal", "uniform"):
            raise ValueError(f"init_family must be 'normal' or 'uniform', got {self.init_family!r}")
        for name in ("init_scale", "learning_rate", "batch_size", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.early_stop_at_accuracy is not None and not 0.0 <= self.early_stop_at_accuracy <= 1.0:
            raise ValueError("early_stop_at_accuracy must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.snapshot_schedule not in SNAPSHOT_SCHEDULES:
            raise ValueError(f"snapshot_schedule must be one of {SNAPSHOT_SCHEDULES}")
        object.__setattr__(self, "schedule_thresholds", tuple(float(t) for t in self.schedule_thresholds))
        if self.eval_every_batches is not None and self.eval_every_batches < 1:
            raise ValueError("eval_every_batches must be >= 1 when set")


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "layer_sizes": list(cfg.layer_sizes),
        "init_family": cfg.init_family,
        "init_scale": cfg.init_scale,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "early_stop_at_accuracy": cfg.early_stop_at_accuracy,
        "seed": cfg.seed,
        "snapshot_schedule": cfg.snapshot_schedule,
        "schedule_thresholds": list(cfg.schedule_thresholds),
        "eval_every_batches": cfg.eval_every_batches,
        "task_tag": cfg.task_tag,
    }


def train_config_from_dict(doc: dict) -> TrainConfig:
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
    if "layer_sizes" not in doc:
        raise ValueError("TrainConfig requires layer_sizes")
    kwargs = dict(doc)
    kwargs["layer_sizes"] = tuple(kwargs["layer_sizes"])
    if "schedule_thresholds" in kwargs:
        kwargs["schedule_thresholds"] = tuple(kwargs["schedule_thresholds"])
    return TrainConfig(**kwargs)


@dataclass(frozen=True)
class Dataset:
    """Classification data with inputs normalized into the unit interval."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"inputs must be a non-empty (n, d) matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain NaN or Inf")
        lo, hi = float(x.min()), float(x.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"inputs must lie in [0, 1], found range [{lo}, {hi}]")
        if y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def subset(self, idx) -> "Dataset":
        return Dataset(inputs=self.inputs[idx], labels=self.labels[idx])


# ---------------------------------------------------------------------------
# forward / backward


def _as_arrays(s: NetworkSnapshot) -> tuple[list[np.ndarray], list[np.ndarray]]:
    for b in s.layers:
        if not isinstance(b, Dense):
            raise ValueError("the trainer handles fully connected snapshots only")
    return [b.weights.copy() for b in s.layers], [b.bias.copy() for b in s.layers]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_arrays(ws, bs, x_batch):
    """Returns (pre-activations per hidden layer, activations incl. input, logits)."""
    a = x_batch
    acts = [a]
    pres = []
    for w, b in zip(ws[:-1], bs[:-1]):
        pre = a @ w + b
        pres.append(pre)
        a = np.maximum(pre, 0.0)
        acts.append(a)
    logits = a @ ws[-1] + bs[-1]
    return acts, pres, logits


def forward(s: NetworkSnapshot, x) -> tuple[np.ndarray, int]:
    """Single-input forward pass: (softmax probabilities, predicted class).

    Hidden layers are ReLU; the output layer is a max-stabilized softmax.
    """
    ws, bs = _as_arrays(s)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != ws[0].shape[0]:
        raise ValueError(f"input dimension {x.shape[1]} does not match first layer {ws[0].shape[0]}")
    _, _, logits = _forward_arrays(ws, bs, x)
    probs = _softmax(logits)[0]
    return probs, int(np.argmax(logits[0]))


def loss_and_gradients(ws, bs, x_batch, labels):
    """Mean softmax cross-entropy and its gradients for one mini-batch."""
    n = x_batch.shape[0]
    acts, pres, logits = _forward_arrays(ws, bs, x_batch)
    probs = _softmax(logits)
    with np.errstate(divide="ignore"):  # an exactly-zero probability is divergence, reported upstream
        loss = float(-np.log(probs[np.arange(n), labels]).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads_w = [None] * len(ws)
    grads_b = [None] * len(bs)
    delta = dlogits
    for i in range(len(ws) - 1, 0, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        delta = (delta @ ws[i].T) * (pres[i - 1] > 0)
    grads_w[0] = acts[0].T @ delta
    grads_b[0] = delta.sum(axis=0)
    return loss, grads_w, grads_b


def _evaluate_arrays(ws, bs, data: Dataset) -> float:
    _, _, logits = _forward_arrays(ws, bs, data.inputs)
    return float((np.argmax(logits, axis=1) == data.labels).mean())


def evaluate(s: NetworkSnapshot, data: Dataset) -> float:
    ws, bs = _as_arrays(s)
    return _evaluate_arrays(ws, bs, data)


# ---------------------------------------------------------------------------
# initialization and training


def init_network(cfg: TrainConfig, eval_data: Dataset | None = None) -> NetworkSnapshot:
    """Fresh snapshot: weights from the configured family, biases zero.

    accuracy is measured on ``eval_data`` when given, else recorded as 0.0.
    """
    rng = philox_rng(cfg.seed, STREAM_INIT)
    layers = []
    for n_in, n_out in zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:]):
        if cfg.init_family == "normal":
            w = rng.normal(0.0, cfg.init_scale, size=(n_in, n_out))
        else:
            w = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_in, n_out))
        layers.append(Dense(weights=w, bias=np.zeros(n_out)))
    snap = NetworkSnapshot(
        layers=tuple(layers),
        meta=SnapshotMeta(
            accuracy=0.0,
            epoch=0,
            init_family=cfg.init_family,
            init_scale=cfg.init_scale,
            seed=cfg.seed,
            task_tag=cfg.task_tag,
            output_activation="softmax",
        ),
    )
    if eval_data is not None:
        snap = replace(snap, meta=replace(snap.meta, accuracy=evaluate(snap, eval_data)))
    return snap


def _snapshot_from_arrays(ws, bs, cfg: TrainConfig, epoch: int, accuracy: float) -> NetworkSnapshot:
    layers = tuple(Dense(weights=w.copy(), bias=b.copy()) for w, b in zip(ws, bs))
    return NetworkSnapshot(
        layers=layers,
        meta=SnapshotMeta(
            accuracy=accuracy,
            epoch=epoch,
            init_family=cfg.init_family,
            init_scale=cfg.init_scale,
            seed=cfg.seed,
            task_tag=cfg.task_tag,
            output_activation="softmax",
        ),
    )


def _check_data(cfg: TrainConfig, data: Dataset, name: str) -> None:
    if data.dim != cfg.layer_sizes[0]:
        raise ValueError(
            f"{name} dimension {data.dim} does not match input layer size {cfg.layer_sizes[0]}"
        )
    if data.n_classes > cfg.layer_sizes[-1]:
        raise ValueError(
            f"{name} has {data.n_classes} classes but the output layer only {cfg.layer_sizes[-1]} units"
        )


def train(cfg: TrainConfig, data: Dataset, eval_data: Dataset) -> list[NetworkSnapshot]:
    """Mini-batch SGD; returns the snapshots emitted by the schedule.

    Evaluation runs on ``eval_data`` after every epoch (and, when
    ``cfg.eval_every_batches`` is set, also every that many batches).
    Stops at ``max_epochs`` or as soon as ``early_stop_at_accuracy`` is
    crossed.  The final parameter state is always among the returned
    snapshots.  Fully deterministic given (cfg, data).
    """
    _check_data(cfg, data, "training data")
    _check_data(cfg, eval_data, "eval data")
    init = init_network(cfg)
    ws = [b.weights.copy() for b in init.layers]
    bs = [b.bias.copy() for b in init.layers]
    shuffle_rng = philox_rng(cfg.seed, STREAM_SHUFFLE)

    snapshots: list[NetworkSnapshot] = []
    crossed: set[float] = set()
    emitted_current_state = False

    def emit(epoch: int, accuracy: float) -> None:
        nonlocal emitted_current_state
        snapshots.append(_snapshot_from_arrays(ws, bs, cfg, epoch, accuracy))
        emitted_current_state = True

    def handle_eval(epoch: int, accuracy: float, end_of_epoch: bool) -> bool:
        """Apply schedule and early stopping; returns True to stop training."""
        nonlocal emitted_current_state
        emitted_current_state = False
        if cfg.snapshot_schedule == "every_epoch":
            if end_of_epoch:
                emit(epoch, accuracy)
        else:
            for t in cfg.schedule_thresholds:
                if t not in crossed and accuracy >= t:
                    crossed.add(t)
                    if not emitted_current_state:
                        emit(epoch, accuracy)
        if cfg.early_stop_at_accuracy is not None and accuracy >= cfg.early_stop_at_accuracy:
            if not emitted_current_state:
                emit(epoch, accuracy)
            return True
        return False

    n = data.n
    stop = False
    epoch = 0
    accuracy = 0.0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, gw, gb = loss_and_gradients(ws, bs, data.inputs[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            for i in range(len(ws)):
                ws[i] -= cfg.learning_rate * gw[i]
                bs[i] -= cfg.learning_rate * gb[i]
            if cfg.eval_every_batches and (bi + 1) % cfg.eval_every_batches == 0:
                accuracy = _evaluate_arrays(ws, bs, eval_data)
                if handle_eval(epoch, accuracy, end_of_epoch=False):
                    stop = True
                    break
        if stop:
            break
        accuracy = _evaluate_arrays(ws, bs, eval_data)
        if handle_eval(epoch, accuracy, end_of_epoch=True):
            break
    if not emitted_current_state:
        emit(epoch, accuracy)
    return snapshots


@dataclass(frozen=True)
class PopulationMember:
    """One trained network of a population run."""

    seed: int
    target: float | None
    reached: bool
    snapshots: tuple[NetworkSnapshot, ...]

    @property
    def final(self) -> NetworkSnapshot:
        return self.snapshots[-1]


def generate_population(
    base_cfg: TrainConfig,
    count: int,
    accuracy_targets,
    data: Dataset,
    eval_data: Dataset,
) -> list[PopulationMember]:
    """Train ``count`` networks with seeds base_seed + i, early-stopping each
    at its round-robin target accuracy.

    Networks that never reach their target within max_epochs are still
    emitted, carrying their best-effort accuracy, with ``reached`` False.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    targets = list(accuracy_targets) if accuracy_targets else []
    members = []
    for i in range(count):
        target = targets[i % len(targets)] if targets else None
        cfg_i = replace(
            base_cfg,
            seed=(base_cfg.seed + i) % 2**64,
            early_stop_at_accuracy=target,
        )
        snaps = train(cfg_i, data, eval_data)
        final_acc = snaps[-1].meta.accuracy
        members.append(
            PopulationMember(
                seed=cfg_i.seed,
                target=target,
                reached=(target is None) or final_acc >= target,
                snapshots=tuple(snaps),
            )
        )
    return members
