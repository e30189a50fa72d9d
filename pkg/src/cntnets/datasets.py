"""Dataset loading: the bundled 8x8 digit CSV, IDX files, synthetic blobs.

The bundled dataset ships in-repo (``data/digits8x8.csv``): 1797 samples of
8x8 grayscale digit images, 64 feature columns with raw pixel values in
0..16 plus a ``label`` column.  Loading rescales pixels by 1/16 so every
input coordinate lies in [0, 1].
"""

from __future__ import annotations

import struct
from importlib import resources

import numpy as np

from .trainer import STREAM_DATA, Dataset, philox_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

BUNDLED_PIXEL_MAX = 16.0


def load_digits_csv(path, pixel_max: float = BUNDLED_PIXEL_MAX) -> Dataset:
    """Read a digit-style CSV: 64 feature columns followed by ``label``."""
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64)
    names = list(raw.dtype.names)
    if names[-1] != "label":
        raise ValueError(f"last CSV column must be 'label', got {names[-1]!r}")
    x = np.stack([raw[c] for c in names[:-1]], axis=1)
    y = raw["label"].astype(np.int64)
    return Dataset(inputs=x / pixel_max, labels=y)


def load_bundled_digits() -> Dataset:
    """The in-repo 8x8, 10-class digit dataset (1797 samples)."""
    with resources.as_file(resources.files("cntnets") / "data" / "digits8x8.csv") as p:
        return load_digits_csv(p)


def train_eval_split(ds: Dataset, eval_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split (Philox stream 2 keyed by ``seed``)."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must be in (0, 1)")
    rng = philox_rng(seed, STREAM_DATA)
    order = rng.permutation(ds.n)
    n_eval = max(1, int(round(ds.n * eval_fraction)))
    return ds.subset(order[n_eval:]), ds.subset(order[:n_eval])


# ---------------------------------------------------------------------------
# IDX ingestion (MNIST/Fashion-style files)


def load_idx_images(path) -> np.ndarray:
    """Images from an IDX file as (n, rows*cols) float64 scaled to [0, 1]."""
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count * rows * cols:
        raise ValueError(f"IDX image payload has {data.size} bytes, expected {count * rows * cols}")
    return data.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", f.read(8))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count:
        raise ValueError(f"IDX label payload has {data.size} bytes, expected {count}")
    return data.astype(np.int64)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} images vs {y.shape[0]} labels")
    return Dataset(inputs=x, labels=y)


# ---------------------------------------------------------------------------
# synthetic fallback


def gaussian_blobs(
    n_samples: int = 1000,
    n_classes: int = 10,
    n_features: int = 64,
    spread: float = 0.08,
    seed: int = 0,
) -> Dataset:
    """Unit-box Gaussian class blobs; a dependency-free stand-in task."""
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    rng = philox_rng(seed, STREAM_DATA)
    centers = rng.uniform(0.25, 0.75, size=(n_classes, n_features))
    labels = np.arange(n_samples) % n_classes
    points = centers[labels] + rng.normal(0.0, spread, size=(n_samples, n_features))
    return Dataset(inputs=np.clip(points, 0.0, 1.0), labels=labels)
