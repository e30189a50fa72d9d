"""Checkpoint export: array-archive files -> CNTS v1 snapshots.

The manifest (JSON) owns everything that cannot be recovered from tensors:
which archive entries form the layer chain, how each tensor's axes map onto
the CNTS index conventions, the conv geometry (stride/padding/input_dims),
and the snapshot metadata.  The exporter never infers geometry.

Manifest layout::

    {
      "source": "checkpoint.npz",
      "meta": {"accuracy": 0.7, "epoch": 12, "init_family": "normal",
               "init_scale": 0.05, "seed": 1, "task_tag": "cifar",
               "output_activation": "softmax"},
      "layers": [
        {"kind": "conv2d", "weights": "features.0.weight",
         "bias": "features.0.bias",
         "source_order": ["c_out", "c_in", "kh", "kw"],
         "stride": [1, 1], "padding": "same", "input_dims": [32, 32, 3]},
        {"kind": "dense", "weights": "classifier.weight",
         "bias": "classifier.bias", "source_order": ["out", "in"]}
      ]
    }

``source_order`` names the axes of the stored tensor; entries may also pin
the expected source ``shape``.  Targets are ``(kh, kw, c_in, c_out)`` for
kernels and ``(in, out)`` for dense weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cnts_format import read_cnts, write_cnts

DENSE_AXES = ("in", "out")
CONV_AXES = ("kh", "kw", "c_in", "c_out")

META_FIELDS = ("accuracy", "epoch", "init_family", "init_scale",
               "seed", "task_tag", "output_activation")
META_DEFAULTS = {
    "accuracy": 0.0, "epoch": 0, "init_family": "normal", "init_scale": 0.05,
    "seed": 0, "task_tag": "", "output_activation": "softmax",
}


class ExportError(ValueError):
    """Manifest, archive or chain problem; message says which."""


@dataclass(frozen=True)
class LayerMapping:
    kind: str
    weights_name: str
    bias_name: str
    source_order: tuple[str, ...]
    shape: tuple[int, ...] | None
    stride: tuple[int, int] | None
    padding: str | None
    input_dims: tuple[int, int, int] | None

    @property
    def target_axes(self) -> tuple[str, ...]:
        return DENSE_AXES if self.kind == "dense" else CONV_AXES

    def permutation(self) -> tuple[int, ...]:
        # target axis i comes from source position permutation[i]
        return tuple(self.source_order.index(axis) for axis in self.target_axes)


@dataclass(frozen=True)
class ExportManifest:
    source: Path
    meta: dict
    layers: tuple[LayerMapping, ...]


def _parse_layer(entry: dict, index: int) -> LayerMapping:
    kind = entry.get("kind")
    if kind not in ("dense", "conv2d"):
        raise ExportError(f"layer {index}: kind must be 'dense' or 'conv2d', got {kind!r}")
    axes = DENSE_AXES if kind == "dense" else CONV_AXES
    order = tuple(entry.get("source_order", axes))
    if sorted(order) != sorted(axes):
        raise ExportError(
            f"layer {index}: source_order must be a permutation of {list(axes)}, got {list(order)}"
        )
    for key in ("weights", "bias"):
        if key not in entry:
            raise ExportError(f"layer {index}: missing tensor name {key!r}")
    if kind == "conv2d":
        for key in ("stride", "padding", "input_dims"):
            if key not in entry:
                raise ExportError(f"layer {index}: conv2d mapping requires {key!r}")
        if entry["padding"] not in ("valid", "same"):
            raise ExportError(f"layer {index}: padding must be 'valid' or 'same'")
    return LayerMapping(
        kind=kind,
        weights_name=entry["weights"],
        bias_name=entry["bias"],
        source_order=order,
        shape=tuple(entry["shape"]) if "shape" in entry else None,
        stride=tuple(entry["stride"]) if kind == "conv2d" else None,
        padding=entry.get("padding") if kind == "conv2d" else None,
        input_dims=tuple(entry["input_dims"]) if kind == "conv2d" else None,
    )


def load_manifest(path) -> ExportManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"cannot read manifest {path}: {e}") from None
    if "source" not in doc or "layers" not in doc or not doc["layers"]:
        raise ExportError("manifest needs 'source' and a non-empty 'layers' list")
    meta = dict(META_DEFAULTS)
    meta.update(doc.get("meta", {}))
    unknown = set(meta) - set(META_FIELDS)
    if unknown:
        raise ExportError(f"unknown meta fields: {sorted(unknown)}")
    layers = tuple(_parse_layer(e, i) for i, e in enumerate(doc["layers"]))
    return ExportManifest(source=path.parent / doc["source"], meta=meta, layers=layers)


def _load_archive(path: Path) -> dict[str, np.ndarray]:
    if not path.exists():
        raise ExportError(f"source archive not found: {path}")
    try:
        with np.load(path) as archive:
            return {name: np.asarray(archive[name]) for name in archive.files}
    except (OSError, ValueError) as e:
        raise ExportError(f"cannot read archive {path}: {e}") from None


def _mapped_tensors(mapping: LayerMapping, archive: dict, index: int):
    for name in (mapping.weights_name, mapping.bias_name):
        if name not in archive:
            raise ExportError(f"layer {index}: tensor {name!r} not present in the archive")
    raw = archive[mapping.weights_name]
    if raw.ndim != len(mapping.target_axes):
        raise ExportError(
            f"layer {index}: {mapping.weights_name!r} has rank {raw.ndim}, "
            f"expected {len(mapping.target_axes)}"
        )
    if mapping.shape is not None and raw.shape != mapping.shape:
        raise ExportError(
            f"layer {index}: {mapping.weights_name!r} has shape {raw.shape}, "
            f"manifest declares {mapping.shape}"
        )
    weights = np.transpose(raw, mapping.permutation()).astype(np.float64)
    bias = archive[mapping.bias_name].astype(np.float64)
    if bias.ndim != 1:
        raise ExportError(f"layer {index}: bias {mapping.bias_name!r} must be rank 1")
    return weights, bias


def _out_count(mapping: LayerMapping, weights: np.ndarray) -> int:
    if mapping.kind == "dense":
        return weights.shape[1]
    h, w, _ = mapping.input_dims
    kh, kw = weights.shape[0], weights.shape[1]
    sh, sw = mapping.stride
    if mapping.padding == "valid":
        h_out, w_out = (h - kh) // sh + 1, (w - kw) // sw + 1
    else:
        h_out, w_out = -(-h // sh), -(-w // sw)
    return h_out * w_out * weights.shape[3]


def _in_count(mapping: LayerMapping, weights: np.ndarray) -> int:
    if mapping.kind == "dense":
        return weights.shape[0]
    h, w, c = mapping.input_dims
    return h * w * c


def _validated_blocks(manifest: ExportManifest) -> list[dict]:
    archive = _load_archive(manifest.source)
    blocks = []
    for i, mapping in enumerate(manifest.layers):
        weights, bias = _mapped_tensors(mapping, archive, i)
        if not np.all(np.isfinite(weights)) or not np.all(np.isfinite(bias)):
            raise ExportError(f"layer {i}: non-finite values in mapped tensors")
        expected_bias = weights.shape[1] if mapping.kind == "dense" else weights.shape[3]
        if bias.shape[0] != expected_bias:
            raise ExportError(
                f"layer {i}: bias length {bias.shape[0]} does not match output count {expected_bias}"
            )
        if mapping.kind == "conv2d" and mapping.input_dims[2] != weights.shape[2]:
            raise ExportError(
                f"layer {i}: input_dims declare {mapping.input_dims[2]} channels, "
                f"kernel expects {weights.shape[2]}"
            )
        block = {"kind": mapping.kind, "weights": weights, "bias": bias}
        if mapping.kind == "conv2d":
            block.update(stride=mapping.stride, padding=mapping.padding,
                         input_dims=mapping.input_dims)
        blocks.append(block)
    for i in range(len(blocks) - 1):
        out_n = _out_count(manifest.layers[i], blocks[i]["weights"])
        in_n = _in_count(manifest.layers[i + 1], blocks[i + 1]["weights"])
        if out_n != in_n:
            raise ExportError(
                f"broken layer chain at {i}/{i + 1}: {out_n} outputs vs {in_n} inputs "
                "(is a layer missing from the manifest?)"
            )
    return blocks


def export(manifest: ExportManifest, out_path) -> Path:
    """Write the mapped checkpoint as a CNTS v1 file."""
    blocks = _validated_blocks(manifest)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(write_cnts(manifest.meta, blocks))
    return out_path


def verify(cnts_path, manifest: ExportManifest) -> dict:
    """Element-wise comparison of an exported file against its source.

    Returns {"ok": bool, "tensors": [{name, max_deviation}, ...]}; any
    deviation above exactly zero (after float64 widening) fails.
    """
    cnts_path = Path(cnts_path)
    if not cnts_path.exists():
        raise ExportError(f"CNTS file not found: {cnts_path}")
    _, stored = read_cnts(cnts_path.read_bytes())
    expected = _validated_blocks(manifest)
    if len(stored) != len(expected):
        raise ExportError(
            f"{cnts_path.name} holds {len(stored)} blocks, manifest maps {len(expected)}"
        )
    report = []
    ok = True
    for i, (got, want, mapping) in enumerate(zip(stored, expected, manifest.layers)):
        for label, a, b in (
            (mapping.weights_name, got["weights"], want["weights"]),
            (mapping.bias_name, got["bias"], want["bias"]),
        ):
            if a.shape != b.shape:
                raise ExportError(f"layer {i}: stored shape {a.shape} vs source {b.shape}")
            dev = float(np.max(np.abs(a - b))) if a.size else 0.0
            report.append({"name": label, "max_deviation": dev})
            ok = ok and dev == 0.0
        if got["kind"] != want["kind"]:
            raise ExportError(f"layer {i}: stored kind {got['kind']} vs manifest {want['kind']}")
    return {"ok": ok, "tensors": report}
