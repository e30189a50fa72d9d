"""Network snapshots: weight tensors as a directed bipartite graph, plus file I/O.

A trained feed-forward network is stored as an ordered list of parameter
blocks.  Block ``j`` connects neuron layer ``j`` to neuron layer ``j + 1``;
a snapshot with ``B`` blocks therefore spans ``B + 1`` neuron layers
(input, hidden ..., output).  Two block kinds exist:

* ``Dense`` -- a weight matrix with rows indexed by input neurons and
  columns by output neurons, plus a bias vector (biases are stored but
  never enter the graph metrics).
* ``Conv2D`` -- a rank-4 kernel indexed ``(kh, kw, c_in, c_out)`` with
  stride, padding mode and the spatial dimensions of its input tensor.

Conv neurons are the cells of the layer's activation tensor, identified by
``(channel, row, col)`` and flattened channel-major:
``flat = channel * (height * width) + row * width + col``.

On-disk format (CNTS v1)
------------------------
``magic b"CNTS" | u16 version (LE) | u32 header_len (LE) | header | payload``

The header is UTF-8 JSON (sorted keys, no whitespace) holding the snapshot
metadata and one descriptor per block: kind, shapes, stride/padding/
input_dims for conv blocks, and byte offsets of each tensor relative to the
start of the payload section.  Tensors are little-endian float64, C order,
kernels in ``(kh, kw, c_in, c_out)`` order.  A pure-JSON variant
(``.cnts.json``, tensors as nested lists) round-trips bit-exactly because
Python's repr of a float is shortest-round-trip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

import numpy as np

MAGIC = b"CNTS"
FORMAT_VERSION = 1

INIT_FAMILIES = ("normal", "uniform")
OUTPUT_ACTIVATIONS = ("softmax", "linear")
PADDINGS = ("valid", "same")


class SnapshotFormatError(ValueError):
    """Byte stream does not parse as a CNTS file (or its JSON variant)."""


class SnapshotValidationError(ValueError):
    """Parsed values violate a snapshot invariant."""


def _as_f64(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SnapshotValidationError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class Dense:
    """Fully connected block: ``weights[i, j]`` links input i to output j."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _as_f64(self.weights, "dense weights")
        b = _as_f64(self.bias, "dense bias")
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise SnapshotValidationError(f"dense weights must be a 2-D matrix, got shape {w.shape}")
        if b.shape != (w.shape[1],):
            raise SnapshotValidationError(
                f"dense bias length {b.shape} does not match output count {w.shape[1]}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def kind(self) -> str:
        return "dense"


@dataclass(frozen=True)
class Conv2D:
    """2-D convolution block.

    kernel      -- rank-4 tensor indexed (kh, kw, c_in, c_out)
    stride      -- (stride_h, stride_w), both >= 1
    padding     -- "valid" (no padding) or "same" (output spatial dims =
                   ceil(input / stride); extra padding on bottom/right)
    input_dims  -- (height, width, c_in) of the incoming activation tensor
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int]
    padding: str
    input_dims: tuple[int, int, int]

    def __post_init__(self):
        k = _as_f64(self.kernel, "conv kernel")
        b = _as_f64(self.bias, "conv bias")
        if k.ndim != 4:
            raise SnapshotValidationError(f"conv kernel must be rank 4, got shape {k.shape}")
        stride = (int(self.stride[0]), int(self.stride[1]))
        dims = tuple(int(d) for d in self.input_dims)
        if len(self.input_dims) != 3:
            raise SnapshotValidationError(f"input_dims must be (height, width, c_in), got {self.input_dims}")
        if self.padding not in PADDINGS:
            raise SnapshotValidationError(f"padding must be one of {PADDINGS}, got {self.padding!r}")
        if stride[0] < 1 or stride[1] < 1:
            raise SnapshotValidationError(f"stride components must be >= 1, got {stride}")
        kh, kw, c_in, c_out = k.shape
        h, w, d_in = dims
        if min(kh, kw, c_in, c_out) < 1:
            raise SnapshotValidationError(f"kernel dims must all be >= 1, got {k.shape}")
        if min(h, w, d_in) < 1:
            raise SnapshotValidationError(f"input_dims must all be >= 1, got {dims}")
        if d_in != c_in:
            raise SnapshotValidationError(
                f"kernel expects {c_in} input channels but input_dims declares {d_in}"
            )
        if b.shape != (c_out,):
            raise SnapshotValidationError(f"conv bias length {b.shape} does not match c_out {c_out}")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "input_dims", dims)
        h_out, w_out = self.output_spatial()
        if h_out < 1 or w_out < 1:
            raise SnapshotValidationError(
                f"conv geometry yields empty output {h_out}x{w_out} "
                f"(kernel {kh}x{kw}, input {h}x{w}, stride {stride}, {self.padding})"
            )
        ph, pw = self.pad_total()
        if kh > h + ph or kw > w + pw:
            raise SnapshotValidationError(
                f"kernel {kh}x{kw} exceeds padded input {h + ph}x{w + pw}"
            )

    @property
    def kind(self) -> str:
        return "conv2d"

    def output_spatial(self) -> tuple[int, int]:
        kh, kw = self.kernel.shape[0], self.kernel.shape[1]
        h, w, _ = self.input_dims
        sh, sw = self.stride
        if self.padding == "valid":
            return (h - kh) // sh + 1, (w - kw) // sw + 1
        return -(-h // sh), -(-w // sw)  # ceil division

    def output_dims(self) -> tuple[int, int, int]:
        h_out, w_out = self.output_spatial()
        return h_out, w_out, self.kernel.shape[3]

    def pad_total(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        kh, kw = self.kernel.shape[0], self.kernel.shape[1]
        h, w, _ = self.input_dims
        sh, sw = self.stride
        h_out, w_out = self.output_spatial()
        return (
            max((h_out - 1) * sh + kh - h, 0),
            max((w_out - 1) * sw + kw - w, 0),
        )

    def pad_before(self) -> tuple[int, int]:
        # symmetric padding, extra row/column on the bottom/right
        ph, pw = self.pad_total()
        return ph // 2, pw // 2


LayerWeights = Union[Dense, Conv2D]


@dataclass(frozen=True)
class SnapshotMeta:
    accuracy: float = 0.0
    epoch: int = 0
    init_family: str = "normal"
    init_scale: float = 0.05
    seed: int = 0
    task_tag: str = ""
    output_activation: str = "softmax"

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise SnapshotValidationError(f"accuracy must be in [0, 1], got {self.accuracy}")
        if self.epoch < 0:
            raise SnapshotValidationError(f"epoch must be >= 0, got {self.epoch}")
        if self.init_family not in INIT_FAMILIES:
            raise SnapshotValidationError(f"init_family must be one of {INIT_FAMILIES}")
        if not self.init_scale > 0:
            raise SnapshotValidationError(f"init_scale must be > 0, got {self.init_scale}")
        if not 0 <= self.seed < 2**64:
            raise SnapshotValidationError("seed must fit in an unsigned 64-bit integer")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise SnapshotValidationError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")


@dataclass(frozen=True)
class NeuronId:
    """One vertex of the bipartite graph.

    ``coords`` carries the (channel, row, col) triple for conv-layer neurons;
    it is derived from ``flat_index`` and excluded from equality.
    """

    layer_index: int
    flat_index: int
    coords: tuple[int, int, int] | None = field(default=None, compare=False)


def flatten_coords(channel: int, row: int, col: int, dims: tuple[int, int, int]) -> int:
    """Channel-major flattening of (channel, row, col) for dims (h, w, c)."""
    h, w, c = dims
    if not (0 <= channel < c and 0 <= row < h and 0 <= col < w):
        raise IndexError(f"coords ({channel}, {row}, {col}) out of range for dims {dims}")
    return channel * (h * w) + row * w + col


def unflatten_index(flat: int, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    """Inverse of :func:`flatten_coords`; returns (channel, row, col)."""
    h, w, c = dims
    if not 0 <= flat < h * w * c:
        raise IndexError(f"flat index {flat} out of range for dims {dims}")
    channel, rest = divmod(flat, h * w)
    row, col = divmod(rest, w)
    return channel, row, col


def neuron_count(layer: LayerWeights, side: str) -> int:
    """Number of neurons on the ``"input"`` or ``"output"`` side of a block."""
    if side not in ("input", "output"):
        raise ValueError(f"side must be 'input' or 'output', got {side!r}")
    if isinstance(layer, Dense):
        return layer.weights.shape[0] if side == "input" else layer.weights.shape[1]
    if side == "input":
        h, w, c_in = layer.input_dims
        return h * w * c_in
    h_out, w_out, c_out = layer.output_dims()
    return h_out * w_out * c_out


@dataclass(frozen=True)
class NetworkSnapshot:
    layers: tuple[LayerWeights, ...]
    meta: SnapshotMeta = field(default_factory=SnapshotMeta)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise SnapshotValidationError("snapshot must contain at least one parameter block")
        for j in range(len(layers) - 1):
            out_n = neuron_count(layers[j], "output")
            in_n = neuron_count(layers[j + 1], "input")
            if out_n != in_n:
                raise SnapshotValidationError(
                    f"blocks {j}/{j + 1} are shape-incompatible: "
                    f"{out_n} outputs vs {in_n} inputs"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def n_blocks(self) -> int:
        return len(self.layers)

    @property
    def n_neuron_layers(self) -> int:
        return len(self.layers) + 1

    def neuron_layer_sizes(self) -> list[int]:
        sizes = [neuron_count(self.layers[0], "input")]
        sizes.extend(neuron_count(b, "output") for b in self.layers)
        return sizes

    def parameter_count(self) -> int:
        total = 0
        for b in self.layers:
            t = b.weights if isinstance(b, Dense) else b.kernel
            total += t.size + b.bias.size
        return total


def strip_output_softmax(s: NetworkSnapshot) -> NetworkSnapshot:
    """Mark the output layer as linear for metric interpretation.

    Weights are untouched; the operation is idempotent and a no-op on
    snapshots already tagged linear.
    """
    if s.meta.output_activation == "linear":
        return s
    return replace(s, meta=replace(s.meta, output_activation="linear"))


# ---------------------------------------------------------------------------
# CNTS binary format


def _meta_to_dict(meta: SnapshotMeta) -> dict:
    return {
        "accuracy": meta.accuracy,
        "epoch": meta.epoch,
        "init_family": meta.init_family,
        "init_scale": meta.init_scale,
        "seed": meta.seed,
        "task_tag": meta.task_tag,
        "output_activation": meta.output_activation,
    }


def _meta_from_dict(d: dict) -> SnapshotMeta:
    try:
        return SnapshotMeta(
            accuracy=float(d["accuracy"]),
            epoch=int(d["epoch"]),
            init_family=str(d["init_family"]),
            init_scale=float(d["init_scale"]),
            seed=int(d["seed"]),
            task_tag=str(d["task_tag"]),
            output_activation=str(d["output_activation"]),
        )
    except KeyError as e:
        raise SnapshotFormatError(f"snapshot meta is missing field {e}") from None


def _payload_tensors(layer: LayerWeights) -> list[np.ndarray]:
    if isinstance(layer, Dense):
        return [layer.weights, layer.bias]
    return [layer.kernel, layer.bias]


def write_snapshot(s: NetworkSnapshot) -> bytes:
    """Serialize to CNTS v1 bytes.  Deterministic for identical inputs."""
    descriptors = []
    offset = 0
    chunks: list[bytes] = []
    for layer in s.layers:
        tensors = _payload_tensors(layer)
        offsets = []
        for t in tensors:
            raw = np.ascontiguousarray(t, dtype="<f8").tobytes()
            chunks.append(raw)
            offsets.append(offset)
            offset += len(raw)
        if isinstance(layer, Dense):
            descriptors.append(
                {
                    "kind": "dense",
                    "weights_shape": list(layer.weights.shape),
                    "bias_shape": list(layer.bias.shape),
                    "weights_offset": offsets[0],
                    "bias_offset": offsets[1],
                }
            )
        else:
            descriptors.append(
                {
                    "kind": "conv2d",
                    "kernel_shape": list(layer.kernel.shape),
                    "bias_shape": list(layer.bias.shape),
                    "stride": list(layer.stride),
                    "padding": layer.padding,
                    "input_dims": list(layer.input_dims),
                    "kernel_offset": offsets[0],
                    "bias_offset": offsets[1],
                }
            )
    header = {"meta": _meta_to_dict(s.meta), "layers": descriptors}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header_bytes))
    return prefix + header_bytes + b"".join(chunks)


def _layer_from_descriptor(desc: dict, payload: bytes, index: int) -> LayerWeights:
    def read_tensor(offset: int, shape: list[int]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if offset < 0 or end > len(payload):
            raise SnapshotFormatError(
                f"block {index}: tensor bytes [{offset}:{end}] exceed payload of {len(payload)} bytes"
            )
        return np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()

    kind = desc.get("kind")
    try:
        if kind == "dense":
            return Dense(
                weights=read_tensor(desc["weights_offset"], desc["weights_shape"]),
                bias=read_tensor(desc["bias_offset"], desc["bias_shape"]),
            )
        if kind == "conv2d":
            return Conv2D(
                kernel=read_tensor(desc["kernel_offset"], desc["kernel_shape"]),
                bias=read_tensor(desc["bias_offset"], desc["bias_shape"]),
                stride=tuple(desc["stride"]),
                padding=desc["padding"],
                input_dims=tuple(desc["input_dims"]),
            )
    except KeyError as e:
        raise SnapshotFormatError(f"block {index} descriptor is missing field {e}") from None
    raise SnapshotFormatError(f"block {index} has unknown kind {kind!r}")


def read_snapshot(data: bytes) -> NetworkSnapshot:
    """Parse CNTS bytes (or the JSON variant, auto-detected)."""
    data = bytes(data)
    if data[: len(MAGIC)] != MAGIC:
        stripped = data.lstrip()
        if stripped[:1] == b"{":
            return snapshot_from_json(stripped.decode("utf-8"))
        raise SnapshotFormatError(
            f"bad magic {data[:4]!r}: not a CNTS file and not the JSON variant"
        )
    if len(data) < len(MAGIC) + 6:
        raise SnapshotFormatError("truncated CNTS file: header prefix incomplete")
    version, header_len = struct.unpack_from("<HI", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported CNTS version {version}")
    header_start = len(MAGIC) + 6
    header_end = header_start + header_len
    if header_end > len(data):
        raise SnapshotFormatError("truncated CNTS file: header exceeds file size")
    try:
        header = json.loads(data[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SnapshotFormatError(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict) or "meta" not in header or "layers" not in header:
        raise SnapshotFormatError("header must be an object with 'meta' and 'layers'")
    payload = data[header_end:]
    layers = [
        _layer_from_descriptor(desc, payload, i) for i, desc in enumerate(header["layers"])
    ]
    return NetworkSnapshot(layers=tuple(layers), meta=_meta_from_dict(header["meta"]))


# ---------------------------------------------------------------------------
# JSON variant (.cnts.json)


def _layer_to_json_dict(layer: LayerWeights) -> dict:
    if isinstance(layer, Dense):
        return {
            "kind": "dense",
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
        }
    return {
        "kind": "conv2d",
        "kernel": layer.kernel.tolist(),
        "bias": layer.bias.tolist(),
        "stride": list(layer.stride),
        "padding": layer.padding,
        "input_dims": list(layer.input_dims),
    }


def _layer_from_json_dict(d: dict, index: int) -> LayerWeights:
    kind = d.get("kind")
    try:
        if kind == "dense":
            return Dense(weights=np.array(d["weights"], dtype=np.float64),
                         bias=np.array(d["bias"], dtype=np.float64))
        if kind == "conv2d":
            return Conv2D(
                kernel=np.array(d["kernel"], dtype=np.float64),
                bias=np.array(d["bias"], dtype=np.float64),
                stride=tuple(d["stride"]),
                padding=d["padding"],
                input_dims=tuple(d["input_dims"]),
            )
    except KeyError as e:
        raise SnapshotFormatError(f"block {index} is missing field {e}") from None
    raise SnapshotFormatError(f"block {index} has unknown kind {kind!r}")


def snapshot_to_json(s: NetworkSnapshot) -> str:
    doc = {
        "format": "cnts.json",
        "version": FORMAT_VERSION,
        "meta": _meta_to_dict(s.meta),
        "layers": [_layer_to_json_dict(b) for b in s.layers],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def snapshot_from_json(text: str) -> NetworkSnapshot:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SnapshotFormatError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != "cnts.json":
        raise SnapshotFormatError("JSON snapshot must declare format 'cnts.json'")
    if doc.get("version") != FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported version {doc.get('version')}")
    layers = [_layer_from_json_dict(d, i) for i, d in enumerate(doc.get("layers", []))]
    if not layers:
        raise SnapshotFormatError("JSON snapshot has no layers")
    return NetworkSnapshot(layers=tuple(layers), meta=_meta_from_dict(doc["meta"]))


def save_snapshot(path, s: NetworkSnapshot) -> None:
    """Write binary CNTS, or the JSON variant when the path ends in .json."""
    path = str(path)
    if path.endswith(".json"):
        with open(path, "w", encoding="utf-8") as f:
            f.write(snapshot_to_json(s))
    else:
        with open(path, "wb") as f:
            f.write(write_snapshot(s))


def load_snapshot(path) -> NetworkSnapshot:
    with open(path, "rb") as f:
        return read_snapshot(f.read())
