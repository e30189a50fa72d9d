"""Standalone CNTS v1 writer/reader.

Implements the published byte layout directly so the exporter stays
independent of the analysis library:

``magic b"CNTS" | u16 version (LE) | u32 header_len (LE) | header | payload``

Header: UTF-8 JSON (sorted keys, compact separators) with ``meta`` and one
descriptor per block carrying kind, shapes, conv geometry and byte offsets
relative to the payload start.  Payload: float64 little-endian tensors in C
order; kernels indexed (kh, kw, c_in, c_out); dense weights (input, output).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CNTS"
VERSION = 1


def write_cnts(meta: dict, layers: list[dict]) -> bytes:
    """Serialize blocks of the form {kind, weights, bias[, stride, padding,
    input_dims]} (numpy arrays already in CNTS index order)."""
    descriptors = []
    chunks = []
    offset = 0

    def add(tensor: np.ndarray) -> int:
        nonlocal offset
        raw = np.ascontiguousarray(tensor, dtype="<f8").tobytes()
        chunks.append(raw)
        start = offset
        offset += len(raw)
        return start

    for block in layers:
        w = block["weights"]
        b = block["bias"]
        if block["kind"] == "dense":
            descriptors.append({
                "kind": "dense",
                "weights_shape": list(w.shape),
                "bias_shape": list(b.shape),
                "weights_offset": add(w),
                "bias_offset": add(b),
            })
        else:
            descriptors.append({
                "kind": "conv2d",
                "kernel_shape": list(w.shape),
                "bias_shape": list(b.shape),
                "stride": list(block["stride"]),
                "padding": block["padding"],
                "input_dims": list(block["input_dims"]),
                "kernel_offset": add(w),
                "bias_offset": add(b),
            })
    header = json.dumps({"meta": meta, "layers": descriptors},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(chunks)


def read_cnts(data: bytes) -> tuple[dict, list[dict]]:
    """Parse CNTS bytes back into (meta, blocks) with numpy tensors."""
    if data[:4] != MAGIC:
        raise ValueError(f"not a CNTS file (magic {data[:4]!r})")
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported CNTS version {version}")
    header = json.loads(data[10 : 10 + header_len].decode("utf-8"))
    payload = data[10 + header_len :]

    def tensor(offset: int, shape: list[int]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)

    blocks = []
    for desc in header["layers"]:
        if desc["kind"] == "dense":
            blocks.append({
                "kind": "dense",
                "weights": tensor(desc["weights_offset"], desc["weights_shape"]),
                "bias": tensor(desc["bias_offset"], desc["bias_shape"]),
            })
        else:
            blocks.append({
                "kind": "conv2d",
                "weights": tensor(desc["kernel_offset"], desc["kernel_shape"]),
                "bias": tensor(desc["bias_offset"], desc["bias_shape"]),
                "stride": tuple(desc["stride"]),
                "padding": desc["padding"],
                "input_dims": tuple(desc["input_dims"]),
            })
    return header["meta"], blocks
