"""Writers for the interchange files consumed by the cimpool toolchain.

This package talks to cimpool only through files and its command line, so
the `.cwt` and `.cmodel` layouts are restated here instead of imported.
A `.cwt` tensor is a 4-byte magic, a little-endian uint32 header length,
a compact sorted-keys JSON header, then raw little-endian payload bytes.
A `.cmodel` manifest is a plain JSON file whose layer entries reference
`.cwt` files in a sibling `<stem>.tensors` directory.  The exporter only
ever emits float32 tensors.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

TENSOR_MAGIC = b"CWT1"
TENSOR_FORMAT = "cwt/1"
MANIFEST_FORMAT = "cmodel/1"
STATS_FORMAT = "cmodel-stats/1"

WEIGHT_KINDS = ("conv2d", "dense")
PASSTHROUGH_KINDS = ("add", "maxpool2d", "avgpool2d")
LAYER_KINDS = WEIGHT_KINDS + PASSTHROUGH_KINDS


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_tensor_f32(name: str, data: np.ndarray, path: str | os.PathLike) -> None:
    """Write one float32 nd-array as a `.cwt` file."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if not 1 <= arr.ndim <= 4:
        raise ValueError(f"tensor {name!r} has {arr.ndim} dims (1-4 supported)")
    if not np.isfinite(arr).all():
        raise ValueError(f"tensor {name!r} contains non-finite values")
    header = _json_bytes(
        {
            "format": TENSOR_FORMAT,
            "name": name,
            "dtype": "float32",
            "shape": list(arr.shape),
        }
    )
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(arr.tobytes())


def read_tensor_header(path: str | os.PathLike) -> dict:
    """Parse just the JSON header of a `.cwt` file (sanity checks only)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a .cwt file (bad magic)")
        (hlen,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(hlen).decode("utf-8"))


@dataclass
class LayerEntry:
    """One manifest layer plus the tensors that back it (None for pass-throughs)."""

    name: str
    kind: str
    c_in: int
    c_out: int
    kernel_h: int = 1
    kernel_w: int = 1
    stride: int = 1
    padding: int = 0
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    skip_from: str | None = None

    def manifest_entry(self, weights_file: str | None, bias_file: str | None) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel_h": self.kernel_h,
            "kernel_w": self.kernel_w,
            "stride": self.stride,
            "padding": self.padding,
        }
        if weights_file is not None:
            d["weights"] = weights_file
        if bias_file is not None:
            d["bias"] = bias_file
        if self.skip_from is not None:
            d["skip_from"] = self.skip_from
        return d


def write_manifest(
    layer_docs: list[dict],
    path: str | os.PathLike,
    pool_seed: int = 0,
    pool_config: dict | None = None,
    activation_bits: int = 8,
) -> None:
    """Write a `.cmodel` manifest referencing tensors in `<stem>.tensors/`."""
    doc = {
        "format": MANIFEST_FORMAT,
        "pool_seed": pool_seed,
        "pool_config": pool_config or {},
        "activation_bits": activation_bits,
        "layers": layer_docs,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def stats_path(model_path: str | os.PathLike) -> str:
    return os.path.splitext(os.fspath(model_path))[0] + ".stats.json"


def write_stats(layer_stats: list[dict], path: str | os.PathLike) -> None:
    """Write the per-layer reference-statistics sidecar."""
    doc = {"format": STATS_FORMAT, "layers": layer_stats}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_stats(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != STATS_FORMAT:
        raise ValueError(f"{path}: unsupported stats format {doc.get('format')!r}")
    return doc
