"""On-disk tensor and model formats.

Binary files (`.cwt`, `.cpool`) share one layout: a 4-byte magic, a
little-endian uint32 header length, a UTF-8 JSON header, then raw
little-endian payload bytes.  `.cmodel` manifests are plain JSON files that
reference `.cwt` tensors in a sibling directory.  Bit payloads are packed
LSB-first within each byte and zero-padded to a whole byte.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

TENSOR_MAGIC = b"CWT1"
TENSOR_FORMAT = "cwt/1"
MANIFEST_FORMAT = "cmodel/1"

# dtype tag -> (numpy dtype, bytes per element); "bit" is handled separately
DTYPE_WIDTHS = {"float32": 4, "uint8": 1, "int8": 1, "bit": None}
_NUMPY_DTYPES = {"float32": "<f4", "uint8": "u1", "int8": "i1"}

WEIGHT_KINDS = ("conv2d", "dense")
PASSTHROUGH_KINDS = ("add", "maxpool2d", "avgpool2d")
LAYER_KINDS = WEIGHT_KINDS + PASSTHROUGH_KINDS


class FormatError(ValueError):
    """Raised when a container file is malformed or violates an invariant."""


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack_bits(bits: np.ndarray) -> bytes:
    """Pack a 0/1 array into bytes, LSB-first, zero-padded to a whole byte."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size and bits.max() > 1:
        raise ValueError("bit payload contains values other than 0/1")
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    """Inverse of pack_bits; returns exactly `count` bits."""
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits.size < count:
        raise FormatError(f"bit payload truncated: need {count} bits, have {bits.size}")
    return bits[:count].copy()


@dataclass
class TensorRecord:
    """A named nd-array with an explicit on-disk dtype tag."""

    name: str
    dtype: str
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in DTYPE_WIDTHS:
            raise FormatError(f"unknown dtype {self.dtype!r} for tensor {self.name!r}")
        if not 1 <= self.data.ndim <= 4:
            raise FormatError(
                f"tensor {self.name!r} has {self.data.ndim} dims (1-4 supported)"
            )
        if self.dtype == "bit":
            self.data = np.asarray(self.data, dtype=np.uint8)
            if self.data.size and self.data.max() > 1:
                raise FormatError(f"bit tensor {self.name!r} has non-binary values")
        else:
            self.data = np.asarray(self.data, dtype=_NUMPY_DTYPES[self.dtype])

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def payload(self) -> bytes:
        if self.dtype == "bit":
            return pack_bits(self.data)
        return np.ascontiguousarray(self.data).tobytes()


def write_tensor(record: TensorRecord, path: str | os.PathLike) -> None:
    header = _json_bytes(
        {
            "format": TENSOR_FORMAT,
            "name": record.name,
            "dtype": record.dtype,
            "shape": list(record.shape),
        }
    )
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(record.payload())


def _read_container(path, magic, what) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(magic) + 4 or blob[: len(magic)] != magic:
        raise FormatError(f"{path}: not a {what} file (bad magic)")
    (hlen,) = struct.unpack_from("<I", blob, len(magic))
    start = len(magic) + 4
    if len(blob) < start + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed header ({e})") from e
    return header, blob[start + hlen :]


def read_tensor_header(path: str | os.PathLike) -> dict:
    """Read only the JSON header of a `.cwt` file."""
    header, _ = _read_container(path, TENSOR_MAGIC, ".cwt")
    if header.get("format") != TENSOR_FORMAT:
        raise FormatError(f"{path}: unsupported tensor format {header.get('format')!r}")
    return header


def read_tensor(path: str | os.PathLike) -> TensorRecord:
    header, payload = _read_container(path, TENSOR_MAGIC, ".cwt")
    if header.get("format") != TENSOR_FORMAT:
        raise FormatError(f"{path}: unsupported tensor format {header.get('format')!r}")
    dtype, shape = header["dtype"], tuple(header["shape"])
    if dtype not in DTYPE_WIDTHS:
        raise FormatError(f"{path}: unknown dtype {dtype!r}")
    n = math.prod(shape)
    if dtype == "bit":
        expect = (n + 7) // 8
        if len(payload) != expect:
            raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
        data = unpack_bits(payload, n).reshape(shape)
    else:
        expect = n * DTYPE_WIDTHS[dtype]
        if len(payload) != expect:
            raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
        data = np.frombuffer(payload, dtype=_NUMPY_DTYPES[dtype]).reshape(shape).copy()
    return TensorRecord(name=header["name"], dtype=dtype, data=data)


@dataclass
class LayerSpec:
    """One layer of a sequential model.

    conv2d weights have shape (c_out, c_in, kernel_h, kernel_w), dense
    (c_out, c_in).  Pass-through kinds (add/pool) carry no weights; `add`
    layers name an earlier layer via `skip_from` whose output is summed in.
    """

    name: str
    kind: str
    c_in: int
    c_out: int
    kernel_h: int = 1
    kernel_w: int = 1
    stride: int = 1
    padding: int = 0
    weights: str | None = None
    bias: str | None = None
    skip_from: str | None = None

    @property
    def has_weights(self) -> bool:
        return self.kind in WEIGHT_KINDS

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv2d":
            return (self.c_out, self.c_in, self.kernel_h, self.kernel_w)
        if self.kind == "dense":
            return (self.c_out, self.c_in)
        raise ValueError(f"layer {self.name!r} ({self.kind}) has no weight tensor")

    def to_json(self) -> dict:
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
        if self.weights is not None:
            d["weights"] = self.weights
        if self.bias is not None:
            d["bias"] = self.bias
        if self.skip_from is not None:
            d["skip_from"] = self.skip_from
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LayerSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            c_in=int(d["c_in"]),
            c_out=int(d["c_out"]),
            kernel_h=int(d.get("kernel_h", 1)),
            kernel_w=int(d.get("kernel_w", 1)),
            stride=int(d.get("stride", 1)),
            padding=int(d.get("padding", 0)),
            weights=d.get("weights"),
            bias=d.get("bias"),
            skip_from=d.get("skip_from"),
        )


@dataclass
class ModelManifest:
    """Ordered layer list plus global compression defaults."""

    layers: list[LayerSpec]
    pool_seed: int = 0
    pool_config: dict = field(default_factory=dict)
    activation_bits: int = 8
    tensor_dir: str | None = None  # absolute path once read from disk

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "pool_seed": self.pool_seed,
            "pool_config": self.pool_config,
            "activation_bits": self.activation_bits,
            "layers": [s.to_json() for s in self.layers],
        }


def validate_manifest(manifest: ModelManifest, tensor_dir: str | None = None) -> list[str]:
    """Return a list of invariant violations; empty means well-formed."""
    violations = []
    tensor_dir = tensor_dir or manifest.tensor_dir
    seen = set()
    for spec in manifest.layers:
        if spec.name in seen:
            violations.append(f"duplicate layer name: {spec.name!r}")
        seen.add(spec.name)
        if spec.kind not in LAYER_KINDS:
            violations.append(f"{spec.name}: unknown layer kind {spec.kind!r}")
            continue
        for dim in ("c_in", "c_out", "kernel_h", "kernel_w"):
            if getattr(spec, dim) < 1:
                violations.append(f"{spec.name}: {dim} must be positive")
        if spec.stride < 0 or spec.padding < 0:
            violations.append(f"{spec.name}: stride/padding must be non-negative")
        if spec.kind == "dense" and (
            spec.kernel_h != 1 or spec.kernel_w != 1 or spec.stride != 1 or spec.padding != 0
        ):
            violations.append(f"{spec.name}: dense layers require kernel 1x1, stride 1, no padding")
        if spec.kind == "add":
            if spec.skip_from is None:
                violations.append(f"{spec.name}: add layer missing skip_from")
            elif spec.skip_from not in seen or spec.skip_from == spec.name:
                violations.append(
                    f"{spec.name}: skip_from {spec.skip_from!r} is not an earlier layer"
                )
        if spec.has_weights:
            if spec.weights is None:
                violations.append(f"{spec.name}: missing tensor reference")
            elif tensor_dir is not None:
                violations.extend(_check_tensor(spec, tensor_dir))
    bits = manifest.activation_bits
    if not 1 <= bits <= 16:
        violations.append(f"activation_bits {bits} outside [1, 16]")
    if manifest.pool_seed < 0 or manifest.pool_seed >= 2**64:
        violations.append(f"pool_seed {manifest.pool_seed} is not a 64-bit unsigned value")
    return violations


def _check_tensor(spec: LayerSpec, tensor_dir: str) -> list[str]:
    path = os.path.join(tensor_dir, spec.weights)
    if not os.path.exists(path):
        return [f"{spec.name}: missing tensor {spec.weights!r}"]
    try:
        header = read_tensor_header(path)
    except FormatError as e:
        return [f"{spec.name}: unreadable tensor {spec.weights!r} ({e})"]
    out = []
    shape = tuple(header["shape"])
    if shape != spec.weight_shape():
        out.append(
            f"{spec.name}: shape mismatch, declared {spec.weight_shape()} "
            f"but tensor {spec.weights!r} is {shape}"
        )
    if header["dtype"] != "float32":
        out.append(f"{spec.name}: weight tensor must be float32, got {header['dtype']}")
    return out


def read_manifest(path: str | os.PathLike) -> ModelManifest:
    """Read and validate a `.cmodel` manifest; rejects files with violations."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: cannot read manifest ({e})") from e
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: unsupported manifest format {doc.get('format')!r}")
    base = os.path.dirname(os.path.abspath(path))
    tensor_dir = doc.get("tensor_dir")
    if tensor_dir is None:
        stem = os.path.splitext(os.path.basename(path))[0]
        tensor_dir = stem + ".tensors"
    manifest = ModelManifest(
        layers=[LayerSpec.from_json(d) for d in doc.get("layers", [])],
        pool_seed=int(doc.get("pool_seed", 0)),
        pool_config=doc.get("pool_config", {}),
        activation_bits=int(doc.get("activation_bits", 8)),
        tensor_dir=os.path.join(base, tensor_dir),
    )
    violations = validate_manifest(manifest)
    if violations:
        raise FormatError(f"{path}: invalid manifest: " + "; ".join(violations))
    return manifest


def write_manifest(manifest: ModelManifest, path: str | os.PathLike,
                   tensor_dir: str | None = None) -> None:
    doc = manifest.to_json()
    if tensor_dir is not None:
        doc["tensor_dir"] = tensor_dir
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_layer_weights(manifest: ModelManifest, spec: LayerSpec) -> np.ndarray:
    record = read_tensor(os.path.join(manifest.tensor_dir, spec.weights))
    return np.asarray(record.data, dtype=np.float64)


def load_layer_bias(manifest: ModelManifest, spec: LayerSpec) -> np.ndarray | None:
    if spec.bias is None:
        return None
    record = read_tensor(os.path.join(manifest.tensor_dir, spec.bias))
    return np.asarray(record.data, dtype=np.float64)
