"""`.cpool` container: one file holding a whole compressed model.

Layout matches `.cwt`: magic, uint32 header length, JSON header, payload.
Each compressed layer is a bitstream of per-vector codes (group-local pool
index LSB-first, then one bit per kept error channel, 1 for +1), padded to a
whole byte per layer.  Biases and exempt-layer weights ride along as float32.
"""

from __future__ import annotations

import struct

import numpy as np

from .compress import CompressedLayer, CompressedModel, ModelLayer, ScaleSet
from .interchange import FormatError, LayerSpec, _json_bytes, _read_container, pack_bits, unpack_bits
from .pool import PoolConfig

POOL_MAGIC = b"CPL1"
POOL_FORMAT = "cpool/1"


def encode_layer_codes(cl: CompressedLayer, index_bits: int) -> bytes:
    """Per-vector (index, error plane) bitstream for one layer."""
    idx = np.asarray(cl.indices, dtype=np.uint16)
    if idx.size and int(idx.max()) >= 1 << index_bits:
        raise FormatError(f"layer {cl.name!r}: index exceeds {index_bits} bits")
    idx_bits = (idx[:, None] >> np.arange(index_bits)[None, :]) & 1
    plane_bits = (cl.error_plane > 0).astype(np.uint8)
    return pack_bits(np.concatenate([idx_bits.astype(np.uint8), plane_bits], axis=1))


def decode_layer_codes(
    data: bytes, n_vectors: int, index_bits: int, n_kept: int
) -> tuple[np.ndarray, np.ndarray]:
    per_vec = index_bits + n_kept
    bits = unpack_bits(data, n_vectors * per_vec).reshape(n_vectors, per_vec)
    weights = 1 << np.arange(index_bits, dtype=np.int64)
    indices = (bits[:, :index_bits].astype(np.int64) * weights).sum(axis=1)
    plane = (2 * bits[:, index_bits:].astype(np.int8) - 1).astype(np.int8)
    return indices, plane


def write_compressed_model(model: CompressedModel, path) -> None:
    payload = bytearray()
    entries = []

    def section(raw: bytes) -> list[int]:
        off = len(payload)
        payload.extend(raw)
        return [off, len(raw)]

    for entry in model.layers:
        doc = entry.spec.to_json()
        doc.pop("weights", None)
        doc.pop("bias", None)
        if entry.compressed is not None:
            cl = entry.compressed
            doc["codes"] = section(encode_layer_codes(cl, model.config.index_bits))
            doc["n_vectors"] = cl.n_vectors
            doc["sparsity"] = cl.sparsity
            doc["mav_w"] = cl.scales.mav_w
            doc["mav_e"] = cl.scales.mav_e
            doc["error_scale"] = cl.scales.s
        elif entry.raw_weights is not None:
            raw = np.ascontiguousarray(entry.raw_weights, dtype="<f4")
            doc["raw_weights"] = section(raw.tobytes())
        if entry.bias is not None:
            bias = np.ascontiguousarray(entry.bias, dtype="<f4")
            doc["bias_data"] = section(bias.tobytes())
        entries.append(doc)

    header = _json_bytes(
        {
            "format": POOL_FORMAT,
            "pool_config": model.config.to_json(),
            "activation_bits": model.activation_bits,
            "layers": entries,
        }
    )
    with open(path, "wb") as f:
        f.write(POOL_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(bytes(payload))


def read_compressed_model(path) -> CompressedModel:
    header, payload = _read_container(path, POOL_MAGIC, ".cpool")
    if header.get("format") != POOL_FORMAT:
        raise FormatError(f"{path}: unsupported container format {header.get('format')!r}")
    config = PoolConfig.from_json(header["pool_config"])

    def section(ref) -> bytes:
        off, length = int(ref[0]), int(ref[1])
        if off < 0 or off + length > len(payload):
            raise FormatError(f"{path}: payload section {ref} out of bounds")
        return payload[off : off + length]

    layers = []
    for doc in header["layers"]:
        spec = LayerSpec.from_json(doc)
        bias = None
        if "bias_data" in doc:
            bias = np.frombuffer(section(doc["bias_data"]), dtype="<f4").astype(np.float64)
        if "codes" in doc:
            sparsity = float(doc["sparsity"])
            n_kept = PoolConfig(
                vector_size=config.vector_size, sparsity=sparsity
            ).kept_per_vector
            indices, plane = decode_layer_codes(
                section(doc["codes"]), int(doc["n_vectors"]), config.index_bits, n_kept
            )
            cl = CompressedLayer(
                name=spec.name,
                indices=indices,
                error_plane=plane,
                scales=ScaleSet(
                    mav_w=float(doc["mav_w"]),
                    mav_e=float(doc["mav_e"]),
                    s=float(doc["error_scale"]),
                ),
                sparsity=sparsity,
                c_out=spec.c_out,
                c_in=spec.c_in,
                kernel_h=spec.kernel_h,
                kernel_w=spec.kernel_w,
                vector_size=config.vector_size,
            )
            layers.append(ModelLayer(spec=spec, compressed=cl, bias=bias))
        elif "raw_weights" in doc:
            w = (
                np.frombuffer(section(doc["raw_weights"]), dtype="<f4")
                .reshape(spec.weight_shape())
                .astype(np.float64)
            )
            layers.append(ModelLayer(spec=spec, raw_weights=w, bias=bias))
        else:
            layers.append(ModelLayer(spec=spec, bias=bias))
    return CompressedModel(
        config=config,
        activation_bits=int(header.get("activation_bits", 8)),
        layers=layers,
    )
