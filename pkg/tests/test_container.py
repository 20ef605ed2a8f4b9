import dataclasses
import math

import numpy as np
import pytest

from cimpool.compress import compress_model
from cimpool.container import (
    decode_layer_codes,
    encode_layer_codes,
    read_compressed_model,
    write_compressed_model,
)
from cimpool.interchange import FormatError, read_manifest
from cimpool.pool import PoolConfig
from cimpool import fixtures


@pytest.fixture
def tiny_model(tmp_path):
    path = fixtures.tinycnn(str(tmp_path))
    return compress_model(read_manifest(path))


def _assert_models_equal(a, b):
    assert a.config == b.config
    assert a.activation_bits == b.activation_bits
    assert len(a.layers) == len(b.layers)
    for ea, eb in zip(a.layers, b.layers):
        # tensor-file references do not travel; the payload replaces them
        assert dataclasses.replace(ea.spec, weights=None, bias=None) == dataclasses.replace(
            eb.spec, weights=None, bias=None
        )
        if ea.bias is None:
            assert eb.bias is None
        else:
            assert np.array_equal(ea.bias.astype(np.float32), eb.bias.astype(np.float32))
        if ea.compressed is None:
            assert eb.compressed is None
        else:
            assert np.array_equal(ea.compressed.indices, eb.compressed.indices)
            assert np.array_equal(ea.compressed.error_plane, eb.compressed.error_plane)
            assert ea.compressed.scales == eb.compressed.scales
            assert ea.compressed.sparsity == eb.compressed.sparsity
        if ea.raw_weights is None:
            assert eb.raw_weights is None
        else:
            assert np.array_equal(
                ea.raw_weights.astype(np.float32), eb.raw_weights.astype(np.float32)
            )


def test_roundtrip_preserves_everything(tmp_path, tiny_model):
    out = tmp_path / "model.cpool"
    write_compressed_model(tiny_model, out)
    _assert_models_equal(tiny_model, read_compressed_model(out))


def test_roundtrip_with_exempt_and_sparsity(tmp_path):
    path = fixtures.mlp2(str(tmp_path))
    manifest = read_manifest(path)
    cfg = PoolConfig(seed=3, sparsity=0.875)
    model = compress_model(manifest, cfg, exempt=("fc2",))
    out = tmp_path / "model.cpool"
    write_compressed_model(model, out)
    _assert_models_equal(model, read_compressed_model(out))


def test_scales_roundtrip_exactly(tmp_path, tiny_model):
    # scales travel as JSON floats, which carry float64 exactly
    out = tmp_path / "model.cpool"
    write_compressed_model(tiny_model, out)
    back = read_compressed_model(out)
    for ea, eb in zip(tiny_model.layers, back.layers):
        if ea.compressed is not None:
            assert eb.compressed.scales.mav_w == ea.compressed.scales.mav_w
            assert eb.compressed.scales.mav_e == ea.compressed.scales.mav_e


def test_rewrite_is_byte_identical(tmp_path, tiny_model):
    a, b = tmp_path / "a.cpool", tmp_path / "b.cpool"
    write_compressed_model(tiny_model, a)
    write_compressed_model(read_compressed_model(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_codes_length_matches_bit_budget(tiny_model):
    cfg = tiny_model.config
    bits_per_vec = cfg.index_bits + cfg.kept_per_vector
    for entry in tiny_model.layers:
        if entry.compressed is None:
            continue
        data = encode_layer_codes(entry.compressed, cfg.index_bits)
        assert len(data) == math.ceil(entry.compressed.n_vectors * bits_per_vec / 8)


def test_codes_roundtrip_values():
    from cimpool.compress import CompressedLayer, ScaleSet

    g = np.random.Generator(np.random.Philox(key=99))
    indices = g.integers(0, 32, size=50)
    plane = (2 * g.integers(0, 2, size=(50, 64)) - 1).astype(np.int8)
    cl = CompressedLayer(
        name="x", indices=indices, error_plane=plane,
        scales=ScaleSet(mav_w=1.0, mav_e=1.0), sparsity=0.5,
        c_out=50, c_in=128, kernel_h=1, kernel_w=1, vector_size=128,
    )
    data = encode_layer_codes(cl, 5)
    got_idx, got_plane = decode_layer_codes(data, 50, 5, 64)
    assert np.array_equal(got_idx, indices)
    assert np.array_equal(got_plane, plane)


def test_encode_rejects_oversized_index():
    from cimpool.compress import CompressedLayer, ScaleSet

    cl = CompressedLayer(
        name="x", indices=np.array([32]), error_plane=np.zeros((1, 0), dtype=np.int8),
        scales=ScaleSet(mav_w=1.0, mav_e=0.0), sparsity=1.0,
        c_out=1, c_in=128, kernel_h=1, kernel_w=1, vector_size=128,
    )
    with pytest.raises(FormatError, match="exceeds 5 bits"):
        encode_layer_codes(cl, 5)


def test_read_rejects_truncation(tmp_path, tiny_model):
    out = tmp_path / "model.cpool"
    write_compressed_model(tiny_model, out)
    raw = out.read_bytes()
    clipped = tmp_path / "clipped.cpool"
    clipped.write_bytes(raw[: len(raw) - 40])
    with pytest.raises(FormatError):
        read_compressed_model(clipped)


def test_read_rejects_wrong_magic(tmp_path):
    bad = tmp_path / "bad.cpool"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        read_compressed_model(bad)


def test_read_rejects_unknown_format(tmp_path, tiny_model):
    out = tmp_path / "model.cpool"
    write_compressed_model(tiny_model, out)
    raw = bytearray(out.read_bytes())
    pos = raw.find(b"cpool/1")
    raw[pos : pos + 7] = b"cpool/9"
    out.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="unsupported"):
        read_compressed_model(out)
