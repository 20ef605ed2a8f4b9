"""Deterministic desk-scale models and inputs for tests and demos."""

from __future__ import annotations

import os

import numpy as np

from .interchange import (
    LayerSpec,
    ModelManifest,
    TensorRecord,
    write_manifest,
    write_tensor,
)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def make_weights(shape: tuple[int, ...], seed: int, scale: float = 0.1) -> np.ndarray:
    return (rng_for(seed).normal(0.0, scale, size=shape)).astype(np.float32)


def make_input(shape: tuple[int, ...], seed: int) -> np.ndarray:
    # non-negative, matching the unsigned activation convention
    return rng_for(seed).uniform(0.0, 1.0, size=shape).astype(np.float32)


def write_model(
    out_dir: str,
    name: str,
    layers: list[tuple[LayerSpec, np.ndarray | None, np.ndarray | None]],
    pool_config: dict | None = None,
    pool_seed: int = 0,
    activation_bits: int = 8,
) -> str:
    """Write tensors plus manifest; returns the `.cmodel` path."""
    tensor_dir = os.path.join(out_dir, f"{name}.tensors")
    os.makedirs(tensor_dir, exist_ok=True)
    specs = []
    for spec, w, b in layers:
        if w is not None:
            spec.weights = f"{spec.name}.weight.cwt"
            write_tensor(
                TensorRecord(name=f"{spec.name}.weight", dtype="float32", data=w),
                os.path.join(tensor_dir, spec.weights),
            )
        if b is not None:
            spec.bias = f"{spec.name}.bias.cwt"
            write_tensor(
                TensorRecord(name=f"{spec.name}.bias", dtype="float32", data=b),
                os.path.join(tensor_dir, spec.bias),
            )
        specs.append(spec)
    manifest = ModelManifest(
        layers=specs,
        pool_seed=pool_seed,
        pool_config=pool_config or {},
        activation_bits=activation_bits,
    )
    path = os.path.join(out_dir, f"{name}.cmodel")
    write_manifest(manifest, path, tensor_dir=f"{name}.tensors")
    return path


def dense128(out_dir: str, seed: int = 7) -> str:
    layers = [
        (
            LayerSpec(name="fc", kind="dense", c_in=128, c_out=128),
            make_weights((128, 128), seed),
            make_weights((128,), seed + 1),
        )
    ]
    return write_model(out_dir, "dense128", layers)


def mlp2(out_dir: str, seed: int = 11) -> str:
    layers = [
        (
            LayerSpec(name="fc1", kind="dense", c_in=64, c_out=96),
            make_weights((96, 64), seed),
            make_weights((96,), seed + 1),
        ),
        (
            LayerSpec(name="fc2", kind="dense", c_in=96, c_out=10),
            make_weights((10, 96), seed + 2),
            None,
        ),
    ]
    return write_model(out_dir, "mlp2", layers)


def tinycnn(out_dir: str, seed: int = 23) -> str:
    layers = [
        (
            LayerSpec(name="conv1", kind="conv2d", c_in=16, c_out=32, kernel_h=3, kernel_w=3, padding=1),
            make_weights((32, 16, 3, 3), seed),
            make_weights((32,), seed + 1),
        ),
        (
            LayerSpec(name="pool1", kind="maxpool2d", c_in=32, c_out=32, kernel_h=2, kernel_w=2, stride=2),
            None,
            None,
        ),
        (
            LayerSpec(name="conv2", kind="conv2d", c_in=32, c_out=64, kernel_h=3, kernel_w=3, padding=1),
            make_weights((64, 32, 3, 3), seed + 2),
            make_weights((64,), seed + 3),
        ),
        (
            LayerSpec(name="pool2", kind="avgpool2d", c_in=64, c_out=64, kernel_h=4, kernel_w=4, stride=4),
            None,
            None,
        ),
        (
            LayerSpec(name="head", kind="dense", c_in=64 * 2 * 2, c_out=10),
            make_weights((10, 64 * 2 * 2), seed + 4),
            None,
        ),
    ]
    return write_model(out_dir, "tinycnn", layers)


def skipnet(out_dir: str, seed: int = 41) -> str:
    layers = [
        (
            LayerSpec(name="conv_a", kind="conv2d", c_in=16, c_out=16, kernel_h=3, kernel_w=3, padding=1),
            make_weights((16, 16, 3, 3), seed),
            None,
        ),
        (
            LayerSpec(name="conv_b", kind="conv2d", c_in=16, c_out=16, kernel_h=3, kernel_w=3, padding=1),
            make_weights((16, 16, 3, 3), seed + 1),
            None,
        ),
        (
            LayerSpec(name="join", kind="add", c_in=16, c_out=16, skip_from="conv_a"),
            None,
            None,
        ),
        (
            LayerSpec(name="head", kind="dense", c_in=16 * 8 * 8, c_out=10),
            make_weights((10, 16 * 8 * 8), seed + 2),
            None,
        ),
    ]
    return write_model(out_dir, "skipnet", layers)


def widecnn(out_dir: str, seed: int = 57) -> str:
    """Channel and filter counts above 128 exercise multi-tile paths."""
    layers = [
        (
            LayerSpec(name="conv1", kind="conv2d", c_in=160, c_out=192, kernel_h=3, kernel_w=3, padding=1),
            make_weights((192, 160, 3, 3), seed),
            None,
        ),
        (
            LayerSpec(name="conv2", kind="conv2d", c_in=192, c_out=144, kernel_h=1, kernel_w=1),
            make_weights((144, 192, 1, 1), seed + 1),
            None,
        ),
    ]
    return write_model(out_dir, "widecnn", layers)


INPUT_SHAPES = {
    "dense128": (128,),
    "mlp2": (64,),
    "tinycnn": (16, 16, 16),
    "skipnet": (16, 8, 8),
    "widecnn": (160, 4, 4),
}

MAKERS = {
    "dense128": dense128,
    "mlp2": mlp2,
    "tinycnn": tinycnn,
    "skipnet": skipnet,
    "widecnn": widecnn,
}


def generate_all(out_dir: str, input_seed: int = 101) -> dict[str, dict[str, str]]:
    """Write every fixture model plus a matching input tensor."""
    os.makedirs(out_dir, exist_ok=True)
    out = {}
    for name, maker in MAKERS.items():
        model_path = maker(out_dir)
        x = make_input(INPUT_SHAPES[name], input_seed)
        input_path = os.path.join(out_dir, f"{name}.input.cwt")
        write_tensor(TensorRecord(name=f"{name}.input", dtype="float32", data=x), input_path)
        out[name] = {"model": model_path, "input": input_path}
    return out
