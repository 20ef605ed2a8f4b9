"""Seeded toy checkpoints for exercising the export path end to end."""

from __future__ import annotations

import os

import numpy as np

from .export import export_checkpoint
from .formats import write_tensor_f32

# conv1 -> pool -> conv2 -> dense head; the "64" variant feeds conv2 with
# 64 channels so the compressor has to zero-pad its packed vectors
_WIDTHS = {"tinycnn": 16, "tinycnn64": 64}
INPUT_SHAPE = (3, 8, 8)

_ARCH = [
    {"name": "conv1", "kind": "conv2d", "stride": 1, "padding": 1},
    {"name": "pool1", "kind": "maxpool2d", "kernel_h": 2, "kernel_w": 2, "stride": 2},
    {"name": "conv2", "kind": "conv2d", "stride": 1, "padding": 1},
    {"name": "head", "kind": "dense"},
]

ARCHS = tuple(sorted(_WIDTHS))


def build_model(arch: str, seed: int):
    """Instantiate the seeded torch model for one fixture architecture."""
    import torch

    if arch not in _WIDTHS:
        raise ValueError(f"unknown fixture arch {arch!r}; choose from {list(ARCHS)}")
    width = _WIDTHS[arch]
    c, h, w = INPUT_SHAPE
    flat = 2 * width * (h // 2) * (w // 2)
    torch.manual_seed(seed)

    class _Net(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.conv1 = torch.nn.Conv2d(c, width, 3, padding=1)
            self.pool1 = torch.nn.MaxPool2d(2, 2)
            self.conv2 = torch.nn.Conv2d(width, 2 * width, 3, padding=1)
            self.head = torch.nn.Linear(flat, 10)

        def forward(self, x):
            x = self.pool1(torch.relu(self.conv1(x)))
            x = torch.relu(self.conv2(x))
            return self.head(x.flatten(1))

    return _Net()


def make_fixture(arch: str = "tinycnn", seed: int = 0, out_dir: str | os.PathLike = ".") -> dict:
    """Build a seeded checkpoint, export it, and write a matching input tensor."""
    import torch

    model = build_model(arch, seed)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(os.fspath(out_dir), f"{arch}-s{seed}")
    ckpt = stem + ".ckpt"
    torch.save({"arch": _ARCH, "state": model.state_dict()}, ckpt)
    summary = export_checkpoint(ckpt, stem + ".cmodel")
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(INPUT_SHAPE, generator=g).numpy()
    input_path = stem + ".input.cwt"
    write_tensor_f32("input", np.asarray(x, dtype=np.float32), input_path)
    return {
        "checkpoint": ckpt,
        "model": summary["output"],
        "stats": summary["stats"],
        "tensor_dir": summary["tensor_dir"],
        "input": input_path,
    }
