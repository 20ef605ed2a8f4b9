"""Turn a torch checkpoint into a `.cmodel` tree plus a statistics sidecar.

Accepted checkpoints: a state dict saved with torch.save, optionally
wrapped in {"state_dict": ...} or paired with a layer list under "arch".
Conv/dense layers are read from 4-d/2-d weight tensors; bare state dicts
carry no stride or padding, so inferred convs default to stride 1 and
half-kernel padding.  Anything else must be declared in an arch list or
is skipped/failed per the unsupported-operator policy.  Weights are
written as float32 exactly as stored; nothing is quantized or pruned.

An arch list is a JSON array (or {"layers": [...]}) of entries like
{"name": "conv1", "kind": "conv2d", "stride": 1, "padding": 1}; weight
kinds default to tensors "<name>.weight"/"<name>.bias" and may override
them with "weight"/"bias" keys.  Pass-through kinds (maxpool2d,
avgpool2d, add) inherit their channel count from the previous layer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .formats import (
    LAYER_KINDS,
    WEIGHT_KINDS,
    LayerEntry,
    stats_path,
    write_manifest,
    write_stats,
    write_tensor_f32,
)


class ExportError(ValueError):
    """Raised when a checkpoint cannot be exported as described."""


@dataclass
class ExportJob:
    """A resolved export: ordered layers plus the skipped-operator log."""

    layers: list[LayerEntry]
    skipped: list[str] = field(default_factory=list)
    pool_seed: int = 0
    activation_bits: int = 8


def _to_numpy(value):
    import torch

    if isinstance(value, torch.Tensor):
        t = value.detach().cpu()
        if t.is_floating_point():
            t = t.to(torch.float32)
        return t.numpy()
    return value


def load_checkpoint(path: str | os.PathLike):
    """Read a torch checkpoint; returns (declared arch or None, state dict)."""
    import torch

    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, json.JSONDecodeError) as e:
        raise ExportError(f"{path}: cannot read checkpoint ({e})") from e
    arch = None
    if isinstance(obj, dict) and "arch" in obj:
        arch = obj["arch"]
        state = obj.get("state", obj.get("state_dict"))
        if state is None:
            raise ExportError(f"{path}: arch present but no state/state_dict mapping")
    elif isinstance(obj, dict) and "state_dict" in obj:
        state = obj["state_dict"]
    elif isinstance(obj, dict):
        state = obj
    else:
        raise ExportError(f"{path}: checkpoint is not a tensor mapping")
    if not isinstance(state, dict):
        raise ExportError(f"{path}: state is {type(state).__name__}, expected a mapping")
    return arch, {str(k): _to_numpy(v) for k, v in state.items()}


def _weight_kind(w) -> str | None:
    if isinstance(w, np.ndarray) and np.issubdtype(w.dtype, np.floating):
        if w.ndim == 4:
            return "conv2d"
        if w.ndim == 2:
            return "dense"
    return None


def _check_bias(name: str, bias, c_out: int):
    if bias is None:
        return None
    bias = np.asarray(bias)
    if bias.ndim != 1 or bias.shape[0] != c_out:
        raise ExportError(
            f"{name}: bias shape {tuple(bias.shape)} does not match {c_out} outputs"
        )
    return bias


def infer_layers(state: dict) -> tuple[list[LayerEntry], list[str]]:
    """Group state-dict keys by module; returns (layers, unsupported labels)."""
    modules: dict[str, dict] = {}
    for key, val in state.items():
        mod, _, param = key.rpartition(".")
        if not mod:
            mod, param = key, "weight" if _weight_kind(val) else key
        modules.setdefault(mod, {})[param] = val
    layers, unsupported = [], []
    for mod, params in modules.items():
        w = params.get("weight")
        kind = _weight_kind(w)
        extras = sorted(set(params) - {"weight", "bias"})
        if kind is None:
            ndim = w.ndim if isinstance(w, np.ndarray) else None
            reason = f"{ndim}-d weight" if ndim is not None else "no weight tensor"
            unsupported.append(f"{mod} ({reason})")
            continue
        if extras:
            unsupported.append(f"{mod} (unexpected parameters: {', '.join(extras)})")
            continue
        if kind == "conv2d":
            c_out, c_in, kh, kw = w.shape
            entry = LayerEntry(mod, kind, c_in, c_out, kh, kw, stride=1, padding=kh // 2)
        else:
            c_out, c_in = w.shape
            entry = LayerEntry(mod, kind, c_in, c_out)
        entry.weights = w
        entry.bias = _check_bias(mod, params.get("bias"), c_out)
        layers.append(entry)
    return layers, unsupported


def resolve_layers(arch, state: dict) -> tuple[list[LayerEntry], list[str]]:
    """Bind a declared arch list to checkpoint tensors."""
    if isinstance(arch, dict):
        arch = arch.get("layers", arch)
    if not isinstance(arch, list):
        raise ExportError(f"arch must be a list of layer entries, got {type(arch).__name__}")
    layers, unsupported = [], []
    prev_c_out = None
    for d in arch:
        if not isinstance(d, dict) or "name" not in d:
            raise ExportError(f"arch entry {d!r} has no name")
        name, kind = str(d["name"]), d.get("kind")
        if kind not in LAYER_KINDS:
            unsupported.append(f"{name} (kind {kind!r})")
            continue
        if kind in WEIGHT_KINDS:
            wkey = d.get("weight", f"{name}.weight")
            w = state.get(wkey)
            if w is None:
                raise ExportError(f"{name}: tensor {wkey!r} not found in checkpoint")
            if _weight_kind(w) != kind:
                shape = tuple(w.shape) if isinstance(w, np.ndarray) else type(w).__name__
                raise ExportError(f"{name}: {kind} cannot use tensor {wkey!r} of shape {shape}")
            if kind == "conv2d":
                c_out, c_in, kh, kw = w.shape
            else:
                (c_out, c_in), (kh, kw) = w.shape, (1, 1)
            for dim, actual in (("c_in", c_in), ("c_out", c_out),
                                ("kernel_h", kh), ("kernel_w", kw)):
                if dim in d and int(d[dim]) != actual:
                    raise ExportError(
                        f"{name}: declared {dim}={d[dim]} but tensor {wkey!r} has {actual}"
                    )
            entry = LayerEntry(
                name, kind, c_in, c_out, kh, kw,
                stride=int(d.get("stride", 1)), padding=int(d.get("padding", 0)),
            )
            entry.weights = w
            bkey = d.get("bias", f"{name}.bias")
            entry.bias = _check_bias(name, state.get(bkey) if bkey else None, c_out)
        else:
            c_in = int(d.get("c_in", 0) or prev_c_out or 0)
            if c_in < 1:
                raise ExportError(f"{name}: pass-through layer needs c_in (none to inherit)")
            entry = LayerEntry(
                name, kind, c_in, int(d.get("c_out", c_in)),
                kernel_h=int(d.get("kernel_h", 1)), kernel_w=int(d.get("kernel_w", 1)),
                stride=int(d.get("stride", 1)), padding=int(d.get("padding", 0)),
                skip_from=d.get("skip_from"),
            )
            if kind == "add" and entry.skip_from is None:
                raise ExportError(f"{name}: add layer needs skip_from")
        layers.append(entry)
        prev_c_out = entry.c_out
    return layers, unsupported


def layer_stats(entry: LayerEntry) -> dict:
    """Reference statistics for one weighted layer, as the compressor recomputes them."""
    w = np.asarray(entry.weights, dtype=np.float32)
    return {
        "name": entry.name,
        "mav_w": float(np.mean(np.abs(w.astype(np.float64)))),
        "n_weights": int(w.size),
    }


def export_job(job: ExportJob, out_path: str | os.PathLike) -> dict:
    """Write the manifest, tensor directory, and stats sidecar for a job."""
    out_path = os.fspath(out_path)
    base, stem = os.path.dirname(out_path), os.path.splitext(os.path.basename(out_path))[0]
    tensor_dir = os.path.join(base, stem + ".tensors")
    os.makedirs(tensor_dir, exist_ok=True)
    layer_docs, stats = [], []
    for e in job.layers:
        wfile = bfile = None
        if e.kind in WEIGHT_KINDS:
            wfile = f"{e.name}.weight.cwt"
            write_tensor_f32(f"{e.name}.weight", e.weights, os.path.join(tensor_dir, wfile))
            if e.bias is not None:
                bfile = f"{e.name}.bias.cwt"
                write_tensor_f32(f"{e.name}.bias", e.bias, os.path.join(tensor_dir, bfile))
            stats.append(layer_stats(e))
        layer_docs.append(e.manifest_entry(wfile, bfile))
    write_manifest(
        layer_docs, out_path, pool_seed=job.pool_seed, activation_bits=job.activation_bits
    )
    write_stats(stats, stats_path(out_path))
    return {
        "output": out_path,
        "stats": stats_path(out_path),
        "tensor_dir": tensor_dir,
        "layers": [e.name for e in job.layers],
        "skipped": job.skipped,
    }


def export_checkpoint(
    ckpt_path: str | os.PathLike,
    out_path: str | os.PathLike,
    arch=None,
    skip_unsupported: bool = False,
    pool_seed: int = 0,
    activation_bits: int = 8,
) -> dict:
    """Load, resolve, and export a checkpoint; returns a summary dict."""
    declared, state = load_checkpoint(ckpt_path)
    if arch is not None:
        declared = arch
    if declared is None:
        layers, unsupported = infer_layers(state)
    else:
        layers, unsupported = resolve_layers(declared, state)
    if unsupported and not skip_unsupported:
        raise ExportError(
            "unsupported operators: " + "; ".join(unsupported)
            + " (use --skip-unsupported to drop them)"
        )
    if not layers:
        raise ExportError(f"{ckpt_path}: no exportable layers")
    job = ExportJob(
        layers, skipped=unsupported, pool_seed=pool_seed, activation_bits=activation_bits
    )
    return export_job(job, out_path)


def load_arch_file(path: str | os.PathLike):
    """Read an arch list from a JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ExportError(f"{path}: malformed arch file ({e})") from e
