"""Command-line entry point: compress, run, cost, inspect, gen-fixtures."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import container, cost, executor, fixtures, interchange
from .compress import compress_model
from .pool import PoolConfig, compression_stats


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cimpool", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a .cmodel into a .cpool")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--scale-s", type=float)
    p.add_argument("--exempt", action="append", default=[], metavar="LAYER")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("run", help="run inference from a .cpool")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--adc", choices=["ideal", "saturating"], default="ideal")
    p.add_argument("--reference", action="store_true", help="float oracle instead of the array path")
    p.add_argument("--trace", metavar="TRACE_JSON")
    p.add_argument("--disable-permutation", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("cost", help="energy/area report from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--calib", help="calibration JSON (default: packaged, or $CIMPOOL_CALIB)")
    p.add_argument("--scheme", action="append", default=[], help="scheme name; repeatable")
    p.add_argument("--params", type=float, help="weight count (default: calibration value)")
    p.add_argument("-o", "--output", metavar="REPORT_JSON")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("inspect", help="print the header/summary of an artifact")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("gen-fixtures", help="write the desk-scale test corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--json", action="store_true")
    return parser


def _emit(doc: dict, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(text)


def cmd_compress(args) -> int:
    manifest = interchange.read_manifest(args.model)
    cfg_doc = dict(manifest.pool_config)
    cfg_doc.setdefault("seed", manifest.pool_seed)
    if args.sparsity is not None:
        cfg_doc["sparsity"] = args.sparsity
    if args.seed is not None:
        cfg_doc["seed"] = args.seed
    if args.group_size is not None:
        cfg_doc["group_size"] = args.group_size
    if args.scale_s is not None:
        cfg_doc["error_scale"] = args.scale_s
    config = PoolConfig.from_json(cfg_doc)
    model = compress_model(manifest, config, exempt=tuple(args.exempt))
    container.write_compressed_model(model, args.output)
    stats = compression_stats(config)
    layers = [
        {
            "name": e.spec.name,
            "n_vectors": e.compressed.n_vectors,
            "mav_w": e.compressed.scales.mav_w,
            "mav_e": e.compressed.scales.mav_e,
        }
        for e in model.layers
        if e.compressed is not None
    ]
    doc = {
        "output": args.output,
        "sparsity": config.sparsity,
        "bits_per_vector": stats["bits_per_vector"],
        "compression_ratio_vs_8bit": stats["compression_ratio_vs_8bit"],
        "storage_bits": executor.model_storage_bits(model),
        "layers": layers,
    }
    _emit(
        doc,
        args.json,
        f"{args.output}: {len(layers)} compressed layers, "
        f"{stats['bits_per_vector']:g} bits/vector, "
        f"{stats['compression_ratio_vs_8bit']:.2f}x vs 8-bit",
    )
    return 0


def cmd_run(args) -> int:
    model = container.read_compressed_model(args.model)
    record = interchange.read_tensor(args.input)
    x = np.asarray(record.data, dtype=np.float64)
    if args.reference:
        mode = "reference"
    elif args.adc == "saturating":
        mode = "cim_saturating"
    else:
        mode = "cim_ideal"
    out, trace = executor.run_network(
        model, x, mode=mode, disable_permutation=args.disable_permutation
    )
    if args.output:
        interchange.write_tensor(
            interchange.TensorRecord(name="output", dtype="float32", data=out.astype(np.float32)),
            args.output,
        )
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as f:
            json.dump(trace.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
    doc = {
        "mode": mode,
        "output": args.output,
        "shape": list(out.shape),
        "min": float(out.min()),
        "max": float(out.max()),
        "input_cycles": trace.scheduler.input_cycles,
        "tiles": trace.tiles,
    }
    _emit(
        doc,
        args.json,
        f"{mode}: output {tuple(out.shape)}, range [{out.min():.4g}, {out.max():.4g}], "
        f"{trace.tiles} tiles, {trace.scheduler.input_cycles} input cycles",
    )
    return 0


def cmd_cost(args) -> int:
    calib = cost.load_calibration(args.calib)
    config = cost.config_from_calibration(calib)
    schemes = cost.schemes_from_calibration(calib)
    wanted = args.scheme or list(schemes)
    with open(args.trace, "r", encoding="utf-8") as f:
        trace = executor.ExecutionTrace.from_json(json.load(f))
    n_params = args.params if args.params is not None else float(calib.get("resnet18_params", 0.0))
    reports = []
    for name in wanted:
        if name not in schemes:
            raise ValueError(f"unknown scheme {name!r}; calibration defines {sorted(schemes)}")
        reports.append(cost.total_report(trace, n_params, schemes[name], config))
    doc = {"params": n_params, "reports": [r.to_json() for r in reports]}
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    _emit(doc, args.json, cost.format_report_table(reports))
    return 0


def cmd_inspect(args) -> int:
    path = args.file
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == interchange.TENSOR_MAGIC:
        header = interchange.read_tensor_header(path)
        doc = {"type": "tensor", **header}
        text = f"{path}: tensor {header['name']!r} {header['dtype']} {tuple(header['shape'])}"
    elif magic == container.POOL_MAGIC:
        model = container.read_compressed_model(path)
        stats = compression_stats(model.config)
        doc = {
            "type": "compressed_model",
            "pool_config": model.config.to_json(),
            "activation_bits": model.activation_bits,
            "layers": [
                {
                    "name": e.spec.name,
                    "kind": e.spec.kind,
                    "compressed": e.compressed is not None,
                    "n_vectors": e.compressed.n_vectors if e.compressed else 0,
                }
                for e in model.layers
            ],
            "bits_per_vector": stats["bits_per_vector"],
            "compression_ratio_vs_8bit": stats["compression_ratio_vs_8bit"],
            "storage_bits": executor.model_storage_bits(model),
        }
        text = (
            f"{path}: {len(model.layers)} layers, sparsity {model.config.sparsity:g}, "
            f"{stats['bits_per_vector']:g} bits/vector ({stats['compression_ratio_vs_8bit']:.2f}x), "
            f"{doc['storage_bits']} storage bits"
        )
    else:
        manifest = interchange.read_manifest(path)
        doc = {
            "type": "manifest",
            "pool_seed": manifest.pool_seed,
            "activation_bits": manifest.activation_bits,
            "layers": [s.to_json() for s in manifest.layers],
            "violations": interchange.validate_manifest(manifest),
        }
        text = f"{path}: manifest with {len(manifest.layers)} layers, no violations"
    _emit(doc, args.json, text)
    return 0


def cmd_gen_fixtures(args) -> int:
    paths = fixtures.generate_all(args.output)
    doc = {"fixtures": paths}
    lines = [f"{name}: {p['model']}" for name, p in paths.items()]
    _emit(doc, args.json, "\n".join(lines))
    return 0


HANDLERS = {
    "compress": cmd_compress,
    "run": cmd_run,
    "cost": cmd_cost,
    "inspect": cmd_inspect,
    "gen-fixtures": cmd_gen_fixtures,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return HANDLERS[args.command](args)
    except (interchange.FormatError, ValueError, KeyError, OSError, OverflowError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
