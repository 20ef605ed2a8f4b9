"""Maps compressed layers onto the two-array datapath and runs inference.

Weight-stationary schedule: one tile is (spatial kernel position,
channel-tile, filter-tile).  The pool array is loaded once per run and its
outputs are restored to filter order by the scheduler permutation; the error
array is reloaded per tile.  Partial sums stay integer per array and are
combined in float64 by the digital accumulator:

    out = act_scale * (mav_w * pool_sum + s * mav_e * error_sum) + bias

Activations are unsigned A-bit; each layer input is requantized with a
per-layer scale taken from a one-pass max-abs calibration run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cim_array import AdcModel, BitSerialConfig, CimArray, bit_serial_matmul
from .compress import CompressedLayer, CompressedModel, ModelLayer, reconstruct_weights
from .pool import PoolConfig, generate_pool
from .scheduler import CycleStats, PermutationMap, SchedulerConfig, permute_block, stream_stats

INT32_LIMIT = 2**31


@dataclass
class Tile:
    """One weight-stationary step: a 128-filter block at one kernel tap."""

    layer: str
    spatial: tuple[int, int]  # (ky, kx)
    channel_tile: int
    filter_tile: int
    pmap: PermutationMap
    error_cells: np.ndarray  # (kept_rows, pool_width) int8 in {-1, +1}
    vector_ids: np.ndarray  # packed-vector id per valid filter column
    valid_filters: int
    valid_rows: int  # real input channels; rows beyond are zero-fed
    zero_rows: int


@dataclass
class TileSchedule:
    tiles: list[Tile]

    def tiles_for(self, layer: str) -> list[Tile]:
        return [t for t in self.tiles if t.layer == layer]


def tile_permutation(cl: CompressedLayer, cfg: PoolConfig, s: int, ct: int, ft: int) -> PermutationMap:
    """Column-of-filter map for one tile, padded columns taking leftover rows."""
    p, gs = cfg.pool_size, cfg.group_size
    t = cl.n_channel_tiles
    n_valid = min(p, cl.c_out - ft * p)
    filters = np.arange(ft * p, ft * p + n_valid)
    ids = (s * cl.c_out + filters) * t + ct
    col = np.full(p, -1, dtype=np.int64)
    col[:n_valid] = cl.pool_rows(cfg)[ids]
    for g in range(p // gs):
        members = np.arange(g * gs, (g + 1) * gs)
        free = sorted(set(range(g * gs, (g + 1) * gs)) - set(col[members][col[members] >= 0].tolist()))
        holes = members[col[members] < 0]
        col[holes] = free[: len(holes)]
    return PermutationMap(col_of_filter=col)


def build_schedule(model: CompressedModel) -> TileSchedule:
    """All tiles of all compressed layers, in execution order."""
    cfg = model.config
    p = cfg.pool_size
    kept = cfg.kept_channels()
    tiles = []
    for entry in model.layers:
        cl = entry.compressed
        if cl is None:
            continue
        t = cl.n_channel_tiles
        n_ftiles = math.ceil(cl.c_out / p)
        for ky in range(cl.kernel_h):
            for kx in range(cl.kernel_w):
                s = ky * cl.kernel_w + kx
                for ct in range(t):
                    valid_rows = min(cfg.vector_size, cl.c_in - ct * cfg.vector_size)
                    for ft in range(n_ftiles):
                        n_valid = min(p, cl.c_out - ft * p)
                        filters = np.arange(ft * p, ft * p + n_valid)
                        ids = (s * cl.c_out + filters) * t + ct
                        cells = np.ones((len(kept), p), dtype=np.int8)
                        if len(kept):
                            cells[:, :n_valid] = cl.error_plane[ids].T
                        tiles.append(
                            Tile(
                                layer=cl.name,
                                spatial=(ky, kx),
                                channel_tile=ct,
                                filter_tile=ft,
                                pmap=tile_permutation(cl, cfg, s, ct, ft),
                                error_cells=cells,
                                vector_ids=ids,
                                valid_filters=n_valid,
                                valid_rows=valid_rows,
                                zero_rows=cfg.vector_size - valid_rows,
                            )
                        )
    return TileSchedule(tiles=tiles)


@dataclass
class ExecutionTrace:
    """Hardware activity counters for one inference."""

    mode: str = "cim_ideal"
    pool_macs: int = 0
    error_macs: int = 0
    pool_loads: int = 0
    error_reloads: int = 0
    tiles: int = 0
    act_read_bytes: int = 0
    act_write_bytes: int = 0
    dram_weight_bits: int = 0
    scheduler: CycleStats = field(default_factory=CycleStats)
    layers: list = field(default_factory=list)
    act_scales: list = field(default_factory=list)  # per-layer input requant scale

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "pool_macs": self.pool_macs,
            "error_macs": self.error_macs,
            "pool_loads": self.pool_loads,
            "error_reloads": self.error_reloads,
            "tiles": self.tiles,
            "act_read_bytes": self.act_read_bytes,
            "act_write_bytes": self.act_write_bytes,
            "dram_weight_bits": self.dram_weight_bits,
            "scheduler": self.scheduler.to_json(),
            "layers": self.layers,
            "act_scales": self.act_scales,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExecutionTrace":
        sched = CycleStats()
        for k, v in doc.get("scheduler", {}).items():
            if hasattr(sched, k) and k != "throughput":
                setattr(sched, k, v)
        return cls(
            mode=doc.get("mode", "cim_ideal"),
            pool_macs=int(doc.get("pool_macs", 0)),
            error_macs=int(doc.get("error_macs", 0)),
            pool_loads=int(doc.get("pool_loads", 0)),
            error_reloads=int(doc.get("error_reloads", 0)),
            tiles=int(doc.get("tiles", 0)),
            act_read_bytes=int(doc.get("act_read_bytes", 0)),
            act_write_bytes=int(doc.get("act_write_bytes", 0)),
            dram_weight_bits=int(doc.get("dram_weight_bits", 0)),
            scheduler=sched,
            layers=list(doc.get("layers", [])),
            act_scales=list(doc.get("act_scales", [])),
        )


def conv2d_reference(x: np.ndarray, w: np.ndarray, bias, stride: int, padding: int) -> np.ndarray:
    """Dense float convolution (im2col), the oracle for the array path."""
    c_in, h, wd = x.shape
    c_out, wc_in, kh, kw = w.shape
    if wc_in != c_in:
        raise ValueError(f"input has {c_in} channels, weights expect {wc_in}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel does not fit input")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c_in * kh * kw, ho * wo))
    for ky in range(kh):
        for kx in range(kw):
            patch = xp[:, ky : ky + ho * stride : stride, kx : kx + wo * stride : stride]
            cols[(ky * kw + kx) * c_in : (ky * kw + kx + 1) * c_in] = patch.reshape(c_in, -1)
    wmat = w.transpose(2, 3, 0, 1).reshape(kh * kw, c_out, c_in)
    wflat = np.concatenate([wmat[s] for s in range(kh * kw)], axis=1)
    out = (wflat @ cols).reshape(c_out, ho, wo)
    if bias is not None:
        out += bias[:, None, None]
    return out


def run_layer_reference(x: np.ndarray, w_rc: np.ndarray, spec, bias=None) -> np.ndarray:
    """Float forward of one weight layer with explicit weights."""
    if spec.kind == "dense":
        flat = x.reshape(-1)
        if flat.shape[0] != spec.c_in:
            raise ValueError(f"dense layer {spec.name!r}: input size {flat.shape[0]}, expected {spec.c_in}")
        out = w_rc @ flat
        if bias is not None:
            out = out + bias
        return out
    if spec.kind == "conv2d":
        if w_rc.ndim == 2:  # 1x1 kernels reconstruct without the kernel dims
            w_rc = w_rc[:, :, None, None]
        return conv2d_reference(x, w_rc, bias, spec.stride, spec.padding)
    raise ValueError(f"unsupported layer kind {spec.kind!r}")


def _pool2d(x: np.ndarray, spec) -> np.ndarray:
    kh, kw, st, pd = spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
    c, h, w = x.shape
    ho = (h + 2 * pd - kh) // st + 1
    wo = (w + 2 * pd - kw) // st + 1
    if spec.kind == "maxpool2d":
        xp = np.pad(x, ((0, 0), (pd, pd), (pd, pd)), constant_values=-np.inf)
        reduce = np.maximum
        acc = np.full((c, ho, wo), -np.inf)
    else:
        xp = np.pad(x, ((0, 0), (pd, pd), (pd, pd)))
        reduce = np.add
        acc = np.zeros((c, ho, wo))
    for ky in range(kh):
        for kx in range(kw):
            acc = reduce(acc, xp[:, ky : ky + ho * st : st, kx : kx + wo * st : st])
    if spec.kind == "avgpool2d":
        acc = acc / (kh * kw)
    return acc


def _quantize(x: np.ndarray, scale: float, act_bits: int) -> np.ndarray:
    if np.min(x) < -1e-9:
        raise ValueError("activations must be non-negative for unsigned quantization")
    q = np.round(x / scale)
    return np.clip(q, 0, (1 << act_bits) - 1).astype(np.int64)


def _tile_inputs(qpad: np.ndarray, tile: Tile, v: int, st: int, ho: int, wo: int) -> np.ndarray:
    """Gather the (positions, vector_size) input block for one tile."""
    ky, kx = tile.spatial
    lo = tile.channel_tile * v
    block = qpad[lo : lo + tile.valid_rows, ky : ky + ho * st : st, kx : kx + wo * st : st]
    x = np.zeros((ho * wo, v), dtype=np.int64)
    x[:, : tile.valid_rows] = block.reshape(tile.valid_rows, -1).T
    return x


def run_layer_cim(
    x: np.ndarray,
    scale: float,
    entry: ModelLayer,
    tiles: list[Tile],
    pool_array: CimArray,
    adc: AdcModel,
    bs_cfg: BitSerialConfig,
    sched_cfg: SchedulerConfig,
    trace: ExecutionTrace,
    error_array: CimArray | None = None,
    disable_permutation: bool = False,
) -> np.ndarray:
    """One weight layer through both arrays; returns float outputs with bias."""
    spec = entry.spec
    cl = entry.compressed
    cfg_v = cl.vector_size
    kept = cl_config(cl).kept_channels()
    if spec.kind == "dense":
        flat = x.reshape(-1)
        if flat.shape[0] != spec.c_in:
            raise ValueError(
                f"dense layer {spec.name!r}: input size {flat.shape[0]}, expected {spec.c_in}"
            )
        x = flat.reshape(spec.c_in, 1, 1)
        st, pd = 1, 0
    else:
        st, pd = spec.stride, spec.padding
    c_in, h, w = x.shape
    ho = (h + 2 * pd - cl.kernel_h) // st + 1
    wo = (w + 2 * pd - cl.kernel_w) // st + 1
    n_pos = ho * wo

    q = _quantize(x, scale, bs_cfg.act_bits)
    qpad = np.pad(q, ((0, 0), (pd, pd), (pd, pd)))

    acc_pool = np.zeros((cl.c_out, n_pos), dtype=np.int64)
    acc_err = np.zeros((cl.c_out, n_pos), dtype=np.int64)
    pool_cache: dict[tuple, np.ndarray] = {}
    layer_sched = CycleStats()
    n = sched_cfg.pool_width
    for tile in tiles:
        key = (tile.spatial, tile.channel_tile)
        if key not in pool_cache:
            xin = _tile_inputs(qpad, tile, cfg_v, st, ho, wo)
            pool_cache[key] = (xin, bit_serial_matmul(pool_array.cells, xin, adc, bs_cfg))
        xin, psum = pool_cache[key]
        permuted = psum if disable_permutation else permute_block(psum, tile.pmap)
        f0 = tile.filter_tile * n
        acc_pool[f0 : f0 + tile.valid_filters] += permuted[:, : tile.valid_filters].T

        if len(kept) and error_array is not None:
            error_array.load_weights(tile.error_cells)
            esum = bit_serial_matmul(error_array.cells, xin[:, kept], adc, bs_cfg)
            acc_err[f0 : f0 + tile.valid_filters] += esum[:, : tile.valid_filters].T
            trace.error_macs += n_pos * len(kept) * n

        trace.pool_macs += n_pos * cfg_v * n
        trace.tiles += 1
        trace.act_read_bytes += n_pos * cfg_v  # one byte per activation element
        layer_sched.add(stream_stats(sched_cfg, n_pos))
    trace.scheduler.add(layer_sched)

    if max(np.abs(acc_pool).max(initial=0), np.abs(acc_err).max(initial=0)) >= INT32_LIMIT:
        raise OverflowError(f"layer {spec.name!r}: 32-bit partial-sum accumulator overflow")

    s = cl.scales
    out = scale * (s.mav_w * acc_pool.astype(np.float64) + s.s * s.mav_e * acc_err.astype(np.float64))
    out = out.reshape(cl.c_out, ho, wo)
    if entry.bias is not None:
        out += entry.bias[:, None, None]
    trace.act_write_bytes += out.size
    trace.layers.append(
        {
            "name": spec.name,
            "tiles": len(tiles),
            "positions": n_pos,
            "input_cycles": layer_sched.input_cycles,
        }
    )
    if spec.kind == "dense":
        return out.reshape(cl.c_out)
    return out


def cl_config(cl: CompressedLayer) -> PoolConfig:
    return PoolConfig(vector_size=cl.vector_size, sparsity=cl.sparsity)


def model_storage_bits(model: CompressedModel) -> int:
    """Exact weight-storage footprint of the compressed model in bits."""
    bits = 0
    for entry in model.layers:
        if entry.compressed is not None:
            cl = entry.compressed
            per_vec = model.config.index_bits + cl.error_plane.shape[1]
            bits += cl.n_vectors * per_vec
        elif entry.raw_weights is not None:
            bits += entry.raw_weights.size * 32
        if entry.bias is not None:
            bits += entry.bias.size * 32
    return bits


MODES = ("cim_ideal", "cim_saturating", "reference")


def run_network(
    model: CompressedModel,
    x: np.ndarray,
    mode: str = "cim_ideal",
    disable_permutation: bool = False,
) -> tuple[np.ndarray, ExecutionTrace]:
    """Full forward pass; returns the last layer's output and the trace.

    The layer chain applies ReLU after every conv2d/dense/add layer except
    the final one.  In cim modes each layer input is quantized with its
    calibration scale; reference mode runs the same chain in float using the
    reconstructed weights, and also provides the calibration activations.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    x = np.asarray(x, dtype=np.float64)
    pool = generate_pool(model.config)

    # reconstructed weights double as the calibration/reference path
    weights = {}
    for entry in model.layers:
        if entry.compressed is not None:
            weights[entry.spec.name] = reconstruct_weights(entry.compressed, pool)
        elif entry.raw_weights is not None:
            weights[entry.spec.name] = entry.raw_weights

    def forward_float(inp):
        acts, outs = [], {}
        cur = inp
        for i, entry in enumerate(model.layers):
            spec = entry.spec
            acts.append(np.max(np.abs(cur)) if np.size(cur) else 0.0)
            if spec.kind in ("conv2d", "dense"):
                cur = run_layer_reference(cur, weights[spec.name], spec, entry.bias)
            elif spec.kind == "add":
                cur = cur + outs[spec.skip_from]
            else:
                cur = _pool2d(cur, spec)
            if spec.kind in ("conv2d", "dense", "add") and i < len(model.layers) - 1:
                cur = np.maximum(cur, 0.0)
            outs[spec.name] = cur
        return cur, acts

    ref_out, act_maxes = forward_float(x)
    a = model.activation_bits
    scales = [m / ((1 << a) - 1) if m > 0 else 1.0 for m in act_maxes]

    trace = ExecutionTrace(mode=mode)
    trace.dram_weight_bits = model_storage_bits(model)
    trace.act_scales = [float(s) for s in scales]
    if mode == "reference":
        return ref_out, trace

    adc = AdcModel(bits=8, mode="ideal" if mode == "cim_ideal" else "saturating")
    bs_cfg = BitSerialConfig(act_bits=a)
    sched_cfg = SchedulerConfig(
        pool_width=model.config.pool_size,
        act_bits=a,
        groups=model.config.n_groups,
    )
    schedule = build_schedule(model)
    pool_array = CimArray(model.config.vector_size, model.config.pool_size)
    pool_array.load_weights(pool.cells.T)
    trace.pool_loads = pool_array.write_events
    kept_rows = model.config.kept_per_vector
    error_array = (
        CimArray(kept_rows, model.config.pool_size) if kept_rows else None
    )

    outs = {}
    cur = x
    for i, entry in enumerate(model.layers):
        spec = entry.spec
        if spec.kind in ("conv2d", "dense"):
            if entry.compressed is not None:
                cur = run_layer_cim(
                    cur,
                    scales[i],
                    entry,
                    schedule.tiles_for(spec.name),
                    pool_array,
                    adc,
                    bs_cfg,
                    sched_cfg,
                    trace,
                    error_array,
                    disable_permutation,
                )
            else:
                # exempt layer: dequantized input through the float oracle
                q = _quantize(cur, scales[i], a)
                cur = run_layer_reference(q * scales[i], weights[spec.name], spec, entry.bias)
        elif spec.kind == "add":
            cur = cur + outs[spec.skip_from]
        else:
            cur = _pool2d(cur, spec)
        if spec.kind in ("conv2d", "dense", "add") and i < len(model.layers) - 1:
            cur = np.maximum(cur, 0.0)
        outs[spec.name] = cur
    if error_array is not None:
        trace.error_reloads = error_array.write_events
    return cur, trace
