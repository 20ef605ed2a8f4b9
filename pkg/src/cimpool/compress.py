"""Layer compression against a shared pool.

A layer's weights are packed into channel-direction vectors, each vector is
assigned a unique pool row within its array tile, and the residual against
the scaled pool row is kept as a pruned 1-bit error plane plus two per-layer
scales (mean absolute value of the weights and of the error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .interchange import LayerSpec, ModelManifest, load_layer_bias, load_layer_weights
from .pool import PoolConfig, WeightPool, generate_pool


@dataclass(frozen=True)
class ScaleSet:
    """Per-layer scales: mav_w for the pool term, s*mav_e for the error term."""

    mav_w: float
    mav_e: float
    s: float = 1.0


@dataclass
class PackedLayer:
    """Channel-direction vectors in (spatial, filter, channel-tile) order."""

    vectors: np.ndarray  # (n_vectors, vector_size) float64
    c_out: int
    c_in: int
    kernel_h: int
    kernel_w: int
    vector_size: int

    @property
    def n_channel_tiles(self) -> int:
        return math.ceil(self.c_in / self.vector_size)

    @property
    def n_spatial(self) -> int:
        return self.kernel_h * self.kernel_w

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]

    def origin(self, v: int) -> tuple[int, int, int]:
        """Vector index -> (filter, spatial position, channel-tile)."""
        t = self.n_channel_tiles
        return (v // t) % self.c_out, v // (t * self.c_out), v % t

    def valid_mask(self) -> np.ndarray:
        """True where a vector element holds a real channel, False at padding."""
        tiles = np.arange(self.n_vectors) % self.n_channel_tiles
        chans = tiles[:, None] * self.vector_size + np.arange(self.vector_size)[None, :]
        return chans < self.c_in


def pack_layer(spec: LayerSpec, weights, vector_size: int) -> PackedLayer:
    """Slice a weight tensor into zero-padded channel vectors."""
    w = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    if w.shape != spec.weight_shape():
        raise ValueError(
            f"layer {spec.name!r}: weight shape {w.shape}, expected {spec.weight_shape()}"
        )
    if w.ndim == 2:
        w = w[:, :, None, None]
    c_out, c_in, kh, kw = w.shape
    tiles = math.ceil(c_in / vector_size)
    padded = np.zeros((c_out, tiles * vector_size, kh, kw))
    padded[:, :c_in] = w
    # (spatial, filter, channel-tile) with channels contiguous inside a vector
    vectors = padded.transpose(2, 3, 0, 1).reshape(-1, vector_size)
    return PackedLayer(
        vectors=vectors,
        c_out=c_out,
        c_in=c_in,
        kernel_h=kh,
        kernel_w=kw,
        vector_size=vector_size,
    )


def unpack_layer(packed: PackedLayer) -> np.ndarray:
    """Rebuild the weight tensor from packed vectors (inverse of pack_layer)."""
    t, v = packed.n_channel_tiles, packed.vector_size
    full = packed.vectors.reshape(packed.kernel_h, packed.kernel_w, packed.c_out, t * v)
    return full.transpose(2, 3, 0, 1)[:, : packed.c_in]


def assign_tile(vectors: np.ndarray, pool: WeightPool, scales: ScaleSet) -> np.ndarray:
    """Greedy non-repeating assignment of one tile of vectors to pool rows.

    Vector i may only use rows of group i // group_size.  Each vector takes
    the unused row with the smallest squared distance to the mav_w-scaled
    row; ties go to the lowest row index.  Returns group-local indices.
    """
    cfg = pool.config
    if vectors.shape != (cfg.pool_size, cfg.vector_size):
        raise ValueError(
            f"tile shape {vectors.shape}, expected {(cfg.pool_size, cfg.vector_size)}"
        )
    gs = cfg.group_size
    indices = np.empty(cfg.pool_size, dtype=np.int64)
    for g in range(cfg.n_groups):
        block = vectors[g * gs : (g + 1) * gs]
        scaled = scales.mav_w * pool.group_rows(g).astype(np.float64)
        costs = ((block[:, None, :] - scaled[None, :, :]) ** 2).sum(axis=2)
        taken = np.zeros(gs, dtype=bool)
        for i in range(gs):
            row_costs = np.where(taken, np.inf, costs[i])
            pick = int(np.argmin(row_costs))  # argmin returns the lowest index on ties
            taken[pick] = True
            indices[g * gs + i] = pick
    return indices


def assign_layer(packed: PackedLayer, pool: WeightPool, scales: ScaleSet) -> np.ndarray:
    """Assign every vector of a layer, tiling as the array schedule does.

    A tile is one (spatial position, channel-tile, filter-tile) block of up
    to pool_size vectors in filter order; deficient tiles are padded with
    zero vectors whose assignments are dropped.
    """
    cfg = pool.config
    p = cfg.pool_size
    n_ftiles = math.ceil(packed.c_out / p)
    t = packed.n_channel_tiles
    indices = np.empty(packed.n_vectors, dtype=np.int64)
    for s in range(packed.n_spatial):
        for ct in range(t):
            for ft in range(n_ftiles):
                filters = np.arange(ft * p, min((ft + 1) * p, packed.c_out))
                ids = (s * packed.c_out + filters) * t + ct
                tile = np.zeros((p, cfg.vector_size))
                tile[: len(ids)] = packed.vectors[ids]
                indices[ids] = assign_tile(tile, pool, scales)[: len(ids)]
    return indices


def pool_rows_for(packed_or_cl, indices: np.ndarray, cfg: PoolConfig) -> np.ndarray:
    """Absolute pool row per vector: group of the filter column, plus index."""
    obj = packed_or_cl
    t = obj.n_channel_tiles
    n = len(indices)
    filters = (np.arange(n) // t) % obj.c_out
    groups = (filters % cfg.pool_size) // cfg.group_size
    return groups * cfg.group_size + indices


def compute_error(
    packed: PackedLayer, pool: WeightPool, indices: np.ndarray, scales: ScaleSet
) -> np.ndarray:
    """Residual of each vector against its scaled pool row."""
    rows = pool_rows_for(packed, indices, pool.config)
    return packed.vectors - scales.mav_w * pool.cells[rows].astype(np.float64)


def quantize_and_prune_error(
    E: np.ndarray, sparsity: float, valid_mask: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """1-bit error plane at kept channels, plus the layer's mean |E|.

    mav_e is taken before pruning; valid_mask (when given) excludes padded
    channel slots from the mean so padding cannot skew the scale.  Kept
    channels are every (1/(1-sparsity))-th one; sign(0) counts as +1.
    """
    cfg = PoolConfig(vector_size=E.shape[1], sparsity=sparsity)
    if valid_mask is None:
        mav_e = float(np.mean(np.abs(E))) if E.size else 0.0
    else:
        mav_e = float(np.mean(np.abs(E[valid_mask]))) if valid_mask.any() else 0.0
    kept = cfg.kept_channels()
    plane = np.where(E[:, kept] >= 0, 1, -1).astype(np.int8)
    return plane, mav_e


@dataclass
class CompressedLayer:
    """Pool indices, pruned 1-bit error plane, and scales for one layer."""

    name: str
    indices: np.ndarray  # (n_vectors,) group-local, in [0, group_size)
    error_plane: np.ndarray  # (n_vectors, n_kept) int8 in {-1, +1}
    scales: ScaleSet
    sparsity: float
    c_out: int
    c_in: int
    kernel_h: int
    kernel_w: int
    vector_size: int

    @property
    def n_channel_tiles(self) -> int:
        return math.ceil(self.c_in / self.vector_size)

    @property
    def n_vectors(self) -> int:
        return len(self.indices)

    def pool_rows(self, cfg: PoolConfig) -> np.ndarray:
        return pool_rows_for(self, self.indices, cfg)


def reconstruct(cl: CompressedLayer, pool: WeightPool) -> np.ndarray:
    """Packed-vector view of the decompressed weights."""
    cfg = pool.config
    rows = cl.pool_rows(cfg)
    w_rc = cl.scales.mav_w * pool.cells[rows].astype(np.float64)
    kept = PoolConfig(vector_size=cl.vector_size, sparsity=cl.sparsity).kept_channels()
    if kept.size:
        w_rc[:, kept] += cl.scales.s * cl.scales.mav_e * cl.error_plane
    return w_rc


def reconstruct_weights(cl: CompressedLayer, pool: WeightPool) -> np.ndarray:
    """Decompressed weight tensor in the layer's natural shape."""
    vecs = reconstruct(cl, pool)
    packed = PackedLayer(
        vectors=vecs,
        c_out=cl.c_out,
        c_in=cl.c_in,
        kernel_h=cl.kernel_h,
        kernel_w=cl.kernel_w,
        vector_size=cl.vector_size,
    )
    w = unpack_layer(packed)
    if cl.kernel_h == 1 and cl.kernel_w == 1:
        return w[:, :, 0, 0]
    return w


def compress_layer(
    spec: LayerSpec, weights, config: PoolConfig, pool: WeightPool
) -> CompressedLayer:
    w = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    packed = pack_layer(spec, w, config.vector_size)
    scales = ScaleSet(mav_w=float(np.mean(np.abs(w))), mav_e=0.0, s=config.error_scale)
    indices = assign_layer(packed, pool, scales)
    E = compute_error(packed, pool, indices, scales)
    plane, mav_e = quantize_and_prune_error(E, config.sparsity, packed.valid_mask())
    return CompressedLayer(
        name=spec.name,
        indices=indices,
        error_plane=plane,
        scales=replace(scales, mav_e=mav_e),
        sparsity=config.sparsity,
        c_out=packed.c_out,
        c_in=packed.c_in,
        kernel_h=packed.kernel_h,
        kernel_w=packed.kernel_w,
        vector_size=packed.vector_size,
    )


@dataclass
class ModelLayer:
    """One manifest layer with its compressed form, or raw weights if exempt."""

    spec: LayerSpec
    compressed: CompressedLayer | None = None
    raw_weights: np.ndarray | None = None
    bias: np.ndarray | None = None


@dataclass
class CompressedModel:
    config: PoolConfig
    activation_bits: int
    layers: list[ModelLayer]

    def layer(self, name: str) -> ModelLayer:
        for entry in self.layers:
            if entry.spec.name == name:
                return entry
        raise KeyError(name)


def compress_model(
    manifest: ModelManifest,
    config: PoolConfig | None = None,
    exempt: tuple[str, ...] = (),
) -> CompressedModel:
    """Compress every weight layer of a model against one shared pool.

    Layers named in `exempt` keep their float weights; pass-through layers
    (add/pool) carry no payload.  Deterministic for a fixed seed.
    """
    if config is None:
        cfg_doc = dict(manifest.pool_config)
        cfg_doc.setdefault("seed", manifest.pool_seed)
        config = PoolConfig.from_json(cfg_doc)
    pool = generate_pool(config)
    out = []
    for spec in manifest.layers:
        bias = load_layer_bias(manifest, spec)
        if not spec.has_weights:
            out.append(ModelLayer(spec=spec, bias=bias))
            continue
        w = load_layer_weights(manifest, spec)
        if spec.name in exempt:
            out.append(ModelLayer(spec=spec, raw_weights=w, bias=bias))
            continue
        try:
            cl = compress_layer(spec, w, config, pool)
        except Exception as e:
            raise type(e)(f"layer {spec.name!r}: {e}") from e
        out.append(ModelLayer(spec=spec, compressed=cl, bias=bias))
    return CompressedModel(
        config=config, activation_bits=manifest.activation_bits, layers=out
    )
