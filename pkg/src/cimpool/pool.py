"""Shared weight pool: configuration, seeded generation, storage-cost math."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# sparsity values with a uniform keep-every-Nth channel mask; 1.0 keeps nothing
SUPPORTED_SPARSITY = (0.0, 0.5, 0.75, 0.875, 1.0)


def sparsity_step(sparsity: float) -> int | None:
    """Channel stride of the keep mask, or None when nothing is kept."""
    if sparsity == 1.0:
        return None
    step = 1.0 / (1.0 - sparsity)
    if abs(step - round(step)) > 1e-9:
        raise ValueError(f"unsupported sparsity {sparsity}: 1/(1-s) must be an integer")
    return int(round(step))


@dataclass(frozen=True)
class PoolConfig:
    """Pool geometry and per-layer compression knobs."""

    vector_size: int = 128
    pool_size: int = 128
    group_size: int = 32
    seed: int = 0
    sparsity: float = 0.5
    error_scale: float = 1.0

    def __post_init__(self):
        if self.vector_size < 1 or self.pool_size < 1 or self.group_size < 1:
            raise ValueError("vector_size, pool_size, group_size must be positive")
        if self.pool_size % self.group_size:
            raise ValueError(
                f"pool_size {self.pool_size} not divisible by group_size {self.group_size}"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        sparsity_step(self.sparsity)  # validates the value
        kept = self.sparsity * self.vector_size
        if abs(kept - round(kept)) > 1e-9:
            raise ValueError(
                f"sparsity {self.sparsity} times vector_size {self.vector_size} "
                "must be an integer"
            )
        if self.error_scale <= 0:
            raise ValueError("error_scale must be positive")

    @property
    def n_groups(self) -> int:
        return self.pool_size // self.group_size

    @property
    def index_bits(self) -> int:
        bits = math.log2(self.group_size)
        if bits != int(bits):
            raise ValueError(f"group_size {self.group_size} is not a power of two")
        return int(bits)

    @property
    def kept_per_vector(self) -> int:
        step = sparsity_step(self.sparsity)
        if step is None:
            return 0
        return (self.vector_size + step - 1) // step

    def kept_channels(self) -> np.ndarray:
        step = sparsity_step(self.sparsity)
        if step is None:
            return np.empty(0, dtype=np.int64)
        return np.arange(0, self.vector_size, step, dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "vector_size": self.vector_size,
            "pool_size": self.pool_size,
            "group_size": self.group_size,
            "seed": self.seed,
            "sparsity": self.sparsity,
            "error_scale": self.error_scale,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PoolConfig":
        return cls(
            vector_size=int(d.get("vector_size", 128)),
            pool_size=int(d.get("pool_size", 128)),
            group_size=int(d.get("group_size", 32)),
            seed=int(d.get("seed", 0)),
            sparsity=float(d.get("sparsity", 0.5)),
            error_scale=float(d.get("error_scale", 1.0)),
        )


@dataclass(frozen=True)
class WeightPool:
    """Immutable pool of +-1 vectors, split into equal groups of rows."""

    config: PoolConfig
    cells: np.ndarray  # (pool_size, vector_size) int8 in {-1, +1}

    def __post_init__(self):
        expect = (self.config.pool_size, self.config.vector_size)
        if self.cells.shape != expect:
            raise ValueError(f"pool cells shape {self.cells.shape}, expected {expect}")
        if not np.all(np.abs(self.cells) == 1):
            raise ValueError("pool cells must all be -1 or +1")
        self.cells.setflags(write=False)

    def group_rows(self, group: int) -> np.ndarray:
        gs = self.config.group_size
        return self.cells[group * gs : (group + 1) * gs]

    def row(self, group: int, local_index: int) -> np.ndarray:
        return self.cells[group * self.config.group_size + local_index]


def generate_pool(config: PoolConfig) -> WeightPool:
    """Draw the pool from a Philox counter generator keyed by the seed.

    Cells are 2*integers(0,2)-1, so the exact bit pattern is reproducible
    anywhere numpy's Philox stream is available.
    """
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    bits = rng.integers(0, 2, size=(config.pool_size, config.vector_size))
    cells = (2 * bits - 1).astype(np.int8)
    return WeightPool(config=config, cells=cells)


def compression_stats(config: PoolConfig) -> dict:
    """Storage cost per packed vector and the ratio against 8-bit weights."""
    bits = config.index_bits + config.vector_size * (1.0 - config.sparsity)
    return {
        "bits_per_vector": bits,
        "compression_ratio_vs_8bit": (config.vector_size * 8) / bits,
    }
