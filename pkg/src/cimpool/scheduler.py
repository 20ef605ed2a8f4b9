"""Output permutation scheduler: ping-pong buffer plus grouped selectors.

Array outputs arrive in pool-row order and must be restored to filter order.
A ping-pong buffer holds the vectors produced during one drain window; each
buffered vector is permuted by M group selectors working in parallel (one
value per group per cycle), all sharing one index stream.  With N columns,
A-bit inputs and M groups, a bank of N/(A*M) vectors fills in exactly the
N/M cycles the other bank needs to drain, so the scheduler keeps up with
the array at one vector per input cycle after the initial fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SchedulerConfig:
    pool_width: int = 128  # N: array columns = values per output vector
    act_bits: int = 8  # A: bit-serial cycles per input cycle
    groups: int = 4  # M: parallel selectors per buffered vector
    out_bytes: int = 1  # bytes per buffered output element

    def __post_init__(self):
        if min(self.pool_width, self.act_bits, self.groups, self.out_bytes) < 1:
            raise ValueError("scheduler config fields must be positive")
        if self.pool_width % self.groups:
            raise ValueError(
                f"pool_width {self.pool_width} not divisible by groups {self.groups}"
            )

    @property
    def group_width(self) -> int:
        return self.pool_width // self.groups


@dataclass(frozen=True)
class BufferGeometry:
    vectors_per_bank: int
    total_bytes: int
    fill_latency_input_cycles: int


def buffer_geometry(config: SchedulerConfig) -> BufferGeometry:
    n, a, m = config.pool_width, config.act_bits, config.groups
    if n % (a * m):
        raise ValueError(f"pool_width {n} not divisible by act_bits*groups {a * m}")
    vpb = n // (a * m)
    return BufferGeometry(
        vectors_per_bank=vpb,
        total_bytes=2 * vpb * n * config.out_bytes,
        fill_latency_input_cycles=vpb,
    )


@dataclass(frozen=True)
class PermutationMap:
    """col_of_filter[f] is the array column whose output belongs to filter f."""

    col_of_filter: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.col_of_filter, dtype=np.int64)
        n = len(cols)
        if not np.array_equal(np.sort(cols), np.arange(n)):
            raise ValueError("col_of_filter is not a permutation")
        object.__setattr__(self, "col_of_filter", cols)
        cols.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.col_of_filter)

    @property
    def filter_of_col(self) -> np.ndarray:
        inv = np.empty(self.n, dtype=np.int64)
        inv[self.col_of_filter] = np.arange(self.n)
        return inv

    def respects_groups(self, groups: int) -> bool:
        width = self.n // groups
        f = np.arange(self.n)
        return bool(np.all(f // width == self.col_of_filter // width))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.col_of_filter, np.arange(self.n)))

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls(col_of_filter=np.arange(n))


def permute_vector(y: np.ndarray, pmap: PermutationMap) -> np.ndarray:
    """Restore one output vector to filter order."""
    y = np.asarray(y)
    if y.shape[0] != pmap.n:
        raise ValueError(f"vector length {y.shape[0]}, map expects {pmap.n}")
    return y[pmap.col_of_filter]


def permute_block(ys: np.ndarray, pmap: PermutationMap) -> np.ndarray:
    """Permute many output vectors at once (rows are vectors)."""
    if ys.shape[-1] != pmap.n:
        raise ValueError(f"vector length {ys.shape[-1]}, map expects {pmap.n}")
    return ys[..., pmap.col_of_filter]


@dataclass
class CycleStats:
    """Scheduler timing report; cycles are input cycles unless stated."""

    input_cycles: int = 0
    bit_cycles: int = 0
    fill_input_cycles: int = 0
    vectors: int = 0
    stalls: int = 0
    fills: int = 0
    flushes: int = 0
    index_reloads: int = 0
    buffer_bytes: int = 0
    selector_reads: int = 0

    @property
    def throughput(self) -> float:
        return self.vectors / self.input_cycles if self.input_cycles else 0.0

    def add(self, other: "CycleStats") -> None:
        for name in (
            "input_cycles",
            "bit_cycles",
            "vectors",
            "stalls",
            "fills",
            "flushes",
            "index_reloads",
            "selector_reads",
        ):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.fill_input_cycles = max(self.fill_input_cycles, other.fill_input_cycles)
        self.buffer_bytes = max(self.buffer_bytes, other.buffer_bytes)

    def to_json(self) -> dict:
        return {
            "input_cycles": self.input_cycles,
            "bit_cycles": self.bit_cycles,
            "fill_input_cycles": self.fill_input_cycles,
            "vectors": self.vectors,
            "stalls": self.stalls,
            "fills": self.fills,
            "flushes": self.flushes,
            "index_reloads": self.index_reloads,
            "buffer_bytes": self.buffer_bytes,
            "selector_reads": self.selector_reads,
            "throughput": self.throughput,
        }


def stream_stats(config: SchedulerConfig, n_vectors: int) -> CycleStats:
    """Closed-form timing for one tile's stream of n_vectors output vectors.

    Banks swap on a fixed cadence of vectors_per_bank input cycles; a
    trailing partial bank is flushed (drained short) in one extra window.
    Validated cycle-for-cycle against simulate_stream.
    """
    geo = buffer_geometry(config)
    vpb = geo.vectors_per_bank
    if n_vectors == 0:
        return CycleStats(buffer_bytes=geo.total_bytes, index_reloads=1)
    windows = math.ceil(n_vectors / vpb)
    input_cycles = (windows + 1) * vpb
    return CycleStats(
        input_cycles=input_cycles,
        bit_cycles=input_cycles * config.act_bits,
        fill_input_cycles=vpb,
        vectors=n_vectors,
        stalls=0,
        fills=windows,
        flushes=1 if n_vectors % vpb else 0,
        index_reloads=1,
        buffer_bytes=geo.total_bytes,
        selector_reads=n_vectors * config.pool_width,
    )


def simulate_stream(
    config: SchedulerConfig, pmap: PermutationMap, producer: np.ndarray
) -> tuple[np.ndarray, CycleStats]:
    """Cycle-stepped model of one tile's stream through the scheduler.

    The producer array holds one output vector per input cycle, in array
    (column) order.  Returns the permuted vectors in order plus timing.
    Asserts ping-pong safety (no bank read and written in the same cycle)
    and that the shared index registers are loaded once for the whole tile.
    """
    producer = np.asarray(producer)
    if producer.ndim != 2 or producer.shape[1] != config.pool_width:
        raise ValueError(f"producer must be (T, {config.pool_width})")
    if not pmap.respects_groups(config.groups):
        raise ValueError("permutation map crosses group boundaries")
    geo = buffer_geometry(config)
    vpb, a, m = geo.vectors_per_bank, config.act_bits, config.groups
    gw = config.group_width
    window = vpb * a  # bit-serial cycles; equals gw by construction
    t_total = producer.shape[0]
    if t_total == 0:
        return producer.copy(), stream_stats(config, 0)

    # index registers, loaded once for the tile: at drain step c the group-g
    # selector reads column cols_at[g, c] and emits filter channel chan[g, c]
    chan = np.arange(m)[:, None] * gw + np.arange(gw)[None, :]
    cols_at = pmap.col_of_filter[chan]

    banks: list[list] = [[None] * vpb, [None] * vpb]
    bank_busy = [False, False]  # draining this window
    out = np.zeros_like(producer)
    stats = CycleStats(
        fill_input_cycles=vpb, buffer_bytes=geo.total_bytes, index_reloads=1
    )
    n_windows = math.ceil(t_total / vpb) + 1
    for w in range(n_windows):
        fill_bank, drain_bank = w % 2, 1 - w % 2
        drain_ids = range((w - 1) * vpb, min(w * vpb, t_total)) if w else range(0)
        bank_busy[drain_bank] = len(drain_ids) > 0
        if bank_busy[drain_bank] and len(drain_ids) < vpb:
            stats.flushes += 1
        filled_any = False
        for c in range(window):
            # fill side: a vector lands on its last bit-serial cycle
            if c % a == a - 1:
                i = w * vpb + c // a
                if i < t_total:
                    assert not bank_busy[fill_bank], "write into draining bank"
                    banks[fill_bank][i % vpb] = producer[i]
                    filled_any = True
            # drain side: one value per group per buffered vector
            if c < gw:
                for i in drain_ids:
                    stored = banks[drain_bank][i % vpb]
                    out[i, chan[:, c]] = stored[cols_at[:, c]]
                    stats.selector_reads += m
        if filled_any:
            stats.fills += 1
        bank_busy[drain_bank] = False
        stats.input_cycles += vpb
        stats.bit_cycles += window
    stats.vectors = t_total
    # identical timing must fall out of the closed form
    ref = stream_stats(config, t_total)
    assert stats.input_cycles == ref.input_cycles, "cycle model diverged"
    return out, stats
