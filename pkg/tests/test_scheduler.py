import numpy as np
import pytest

from cimpool.scheduler import (
    BufferGeometry,
    CycleStats,
    PermutationMap,
    SchedulerConfig,
    buffer_geometry,
    permute_block,
    permute_vector,
    simulate_stream,
    stream_stats,
)

from helpers import rng


def random_group_map(n, groups, g):
    """Group-respecting permutation: shuffle columns within each group."""
    width = n // groups
    cols = np.arange(n)
    for k in range(groups):
        cols[k * width : (k + 1) * width] = k * width + g.permutation(width)
    return PermutationMap(col_of_filter=cols)


# ---------------------------------------------------------------- geometry

@pytest.mark.parametrize(
    "act_bits,groups,vpb,total,fill",
    [
        (1, 1, 128, 32768, 128),
        (8, 1, 16, 4096, 16),
        (8, 4, 4, 1024, 4),
    ],
)
def test_buffer_geometry_table(act_bits, groups, vpb, total, fill):
    geo = buffer_geometry(SchedulerConfig(pool_width=128, act_bits=act_bits, groups=groups))
    assert geo == BufferGeometry(
        vectors_per_bank=vpb, total_bytes=total, fill_latency_input_cycles=fill
    )


def test_buffer_geometry_two_byte_elements():
    geo = buffer_geometry(SchedulerConfig(act_bits=8, groups=4, out_bytes=2))
    assert geo.total_bytes == 2048


def test_buffer_geometry_rejects_non_divisible():
    with pytest.raises(ValueError, match="not divisible"):
        buffer_geometry(SchedulerConfig(pool_width=128, act_bits=12, groups=4))
    with pytest.raises(ValueError, match="not divisible"):
        SchedulerConfig(pool_width=126, groups=4)


# ---------------------------------------------------------------- permutation

def test_permute_vector_example():
    pmap = PermutationMap(col_of_filter=np.array([2, 0, 3, 1]))
    out = permute_vector(np.array([10, 20, 30, 40]), pmap)
    assert out.tolist() == [30, 10, 40, 20]


def test_permute_identity():
    pmap = PermutationMap.identity(8)
    y = np.arange(8) * 3
    assert np.array_equal(permute_vector(y, pmap), y)
    assert pmap.is_identity()


def test_permutation_inverse_consistency():
    g = rng(70)
    pmap = random_group_map(128, 4, g)
    y = g.normal(size=128)
    restored = permute_vector(y, pmap)
    assert np.array_equal(restored[pmap.filter_of_col], y)
    assert np.array_equal(pmap.col_of_filter[pmap.filter_of_col], np.arange(128))


def test_permute_rejects_non_permutation():
    with pytest.raises(ValueError, match="not a permutation"):
        PermutationMap(col_of_filter=np.array([0, 0, 1, 2]))


def test_permute_rejects_length_mismatch():
    pmap = PermutationMap.identity(4)
    with pytest.raises(ValueError, match="length"):
        permute_vector(np.zeros(5), pmap)


def test_respects_groups():
    good = PermutationMap(col_of_filter=np.array([1, 0, 3, 2]))
    assert good.respects_groups(2)
    crossing = PermutationMap(col_of_filter=np.array([2, 1, 0, 3]))
    assert not crossing.respects_groups(2)


def test_many_random_maps_match_gather_oracle():
    g = rng(71)
    for trial in range(1000):
        pmap = random_group_map(128, 4, g)
        y = g.normal(size=128)
        got = permute_vector(y, pmap)
        want = np.array([y[pmap.col_of_filter[f]] for f in range(128)])
        assert np.array_equal(got, want)


def test_permute_block_matches_per_vector():
    g = rng(72)
    pmap = random_group_map(128, 4, g)
    ys = g.normal(size=(7, 128))
    block = permute_block(ys, pmap)
    for i in range(7):
        assert np.array_equal(block[i], permute_vector(ys[i], pmap))


# ---------------------------------------------------------------- streaming

def test_stream_transparency_various_lengths():
    g = rng(73)
    cfg = SchedulerConfig()
    for t in (1, 2, 3, 4, 5, 8, 17, 100):
        pmap = random_group_map(128, 4, g)
        producer = g.integers(-1000, 1000, size=(t, 128))
        out, stats = simulate_stream(cfg, pmap, producer)
        assert np.array_equal(out, permute_block(producer, pmap))
        assert stats.stalls == 0
        assert stats.vectors == t


def test_stream_single_vector_latency():
    cfg = SchedulerConfig()
    pmap = PermutationMap.identity(128)
    _, stats = simulate_stream(cfg, pmap, np.zeros((1, 128)))
    assert stats.input_cycles == 8  # 4 fill + 4 drain
    assert stats.fill_input_cycles == 4
    assert stats.bit_cycles == 64


def test_stream_throughput_amortizes_fill():
    cfg = SchedulerConfig()
    pmap = PermutationMap.identity(128)
    _, stats = simulate_stream(cfg, pmap, np.zeros((100, 128)))
    assert stats.input_cycles == 104
    assert stats.throughput >= 0.95


def test_stream_steady_state_cycle_count():
    cfg = SchedulerConfig()
    geo = buffer_geometry(cfg)
    pmap = PermutationMap.identity(128)
    for t in (4, 8, 40):  # whole banks: T + vpb input cycles, no flush
        _, stats = simulate_stream(cfg, pmap, np.zeros((t, 128)))
        assert stats.input_cycles == t + geo.vectors_per_bank
        assert stats.flushes == 0
    _, stats = simulate_stream(cfg, pmap, np.zeros((6, 128)))
    assert stats.flushes == 1


def test_stream_index_loaded_once_per_tile():
    cfg = SchedulerConfig()
    pmap = PermutationMap.identity(128)
    _, stats = simulate_stream(cfg, pmap, np.zeros((37, 128)))
    assert stats.index_reloads == 1
    assert stats.selector_reads == 37 * 128


def test_stream_matches_closed_form_sweep():
    g = rng(74)
    for a, m in ((8, 4), (8, 1), (4, 2), (1, 1), (2, 4)):
        cfg = SchedulerConfig(pool_width=128, act_bits=a, groups=m)
        for t in (0, 1, 2, 5, 16, 33):
            pmap = random_group_map(128, m, g)
            producer = g.integers(0, 100, size=(t, 128))
            out, stats = simulate_stream(cfg, pmap, producer)
            ref = stream_stats(cfg, t)
            assert stats == ref, (a, m, t)
            assert np.array_equal(out, permute_block(producer, pmap))


def test_stream_rejects_crossing_map():
    cfg = SchedulerConfig()
    cols = np.arange(128)
    cols[0], cols[127] = cols[127], cols[0]
    with pytest.raises(ValueError, match="group"):
        simulate_stream(cfg, PermutationMap(col_of_filter=cols), np.zeros((2, 128)))


def test_stream_rejects_bad_producer_shape():
    cfg = SchedulerConfig()
    with pytest.raises(ValueError, match="producer"):
        simulate_stream(cfg, PermutationMap.identity(128), np.zeros((2, 64)))


def test_stats_add_accumulates():
    a = stream_stats(SchedulerConfig(), 8)
    b = stream_stats(SchedulerConfig(), 5)
    total = CycleStats()
    total.add(a)
    total.add(b)
    assert total.input_cycles == a.input_cycles + b.input_cycles
    assert total.vectors == 13
    assert total.flushes == 1
    assert total.buffer_bytes == 1024  # capacity, not a sum
    assert total.fill_input_cycles == 4
    doc = total.to_json()
    assert doc["vectors"] == 13 and "throughput" in doc
