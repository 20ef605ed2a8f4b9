import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from cimpool.compress import (
    PackedLayer,
    ScaleSet,
    assign_layer,
    assign_tile,
    compress_layer,
    compress_model,
    compute_error,
    pack_layer,
    quantize_and_prune_error,
    reconstruct,
    reconstruct_weights,
    unpack_layer,
)
from cimpool.interchange import LayerSpec, read_manifest
from cimpool.pool import PoolConfig, generate_pool
from cimpool import fixtures

from helpers import conv_spec, dense_spec, rng, small_pool


# ---------------------------------------------------------------- packing

def test_pack_dense_no_padding():
    w = rng(1).normal(size=(128, 128))
    packed = pack_layer(dense_spec(), w, 128)
    assert packed.n_vectors == 128
    assert np.array_equal(packed.vectors, w)
    assert packed.valid_mask().all()
    assert packed.origin(5) == (5, 0, 0)


def test_pack_conv_zero_pads_channels():
    w = rng(2).normal(size=(128, 64, 3, 3))
    packed = pack_layer(conv_spec(c_in=64, c_out=128), w, 128)
    assert packed.n_vectors == 128 * 9
    assert np.all(packed.vectors[:, 64:] == 0)
    assert not packed.valid_mask()[:, 64:].any()
    assert packed.valid_mask()[:, :64].all()
    # vector for (spatial s, filter f): channels at kernel tap s
    s, f = 4, 17
    ky, kx = divmod(s, 3)
    assert np.array_equal(packed.vectors[s * 128 + f, :64], w[f, :, ky, kx])
    assert packed.origin(s * 128 + f) == (f, s, 0)


def test_pack_multi_channel_tile_roundtrip():
    w = rng(3).normal(size=(32, 256, 3, 3))
    packed = pack_layer(conv_spec(c_in=256, c_out=32), w, 128)
    assert packed.n_channel_tiles == 2
    assert packed.n_vectors == 32 * 9 * 2
    assert np.array_equal(unpack_layer(packed), w)


def test_pack_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="weight shape"):
        pack_layer(dense_spec(), np.zeros((64, 128)), 128)


def test_unpack_inverts_pack_on_ragged_channels():
    w = rng(4).normal(size=(10, 100, 1, 1))
    spec = LayerSpec(name="c", kind="conv2d", c_in=100, c_out=10)
    packed = pack_layer(spec, w, 128)
    assert np.array_equal(unpack_layer(packed), w)


# ---------------------------------------------------------------- assignment

def test_assign_forced_by_uniqueness():
    # second vector prefers row 0 but must take row 1
    cfg, pool = small_pool(p=2, v=2, gs=2, cells=[[1, 1], [1, -1]])
    vecs = np.array([[0.9, 0.8], [1.0, 0.7]])
    idx = assign_tile(vecs, pool, ScaleSet(mav_w=1.0, mav_e=0.0))
    assert idx.tolist() == [0, 1]


def test_assign_identical_vectors_still_bijective():
    cfg = PoolConfig(seed=5)
    pool = generate_pool(cfg)
    vecs = np.tile(rng(6).normal(size=(1, 128)), (128, 1))
    idx = assign_tile(vecs, pool, ScaleSet(mav_w=0.1, mav_e=0.0))
    for g in range(4):
        assert sorted(idx[g * 32 : (g + 1) * 32].tolist()) == list(range(32))


def test_assign_tie_breaks_to_lowest_row():
    cfg = PoolConfig(seed=7)
    pool = generate_pool(cfg)
    # zero vectors are equidistant from every scaled row
    idx = assign_tile(np.zeros((128, 128)), pool, ScaleSet(mav_w=0.3, mav_e=0.0))
    assert np.array_equal(idx, np.tile(np.arange(32), 4))


def test_assign_rejects_wrong_tile_size():
    pool = generate_pool(PoolConfig(seed=0))
    with pytest.raises(ValueError, match="tile shape"):
        assign_tile(np.zeros((64, 128)), pool, ScaleSet(mav_w=1.0, mav_e=0.0))


def _greedy_group_cost(block, scaled):
    taken, cost = set(), 0.0
    for i in range(len(block)):
        dists = ((block[i] - scaled) ** 2).sum(axis=1)
        pick = min((j for j in range(len(scaled)) if j not in taken), key=lambda j: (dists[j], j))
        taken.add(pick)
        cost += dists[pick]
    return cost


def test_greedy_between_hungarian_and_identity():
    cfg = PoolConfig(seed=11)
    pool = generate_pool(cfg)
    g = rng(12)
    for trial in range(100):
        block = g.normal(0, 0.1, size=(32, 128))
        mav_w = float(np.mean(np.abs(block)))
        scaled = mav_w * pool.group_rows(0).astype(np.float64)
        costs = ((block[:, None, :] - scaled[None, :, :]) ** 2).sum(axis=2)

        tile = np.zeros((128, 128))
        tile[:32] = block
        idx = assign_tile(tile, pool, ScaleSet(mav_w=mav_w, mav_e=0.0))[:32]
        greedy_cost = costs[np.arange(32), idx].sum()

        rows, cols = linear_sum_assignment(costs)
        optimal = costs[rows, cols].sum()
        identity = costs[np.arange(32), np.arange(32)].sum()
        assert greedy_cost >= optimal - 1e-9
        assert greedy_cost <= identity + 1e-9
        # cross-check the production greedy against an independent loop
        assert greedy_cost == pytest.approx(_greedy_group_cost(block, scaled))


def test_assign_layer_bijective_per_tile_and_deterministic():
    cfg = PoolConfig(seed=13)
    pool = generate_pool(cfg)
    w = rng(14).normal(0, 0.1, size=(200, 150, 3, 3))
    spec = LayerSpec(name="c", kind="conv2d", c_in=150, c_out=200, kernel_h=3, kernel_w=3)
    packed = pack_layer(spec, w, 128)
    scales = ScaleSet(mav_w=float(np.mean(np.abs(w))), mav_e=0.0)
    idx = assign_layer(packed, pool, scales)
    idx2 = assign_layer(packed, pool, scales)
    assert np.array_equal(idx, idx2)
    assert idx.min() >= 0 and idx.max() < 32
    # bijectivity within every (spatial, channel-tile, filter-tile) tile
    t = packed.n_channel_tiles
    for s in range(9):
        for ct in range(t):
            for ft in range(2):
                filters = np.arange(ft * 128, min((ft + 1) * 128, 200))
                ids = (s * 200 + filters) * t + ct
                for g in range(4):
                    in_group = filters % 128 // 32 == g
                    got = idx[ids[in_group]]
                    assert len(set(got.tolist())) == len(got)


# ---------------------------------------------------------------- error term

def test_compute_error_direct_example():
    cfg, pool = small_pool(p=2, v=2, gs=2, cells=[[1, 1], [1, -1]])
    packed = PackedLayer(vectors=np.array([[0.9, 0.8]]), c_out=1, c_in=2, kernel_h=1, kernel_w=1, vector_size=2)
    e = compute_error(packed, pool, np.array([0]), ScaleSet(mav_w=0.85, mav_e=0.0))
    assert np.allclose(e, [[0.05, -0.05]])


def test_compute_error_identity_case():
    cfg = PoolConfig(seed=17)
    pool = generate_pool(cfg)
    w = 0.2 * pool.cells[:128].astype(np.float64)
    packed = pack_layer(dense_spec(), w, 128)
    scales = ScaleSet(mav_w=0.2, mav_e=0.0)
    idx = assign_layer(packed, pool, scales)
    e = compute_error(packed, pool, idx, scales)
    assert np.abs(e).max() < 1e-12


def test_reconstruction_identity_random():
    cfg = PoolConfig(seed=19)
    pool = generate_pool(cfg)
    w = rng(20).normal(0, 0.1, size=(128, 128))
    packed = pack_layer(dense_spec(), w, 128)
    scales = ScaleSet(mav_w=float(np.mean(np.abs(w))), mav_e=0.0)
    idx = assign_layer(packed, pool, scales)
    e = compute_error(packed, pool, idx, scales)
    rows = pool.cells[(np.arange(128) % 128) // 32 * 32 + idx].astype(np.float64)
    assert np.allclose(w, scales.mav_w * rows + e, atol=1e-9)


def test_quantize_kept_positions():
    e = rng(21).normal(size=(3, 8))
    plane, _ = quantize_and_prune_error(e, 0.5)
    assert plane.shape == (3, 4)
    assert np.array_equal(plane, np.where(e[:, [0, 2, 4, 6]] >= 0, 1, -1))
    plane, _ = quantize_and_prune_error(e, 0.75)
    assert plane.shape == (3, 2)
    assert np.array_equal(plane, np.where(e[:, [0, 4]] >= 0, 1, -1))


def test_quantize_direct_example_and_sign_zero():
    e = np.array([[0.3, -0.1, 0.2, -0.4]])
    plane, mav_e = quantize_and_prune_error(e, 0.0)
    assert mav_e == pytest.approx(0.25)
    assert plane.tolist() == [[1, -1, 1, -1]]
    plane, _ = quantize_and_prune_error(np.array([[0.0, -0.0]]), 0.0)
    assert plane.tolist() == [[1, 1]]


def test_quantize_valid_mask_excludes_padding():
    e = np.array([[1.0, 1.0, 5.0, 5.0]])
    mask = np.array([[True, True, False, False]])
    _, mav_e = quantize_and_prune_error(e, 0.0, mask)
    assert mav_e == pytest.approx(1.0)
    _, mav_all = quantize_and_prune_error(e, 0.0)
    assert mav_all == pytest.approx(3.0)


def test_quantize_rejects_unsupported_sparsity():
    with pytest.raises(ValueError):
        quantize_and_prune_error(np.zeros((1, 8)), 0.3)


# ---------------------------------------------------------------- reconstruct

def _compress_dense(seed, sparsity=0.0, s=1.0, c=128):
    cfg = PoolConfig(seed=0, sparsity=sparsity, error_scale=s)
    pool = generate_pool(cfg)
    w = rng(seed).normal(0, 0.1, size=(c, 128))
    spec = dense_spec(c_in=128, c_out=c)
    return w, compress_layer(spec, w, cfg, pool), pool


def test_reconstruct_two_element_exact():
    cfg, pool = small_pool(p=2, v=2, gs=2, cells=[[1, 1], [1, -1]], sparsity=0.0)
    w = np.array([[0.9, 0.8]])
    spec = LayerSpec(name="t", kind="dense", c_in=2, c_out=1)
    cl = compress_layer(spec, w, cfg, pool)
    # mav_w=0.85 picks row0; residual [0.05,-0.05] quantizes exactly
    assert reconstruct(cl, pool) == pytest.approx(w)


def test_reconstruct_sparsity_one_is_pool_only():
    cfg = PoolConfig(seed=0, sparsity=1.0)
    pool = generate_pool(cfg)
    w = rng(23).normal(0, 0.1, size=(128, 128))
    cl = compress_layer(dense_spec(), w, cfg, pool)
    rows = pool.cells[(np.arange(128) // 32) * 32 + cl.indices].astype(np.float64)
    assert np.array_equal(reconstruct(cl, pool), cl.scales.mav_w * rows)


def test_mse_identity_sparsity_zero():
    for seed in range(5):
        w, cl, pool = _compress_dense(seed + 30)
        w_rc = reconstruct_weights(cl, pool)
        residual = ((w - w_rc) ** 2).sum()
        e = w - cl.scales.mav_w * pool.cells[cl.pool_rows(pool.config)].astype(np.float64)
        expect = (e**2).sum() - e.size * cl.scales.mav_e**2
        assert residual == pytest.approx(expect, rel=1e-5)


def test_residual_monotone_in_sparsity():
    w = rng(40).normal(0, 0.1, size=(128, 128))
    spec = dense_spec()
    errs = []
    for sparsity in (0.875, 0.75, 0.5, 0.0):
        cfg = PoolConfig(seed=0, sparsity=sparsity)
        pool = generate_pool(cfg)
        cl = compress_layer(spec, w, cfg, pool)
        errs.append(((w - reconstruct_weights(cl, pool)) ** 2).sum())
    assert errs == sorted(errs, reverse=True)


def test_pipeline_homogeneity():
    w, cl, pool = _compress_dense(50, sparsity=0.5)
    w2, cl2, _ = (2 * w, compress_layer(dense_spec(), 2 * w, pool.config, pool), None)
    assert np.array_equal(cl.indices, cl2.indices)
    assert cl2.scales.mav_w == pytest.approx(2 * cl.scales.mav_w, rel=1e-12)
    assert cl2.scales.mav_e == pytest.approx(2 * cl.scales.mav_e, rel=1e-12)
    assert reconstruct(cl2, pool) == pytest.approx(2 * reconstruct(cl, pool), rel=1e-12)


# ---------------------------------------------------------------- model level

def test_compress_model_empty(tmp_path):
    from cimpool.interchange import ModelManifest, write_manifest

    path = tmp_path / "empty.cmodel"
    write_manifest(ModelManifest(layers=[]), path)
    model = compress_model(read_manifest(path))
    assert model.layers == []


def test_compress_model_deterministic(tmp_path):
    path = fixtures.tinycnn(str(tmp_path))
    manifest = read_manifest(path)
    a = compress_model(manifest)
    b = compress_model(manifest)
    for ea, eb in zip(a.layers, b.layers):
        if ea.compressed is None:
            assert eb.compressed is None
            continue
        assert np.array_equal(ea.compressed.indices, eb.compressed.indices)
        assert np.array_equal(ea.compressed.error_plane, eb.compressed.error_plane)
        assert ea.compressed.scales == eb.compressed.scales


def test_compress_model_exempt_keeps_raw(tmp_path):
    path = fixtures.mlp2(str(tmp_path))
    model = compress_model(read_manifest(path), exempt=("fc1",))
    assert model.layer("fc1").compressed is None
    assert model.layer("fc1").raw_weights is not None
    assert model.layer("fc2").compressed is not None


def test_compress_model_names_failing_layer(tmp_path, monkeypatch):
    import cimpool.compress as compress_mod

    path = fixtures.mlp2(str(tmp_path))
    manifest = read_manifest(path)

    def boom(*args, **kwargs):
        raise ValueError("synthetic failure")

    monkeypatch.setattr(compress_mod, "assign_layer", boom)
    with pytest.raises(ValueError, match="layer 'fc1'.*synthetic failure"):
        compress_model(manifest)
