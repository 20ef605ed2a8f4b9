import numpy as np

from cimpool.interchange import LayerSpec
from cimpool.pool import PoolConfig, generate_pool


def rng(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def small_pool(p=4, v=4, gs=2, cells=None, seed=0, sparsity=0.5):
    cfg = PoolConfig(vector_size=v, pool_size=p, group_size=gs, seed=seed, sparsity=sparsity)
    if cells is None:
        return cfg, generate_pool(cfg)
    from cimpool.pool import WeightPool

    return cfg, WeightPool(config=cfg, cells=np.asarray(cells, dtype=np.int8))


def dense_spec(name="fc", c_in=128, c_out=128):
    return LayerSpec(name=name, kind="dense", c_in=c_in, c_out=c_out)


def conv_spec(name="conv", c_in=64, c_out=128, k=3, stride=1, padding=1):
    return LayerSpec(
        name=name,
        kind="conv2d",
        c_in=c_in,
        c_out=c_out,
        kernel_h=k,
        kernel_w=k,
        stride=stride,
        padding=padding,
    )


def on_grid_input(shape, seed, act_bits=8):
    """Random activations lying exactly on their quantization grid."""
    g = rng(seed)
    hi = (1 << act_bits) - 1
    q = g.integers(0, hi + 1, size=shape)
    q.flat[int(g.integers(0, q.size))] = hi  # pin the max so the scale is exact
    scale = float(g.uniform(0.001, 2.0)) / hi
    return q.astype(np.float64) * scale
