import pytest

from cimpool.pool import PoolConfig, generate_pool


@pytest.fixture
def default_pool():
    return generate_pool(PoolConfig(seed=0))
