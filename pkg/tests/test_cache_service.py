"""
Unit tests for the kernel power cache.
"""

import numpy as np
import pytest

from cltlab.services.cache_service import PowerCache


@pytest.fixture
def base():
    return np.array([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.0, 0.4, 0.6]])


class TestPowerCache:
    """Tests for PowerCache."""

    def test_pinned_powers(self, base):
        cache = PowerCache(base)
        assert np.array_equal(cache.power(0), np.eye(3))
        assert np.array_equal(cache.power(1), base)
        assert cache.get_stats()["misses"] == 0

    def test_power_matches_matrix_power(self, base):
        cache = PowerCache(base)
        for k in (2, 5, 13, 64):
            assert np.allclose(cache.power(k), np.linalg.matrix_power(base, k), atol=1e-14)

    def test_repeat_request_hits(self, base):
        cache = PowerCache(base)
        cache.power(6)
        misses = cache.get_stats()["misses"]
        cache.power(6)
        stats = cache.get_stats()
        assert stats["misses"] == misses
        assert stats["hits"] >= 1

    def test_entries_are_read_only(self, base):
        cache = PowerCache(base)
        with pytest.raises(ValueError):
            cache.power(3)[0, 0] = 1.0

    def test_lru_eviction(self, base):
        cache = PowerCache(base, max_entries=2)
        cache.set(3, base @ base @ base)
        cache.set(5, np.linalg.matrix_power(base, 5))
        cache.set(7, np.linalg.matrix_power(base, 7))
        assert cache.get(3) is None
        assert cache.get(7) is not None
        assert cache.get_stats()["entries"] == 2

    def test_clear(self, base):
        cache = PowerCache(base)
        cache.power(4)
        cache.clear()
        stats = cache.get_stats()
        assert stats["entries"] == 0
        assert stats["hits"] == 0
        assert stats["misses"] == 0
