"""
Kernel Power Cache
Caches matrix powers P^k of one kernel, keyed by exponent.

Bridge, mixing and block computations request many powers of the same kernel; powers are
built by iterative squaring and kept in a bounded LRU map with hit/miss statistics.
"""

import threading
from collections import OrderedDict
from typing import Dict, Optional

import numpy as np

from cltlab.config import settings
from cltlab.logging_config import get_logger

logger = get_logger("cltlab.cache_service")


class PowerCache:
    """
    Thread-safe LRU cache of kernel powers.

    Entries are read-only arrays, so cached values can be shared across threads without copying.
    """

    def __init__(self, base: np.ndarray, max_entries: Optional[int] = None):
        """
        Initialize the cache for one transition matrix.

        Args:
            base: Row-stochastic S x S matrix (the kernel rows)
            max_entries: LRU capacity (defaults to settings.POWER_CACHE_SIZE)
        """
        self.size = base.shape[0]
        self.max_entries = max_entries or settings.POWER_CACHE_SIZE
        self._lock = threading.Lock()
        self._entries: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self.stats = {"hits": 0, "misses": 0}

        identity = np.eye(self.size)
        identity.setflags(write=False)
        first = np.array(base, dtype=float)
        first.setflags(write=False)
        # Exponents 0 and 1 are pinned outside the LRU
        self._pinned: Dict[int, np.ndarray] = {0: identity, 1: first}

    # ==================== Core Cache Operations ====================

    def get(self, k: int) -> Optional[np.ndarray]:
        """Return the cached power P^k, or None on a miss."""
        if k in self._pinned:
            return self._pinned[k]
        with self._lock:
            value = self._entries.get(k)
            if value is None:
                self.stats["misses"] += 1
                logger.debug(f"Power cache MISS: k={k}")
                return None
            self._entries.move_to_end(k)
            self.stats["hits"] += 1
            logger.debug(f"Power cache HIT: k={k}")
            return value

    def set(self, k: int, value: np.ndarray) -> np.ndarray:
        """Store P^k (made read-only) and evict the least recently used entry if full."""
        if k in self._pinned:
            return self._pinned[k]
        value = np.array(value, dtype=float)
        value.setflags(write=False)
        with self._lock:
            self._entries[k] = value
            self._entries.move_to_end(k)
            while len(self._entries) > self.max_entries:
                evicted, _ = self._entries.popitem(last=False)
                logger.debug(f"Power cache evicted k={evicted}")
        return value

    def power(self, k: int) -> np.ndarray:
        """
        Compute P^k by iterative squaring, reusing cached powers of two.

        Args:
            k: Non-negative exponent

        Returns:
            Read-only S x S array equal to P^k
        """
        cached = self.get(k)
        if cached is not None:
            return cached

        result: Optional[np.ndarray] = None
        square = self._pinned[1]
        bit = 1
        remaining = k
        while remaining:
            if remaining & 1:
                result = square if result is None else result @ square
            remaining >>= 1
            if remaining:
                bit <<= 1
                next_square = self.get(bit)
                if next_square is None:
                    next_square = self.set(bit, square @ square)
                square = next_square
        return self.set(k, result)

    # ==================== Statistics Tracking ====================

    def get_stats(self) -> Dict:
        """Return hit/miss statistics and occupancy."""
        with self._lock:
            total = self.stats["hits"] + self.stats["misses"]
            hit_rate = (self.stats["hits"] / total * 100) if total > 0 else 0
            return {
                "hits": self.stats["hits"],
                "misses": self.stats["misses"],
                "entries": len(self._entries),
                "capacity": self.max_entries,
                "hit_rate": f"{hit_rate:.1f}%",
            }

    def clear(self) -> None:
        """Drop all non-pinned entries and reset statistics."""
        with self._lock:
            self._entries.clear()
            self.stats = {"hits": 0, "misses": 0}
        logger.debug("Power cache cleared")
