"""
Shared fixtures: the small gallery chains every test module reuses.
"""

import pytest

from cltlab.services.gallery_service import block_diagonal, flip_flop, iid, truncated_renewal, two_state


@pytest.fixture
def symmetric():
    """Symmetric two-state chain a = b = 0.25, f = (-1, 1); sigma^2 = 3."""
    return two_state(0.25, 0.25)


@pytest.fixture
def asymmetric():
    """Two-state chain with p = 0.2, q = 0.3; pi = (0.6, 0.4)."""
    return two_state(0.2, 0.3)


@pytest.fixture
def rademacher():
    """I.i.d. Rademacher chain."""
    return iid([0.5, 0.5], [-1.0, 1.0])


@pytest.fixture
def flip():
    """Deterministic 2-cycle with f = (-1, 1)."""
    return flip_flop()


@pytest.fixture
def mixture(symmetric, rademacher):
    """Non-ergodic block-diagonal chain: symmetric two-state and Rademacher, weights 1/2."""
    return block_diagonal([(0.5, symmetric), (0.5, rademacher)])


@pytest.fixture
def renewal():
    """Truncated renewal chain with N = 16, e = 2."""
    return truncated_renewal(16)
