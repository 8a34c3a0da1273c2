"""
Unit tests for the block martingale decomposition and its second-moment identity.
"""

import math

import numpy as np
import pytest

from cltlab.services.blocks_service import (
    approximation_gap,
    block_decompose,
    centered_sigma_grid,
    identity_check,
    identity_terms,
    martingale_difference_check,
    orthogonality_check,
    remainder_second_moment,
)
from cltlab.services.bridge_service import bridge_sum_table, centered_sigma
from cltlab.services.enumeration_service import enumerate_paths
from cltlab.services.montecarlo_service import SeedSpec, sample_path
from cltlab.utils import BlockTooLong, ExactModeBudgetExceeded, UnreachablePair


class TestBlockDecompose:
    """Tests for per-path decomposition."""

    def test_symmetric_example(self, symmetric):
        result = block_decompose(symmetric, [0, 0, 1, 1, 0], 2)
        expected_z = bridge_sum_table(symmetric, 2).lookup(0, 1) / math.sqrt(2)
        assert result.u == 2
        assert result.block_sums[0] == pytest.approx(0.0)
        assert result.remainders[0] == pytest.approx(expected_z)
        assert result.martingale_differences[0] == pytest.approx(-expected_z)

    def test_blocks_reassemble(self, renewal):
        path = sample_path(renewal, 40, SeedSpec(7))
        result = block_decompose(renewal, path, 6)
        assert result.u == 6
        assert result.tail_length == 4
        rebuilt = math.sqrt(6) * (result.martingale_differences + result.remainders)
        assert np.allclose(rebuilt, result.block_sums)
        total = renewal.f[path[1:]].sum()
        assert result.block_sums.sum() + result.tail_sum == pytest.approx(total)

    def test_iid_remainder_is_block_end(self, rademacher):
        path = [0, 1, 1, 0, 1, 0, 0]
        result = block_decompose(rademacher, path, 3)
        ends = np.array([path[3], path[6]])
        assert np.allclose(result.remainders, rademacher.f[ends] / math.sqrt(3))

    def test_flip_flop_differences_vanish(self, flip):
        result = block_decompose(flip, [0, 1, 0, 1, 0, 1, 0, 1, 0], 2)
        assert np.allclose(result.martingale_differences, 0.0)

    def test_path_too_short(self, symmetric):
        with pytest.raises(BlockTooLong):
            block_decompose(symmetric, [0, 1, 1], 2)

    def test_unreachable_block_endpoints(self, flip):
        with pytest.raises(UnreachablePair):
            block_decompose(flip, [0, 1, 1, 0, 1], 2)


class TestRemainder:
    """Tests for E(R_u(m)^2)."""

    def test_iid(self, rademacher):
        for m, u in ((2, 3), (4, 8)):
            assert remainder_second_moment(rademacher, m, u) == pytest.approx(u / m, abs=1e-12)

    def test_flip_flop_even_blocks(self, flip):
        assert remainder_second_moment(flip, 2, 5) == pytest.approx(0.0, abs=1e-14)

    def test_budget(self, symmetric):
        with pytest.raises(ExactModeBudgetExceeded):
            remainder_second_moment(symmetric, 1024, 8)


class TestIdentity:
    """Tests for the block second-moment identity."""

    def test_iid_hand_values(self, rademacher):
        lhs, rhs = identity_terms(rademacher, 4, 8)
        assert lhs == pytest.approx(1.0, abs=1e-12)
        assert rhs == pytest.approx(0.75 + 2.0 / 8.0, abs=1e-12)
        assert identity_check(rademacher, 4, 8) <= 1e-10

    def test_flip_flop(self, flip):
        lhs, rhs = identity_terms(flip, 2, 4)
        assert lhs == pytest.approx(0.0, abs=1e-14)
        assert identity_check(flip, 2, 4) <= 1e-10

    @pytest.mark.parametrize("m", [2, 4, 8])
    @pytest.mark.parametrize("u", [2, 4, 8])
    def test_gallery_models(self, symmetric, renewal, mixture, m, u):
        for model in (symmetric, renewal, mixture):
            assert identity_check(model, m, u) <= 1e-8


class TestOrthogonality:
    """Tests for E(M_u R_u) = 0 and the martingale property."""

    def test_exact(self, symmetric):
        result = orthogonality_check(symmetric, 2, 2, mode="exact")
        assert result.value == pytest.approx(0.0, abs=1e-12)
        assert result.passed

    def test_exact_budget(self, renewal):
        with pytest.raises(ExactModeBudgetExceeded):
            orthogonality_check(renewal, 2, 2, mode="exact")

    @pytest.mark.slow
    def test_monte_carlo_interval_contains_zero(self, symmetric):
        result = orthogonality_check(symmetric, 8, 64, mode="mc", reps=100_000, seed=SeedSpec(20240611))
        assert result.mode == "mc"
        assert result.reps == 100_000
        assert result.half_width > 0.0
        assert result.passed

    def test_martingale_differences(self, asymmetric):
        assert martingale_difference_check(asymmetric, 2, 4) <= 1e-12

    @pytest.mark.parametrize("chain, m, u", [("asymmetric", 2, 4), ("mixture", 2, 3), ("flip", 3, 3)])
    def test_difference_second_moment_is_centered_sigma(self, chain, m, u, request):
        model = request.getfixturevalue(chain)
        table = bridge_sum_table(model, m)
        ensemble = enumerate_paths(model, u * m)
        paths = ensemble.paths
        for k in range(u):
            block = model.f[paths[:, k * m + 1: (k + 1) * m + 1]].sum(axis=1)
            centering = table.values[paths[:, k * m], paths[:, (k + 1) * m]]
            difference = (block - centering) / math.sqrt(m)
            assert ensemble.expect(difference**2) == pytest.approx(centered_sigma(model, m), abs=1e-12)


class TestApproximationGap:
    """Tests for the distance between the block sum and its martingale part."""

    def test_cross_check(self, asymmetric):
        gap = approximation_gap(asymmetric, 4, 8)
        assert gap.residual <= 1e-10

    def test_grid(self, symmetric):
        grid = centered_sigma_grid(symmetric, [1, 2, 4, 8])
        assert grid.values == tuple(centered_sigma(symmetric, m) for m in (1, 2, 4, 8))
        assert grid.sup == max(grid.values)
