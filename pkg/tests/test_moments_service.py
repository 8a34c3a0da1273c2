"""
Unit tests for observables, autocovariances, partial-sum second moments and the series variance.
"""

import numpy as np
import pytest

from cltlab.services.kernel_service import as_stationary_law, validate_kernel
from cltlab.services.moments_service import (
    autocovariance,
    autocovariances,
    build_model,
    center_observable,
    dump_model,
    load_model,
    model_checksum,
    partial_sum_variance,
    second_moment_profile,
    sigma_series,
    varsup_profile,
)
from cltlab.utils import NonSummable, ObservableNotCentered


def _law(probs):
    size = len(probs)
    kernel = validate_kernel(np.tile(probs, (size, 1)))
    return as_stationary_law(kernel, probs)


class TestObservable:
    """Tests for centering and model assembly."""

    def test_constants_center_to_zero(self):
        assert np.allclose(center_observable([1.0, 1.0], _law([0.3, 0.7])), [0.0, 0.0])

    def test_mean_subtracted(self):
        assert np.allclose(center_observable([0.0, 2.0], _law([0.5, 0.5])), [-1.0, 1.0])

    def test_already_centered(self):
        assert np.allclose(center_observable([3.0, -1.0], _law([0.25, 0.75])), [3.0, -1.0])

    def test_uncentered_observable_rejected(self):
        kernel = validate_kernel([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ObservableNotCentered):
            build_model(kernel, [0.0, 2.0])

    def test_center_flag(self):
        kernel = validate_kernel([[0.5, 0.5], [0.5, 0.5]])
        model = build_model(kernel, [0.0, 2.0], center=True)
        assert np.allclose(model.f, [-1.0, 1.0])

    def test_document_round_trip(self, asymmetric):
        restored = load_model(dump_model(asymmetric))
        assert model_checksum(restored) == model_checksum(asymmetric)
        assert np.array_equal(restored.f, asymmetric.f)

    def test_pi_recomputed_when_omitted(self):
        model = load_model({"kernel": {"size": 2, "rows": [[0.8, 0.2], [0.3, 0.7]]}, "f": [-2.0, 3.0]})
        assert np.allclose(model.pi.probs, [0.6, 0.4])


class TestAutocovariance:
    """Tests for E(X_0 X_k)."""

    def test_lag_zero(self, symmetric):
        assert autocovariance(symmetric, 0) == pytest.approx(1.0)

    def test_lag_one(self, symmetric):
        assert autocovariance(symmetric, 1) == pytest.approx(0.5)

    def test_iid_lag_one(self):
        model = build_model(validate_kernel([[0.2, 0.8], [0.2, 0.8]]), [4.0, -1.0])
        assert autocovariance(model, 1) == pytest.approx(0.0, abs=1e-15)

    def test_sequence_matches_powers(self, asymmetric):
        sequence = autocovariances(asymmetric, 10)
        for k in range(10):
            assert sequence[k] == pytest.approx(autocovariance(asymmetric, k), abs=1e-15)


class TestPartialSums:
    """Tests for E(S_n^2) and its profile."""

    def test_two_steps(self, symmetric):
        assert partial_sum_variance(symmetric, 2) == pytest.approx(3.0)

    def test_three_steps(self, symmetric):
        assert partial_sum_variance(symmetric, 3) == pytest.approx(5.5)

    def test_flip_flop_cancels(self, flip):
        assert partial_sum_variance(flip, 2) == pytest.approx(0.0, abs=1e-15)

    def test_profile_matches_pointwise(self, renewal):
        profile = second_moment_profile(renewal, 40)
        for n in (1, 2, 17, 40):
            assert profile[n - 1] == pytest.approx(partial_sum_variance(renewal, n), rel=1e-12)

    def test_varsup_iid(self, rademacher):
        profile = varsup_profile(rademacher, 10)
        assert np.allclose(profile.values, 1.0)
        assert profile.sup == pytest.approx(1.0)

    def test_varsup_flip_flop(self, flip):
        profile = varsup_profile(flip, 10)
        expected = [(n % 2) / n for n in range(1, 11)]
        assert np.allclose(profile.values, expected, atol=1e-14)
        assert profile.sup == pytest.approx(1.0)
        assert profile.argsup == 1

    def test_varsup_symmetric(self, symmetric):
        profile = varsup_profile(symmetric, 64)
        assert profile.sup <= 3.0
        assert abs(profile.values[-1] - 3.0) <= 0.1


class TestSigmaSeries:
    """Tests for the autocovariance series."""

    def test_iid(self, rademacher):
        assert sigma_series(rademacher).value == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self, symmetric):
        estimate = sigma_series(symmetric)
        assert estimate.value == pytest.approx(3.0, abs=1e-9)
        assert estimate.tail_bound < 1e-10

    def test_flip_flop_not_summable(self, flip):
        with pytest.raises(NonSummable):
            sigma_series(flip)

    def test_reducible_chain_not_summable(self, mixture):
        with pytest.raises(NonSummable):
            sigma_series(mixture)
