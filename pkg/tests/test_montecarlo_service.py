"""
Tests for seeded simulation, the CLT experiments, mixture references and E|S_n|.

Tests marked slow run the full-size distributional checks.
"""

import math

import numpy as np
import pytest

from cltlab.config import settings
from cltlab.services.bridge_service import bridge_sum_table, centered_sigma
from cltlab.services.gallery_service import iid
from cltlab.services.montecarlo_service import (
    ChainSampler,
    SeedSpec,
    abs_mean_sigma,
    class_mixture_reference,
    clt_experiment,
    clt_statistics,
    lattice_decomposition,
    mixture_reference,
    reference_law,
    sample_path,
    simulate,
    summarize_experiment,
)
from cltlab.utils import BadWeights, MissingBridge, NotLattice, ValidationError


SEED = SeedSpec(20240611)


def _sums(M):
    return lambda paths: M.f[paths[:, 1:]].sum(axis=1)


class TestSeedSpec:
    """Tests for per-replication stream derivation."""

    def test_keys_are_deterministic(self):
        assert SeedSpec(5).stream_key(3) == SeedSpec(5).stream_key(3)
        assert len(SeedSpec(5).stream_key(3)) == 16

    def test_keys_differ_across_replications(self):
        assert SeedSpec(5).stream_key(3) != SeedSpec(5).stream_key(4)
        assert SeedSpec(5).stream_key(3) != SeedSpec(6).stream_key(3)

    def test_streams_reproduce(self):
        first = SeedSpec(11).generator(2).random(8)
        second = SeedSpec(11).generator(2).random(8)
        assert np.array_equal(first, second)

    @pytest.mark.parametrize("bad", [-1, 2**64, 1.5, True])
    def test_invalid_seed(self, bad):
        with pytest.raises(ValidationError):
            SeedSpec(bad)


class TestSampling:
    """Tests for path sampling."""

    def test_flip_flop_forced_start(self, flip):
        path = sample_path(flip, 7, SEED, start=0)
        assert path.tolist() == [0, 1, 0, 1, 0, 1, 0, 1]

    def test_one_state_chain(self):
        model = iid([1.0], [0.0])
        assert sample_path(model, 5, SEED).tolist() == [0] * 6

    def test_transition_frequency(self, symmetric):
        path = sample_path(symmetric, 100_000, SEED)
        from_zero = path[:-1] == 0
        frequency = np.mean(path[1:][from_zero] == 1)
        assert abs(frequency - 0.25) <= 0.01

    def test_zero_probability_moves_never_sampled(self, renewal):
        path = sample_path(renewal, 5000, SEED)
        rows = renewal.kernel.rows
        assert np.all(rows[path[:-1], path[1:]] > 0.0)

    def test_uniform_next_to_one_stays_in_row(self, mixture):
        # 2x + (1 - 2^-53) rounds up to 2x + 1 for x >= 1
        states = np.arange(4)
        u = np.full(4, np.nextafter(1.0, 0.0))
        assert ChainSampler(mixture).step(states, u).tolist() == [1, 1, 3, 3]

    def test_independent_of_workers(self, asymmetric):
        single = simulate(asymmetric, 50, 700, SEED, _sums(asymmetric), workers=1)
        pooled = simulate(asymmetric, 50, 700, SEED, _sums(asymmetric), workers=4)
        assert np.array_equal(single, pooled)

    def test_independent_of_batch_size(self, asymmetric, monkeypatch):
        reference = simulate(asymmetric, 20, 300, SEED, _sums(asymmetric))
        monkeypatch.setattr(settings, "MC_BATCH_SIZE", 7)
        assert np.array_equal(simulate(asymmetric, 20, 300, SEED, _sums(asymmetric)), reference)

    def test_replication_matches_sample_path(self, asymmetric):
        batch = simulate(asymmetric, 30, 5, SEED, _sums(asymmetric))
        single = sample_path(asymmetric, 30, SEED, replication=3)
        assert batch[3] == pytest.approx(asymmetric.f[single[1:]].sum())


class TestReferences:
    """Tests for reference laws."""

    def test_single_component(self):
        cdf = mixture_reference([(1.0, 4.0)])
        assert float(cdf(2.0)) == pytest.approx(0.8413447460685429)
        assert cdf.variance == pytest.approx(4.0)

    def test_degenerate_component_is_step(self):
        cdf = mixture_reference([(0.5, 0.0), (0.5, 1.0)])
        assert float(cdf(0.0)) == pytest.approx(0.75)
        assert float(cdf(-1.0)) == pytest.approx(0.5 * 0.15865525393145707)
        assert not cdf.degenerate

    def test_bad_weights(self):
        with pytest.raises(BadWeights):
            mixture_reference([(0.6, 1.0), (0.6, 2.0)])
        with pytest.raises(BadWeights):
            mixture_reference([(0.0, 1.0), (1.0, 2.0)])

    def test_class_mixture(self, mixture, symmetric):
        cdf = class_mixture_reference(mixture, 64)
        assert cdf.weights == pytest.approx((0.5, 0.5))
        assert cdf.variances == pytest.approx((centered_sigma(symmetric, 64), 63 / 64))
        assert cdf.provenance == "class_mixture"

    def test_reference_provenance(self, symmetric, flip):
        _, provenance = reference_law(symmetric, 64, "endpoint")
        assert provenance == "centered_sigma"
        law, provenance = reference_law(symmetric, 64, "none")
        assert provenance == "sigma_series"
        assert law.variance == pytest.approx(3.0, abs=1e-9)
        _, provenance = reference_law(flip, 64, "none")
        assert provenance == "partial_sum_variance"


class TestCltExperiment:
    """Tests for the endpoint-centered experiment."""

    def test_missing_bridge(self, symmetric):
        with pytest.raises(MissingBridge):
            clt_statistics(symmetric, 16, 100, SEED, "endpoint", None)
        with pytest.raises(MissingBridge):
            clt_statistics(symmetric, 16, 100, SEED, "endpoint", bridge_sum_table(symmetric, 8))

    def test_flip_flop_degenerate(self, flip):
        report = clt_experiment(flip, 1024, 200, SEED, "endpoint", bridge_sum_table(flip, 1024))
        assert report.degenerate
        assert report.max_abs_statistic == 0.0
        assert report.ks_distance is None
        assert report.within_threshold

    def test_too_few_replications(self, symmetric):
        with pytest.raises(ValidationError):
            clt_experiment(symmetric, 16, 50, SEED, "endpoint", bridge_sum_table(symmetric, 16))

    def test_report_fields(self, symmetric):
        report = clt_experiment(symmetric, 64, 500, SEED, "endpoint", bridge_sum_table(symmetric, 64))
        assert report.reps == 500
        assert report.master_seed == SEED.master
        assert report.reference_provenance == "centered_sigma"
        assert 0.0 <= report.ks_distance <= 1.0
        assert report.centering_mean is not None

    def test_centering_is_unbiased(self, asymmetric):
        # E B_n(xi_0, xi_n) = E S_n = n pi.f
        n = 32
        report = clt_experiment(asymmetric, n, 2000, SEED, "endpoint", bridge_sum_table(asymmetric, n))
        expected = n * float(asymmetric.pi.probs @ asymmetric.f)
        assert abs(report.centering_mean - expected) <= report.centering_half_width

    def test_variance_matches_centered_sigma(self, symmetric):
        n = 32
        report = clt_experiment(symmetric, n, 4000, SEED, "endpoint", bridge_sum_table(symmetric, n))
        assert report.reference_sigma2 == pytest.approx(centered_sigma(symmetric, n))
        assert abs(report.variance - report.reference_sigma2) <= report.variance_half_width

    def test_identical_across_workers(self, symmetric):
        table = bridge_sum_table(symmetric, 128)
        reports = [
            clt_experiment(symmetric, 128, 600, SEED, "endpoint", table, workers=w).model_dump_json()
            for w in (1, 3)
        ]
        assert reports[0] == reports[1]

    @pytest.mark.slow
    def test_symmetric_endpoint_centered(self, symmetric):
        report = clt_experiment(symmetric, 4096, 10_000, SEED, "endpoint", bridge_sum_table(symmetric, 4096))
        assert report.ks_distance <= 0.02

    @pytest.mark.slow
    def test_rademacher_uncentered(self, rademacher):
        report = clt_experiment(rademacher, 4096, 10_000, SEED, "none")
        assert report.reference_sigma2 == pytest.approx(1.0)
        assert report.ks_distance <= 0.02


class TestKolmogorovSmirnovFloor:
    """Statistics drawn from the reference law itself stay under the DKW bound."""

    @staticmethod
    def _dkw(reps, alpha):
        return math.sqrt(math.log(2.0 / alpha) / (2.0 * reps))

    def test_default_threshold_clears_noise_floor(self):
        assert self._dkw(10_000, 0.05) == pytest.approx(1.36 / 100.0, abs=1e-4)
        assert settings.KS_THRESHOLD > self._dkw(10_000, 0.05)

    @pytest.mark.parametrize("master", [1, 2, 3])
    def test_reference_samples(self, symmetric, master):
        reps = 4000
        reference = mixture_reference([(1.0, 3.0)])
        draws = SeedSpec(master).generator(0).standard_normal(reps) * math.sqrt(3.0)
        report = summarize_experiment(symmetric, 64, SeedSpec(master), "none", draws, None, reference, "sigma_series")
        assert report.ks_distance <= self._dkw(reps, 0.001)
        assert report.reference_provenance == "sigma_series"


class TestAbsMean:
    """Tests for the E|S_n| variance functional."""

    def test_lattice_decomposition(self):
        base, step, k = lattice_decomposition(np.array([-1.0, 1.0]))
        assert (base, step) == (-1.0, 2.0)
        assert k.tolist() == [0, 1]

    def test_lattice_three_values(self):
        base, step, k = lattice_decomposition(np.array([-0.5, 1.0, 0.25]))
        assert base == -0.5
        assert step == pytest.approx(0.75)
        assert k.tolist() == [0, 2, 1]

    def test_not_lattice(self):
        with pytest.raises(NotLattice):
            lattice_decomposition(np.array([0.0, 1.0, math.sqrt(2.0)]))

    def test_rademacher_exact(self, rademacher):
        estimate = abs_mean_sigma(rademacher, 1024)
        assert estimate.mode == "exact"
        assert abs(estimate.value - 1.0) <= 0.01

    def test_rademacher_small_exact(self, rademacher):
        # S_2 in {-2, 0, 2} with masses 1/4, 1/2, 1/4
        estimate = abs_mean_sigma(rademacher, 2)
        assert estimate.abs_mean == pytest.approx(1.0)
        assert estimate.value == pytest.approx(math.pi / 4)

    def test_flip_flop_bounded(self, flip):
        for n in (10, 11):
            assert abs_mean_sigma(flip, n).value <= math.pi / (2 * n) + 1e-15

    def test_monte_carlo_mode(self, rademacher):
        estimate = abs_mean_sigma(rademacher, 64, mode="mc", reps=2000, seed=SEED)
        assert estimate.mode == "mc"
        assert estimate.half_width > 0.0
        assert abs(estimate.value - 1.0) <= 0.2

    @pytest.mark.slow
    def test_symmetric_exact(self, symmetric):
        assert abs(abs_mean_sigma(symmetric, 4096).value - 3.0) <= 0.1
