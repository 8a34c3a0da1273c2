"""
Unit tests for the gallery constructors and preset parsing.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError as DocumentError

from cltlab.config import settings
from cltlab.services.gallery_service import (
    block_diagonal,
    build_preset,
    flip_flop,
    iid,
    parse_preset,
    product_chain,
    renewal_tail_mass,
    truncated_renewal,
    two_state,
)
from cltlab.services.kernel_service import ergodicity_report
from cltlab.services.mixing_service import beta_coefficient
from cltlab.services.moments_service import model_checksum, partial_sum_variance, sigma_series, varsup_profile
from cltlab.utils import BadWeights, DegenerateChain, StateSpaceTooLarge, UnknownGallery, ValidationError


class TestTwoState:
    """Tests for two-state chains."""

    def test_half_rates_are_iid(self):
        model = two_state(0.5, 0.5)
        assert np.allclose(model.kernel.rows, 0.5)
        assert sigma_series(model).value == pytest.approx(1.0)

    def test_workhorse(self, symmetric):
        assert np.allclose(symmetric.pi.probs, [0.5, 0.5])
        assert np.array_equal(symmetric.f, [-1.0, 1.0])
        assert sigma_series(symmetric).value == pytest.approx(3.0, abs=1e-9)

    def test_unit_rates_are_flip_flop(self):
        model = two_state(1.0, 1.0)
        assert model_checksum(model) == model_checksum(flip_flop())
        assert not ergodicity_report(model.kernel, model.pi).totally_ergodic

    def test_observable_centered(self, asymmetric):
        assert float(asymmetric.pi.probs @ asymmetric.f) == pytest.approx(0.0, abs=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateChain):
            two_state(0.0, 0.0)

    def test_rate_out_of_range(self):
        with pytest.raises(ValidationError):
            two_state(1.2, 0.3)


class TestTruncatedRenewal:
    """Tests for the renewal chain with polynomial-logarithmic jump tail."""

    def test_jump_ratio(self):
        model = truncated_renewal(2, 2)
        row = model.kernel.rows[0]
        assert row[0] == 0.5
        assert row[1] + row[2] == pytest.approx(0.5)
        expected = (2 * 8 * math.log(3) ** 2) / (2 * 1 * math.log(2) ** 2)
        assert row[1] / row[2] == pytest.approx(expected)

    def test_deterministic_descent(self):
        rows = truncated_renewal(5).kernel.rows
        for i in range(1, 6):
            assert rows[i, i - 1] == 1.0

    def test_observable_is_centered_indicator(self, renewal):
        pi0 = renewal.pi.probs[0]
        assert renewal.f[0] == pytest.approx(1.0 - pi0)
        assert np.allclose(renewal.f[1:], -pi0)

    def test_beta_non_increasing(self, renewal):
        betas = [beta_coefficient(renewal.kernel, renewal.pi, n) for n in range(1, 64)]
        assert all(b >= 0.0 for b in betas)
        assert all(later <= earlier + 1e-12 for earlier, later in zip(betas, betas[1:]))

    def test_tail_mass_shrinks(self):
        assert 0.0 < renewal_tail_mass(64, 2) < renewal_tail_mass(16, 2) < 0.5
        assert renewal_tail_mass(64, 1) > renewal_tail_mass(64, 2)

    def test_preset_reports_truncation(self):
        spec = build_preset(parse_preset({"gallery": "truncated_renewal", "N": 8}))
        assert spec.truncation == 8
        assert spec.tail_mass == pytest.approx(renewal_tail_mass(8, 2))
        assert spec.model.size == 9


class TestProductChain:
    """Tests for independent products."""

    def test_rademacher_product(self, rademacher):
        model = product_chain(rademacher, rademacher)
        assert model.size == 4
        assert np.allclose(model.f, [1.0, -1.0, -1.0, 1.0])
        assert sigma_series(model).value == pytest.approx(1.0)

    def test_beta_subadditive(self):
        left, right = two_state(0.25, 0.25), two_state(0.125, 0.125)
        model = product_chain(left, right)
        assert beta_coefficient(model.kernel, model.pi, 1) <= 0.625 + 1e-12

    def test_second_moment_bound(self):
        left, right = two_state(0.25, 0.25), two_state(0.125, 0.125)
        model = product_chain(left, right)
        constant = varsup_profile(left, 128).sup * varsup_profile(right, 128).sup
        for n in (1, 8, 64):
            assert partial_sum_variance(model, n) <= constant * n

    def test_too_large(self, monkeypatch):
        monkeypatch.setattr(settings, "MAX_PRODUCT_STATES", 3)
        with pytest.raises(StateSpaceTooLarge):
            product_chain(two_state(0.25, 0.25), two_state(0.25, 0.25))


class TestBlockDiagonal:
    """Tests for non-ergodic composites."""

    def test_single_component(self, asymmetric):
        model = block_diagonal([(1.0, asymmetric)])
        assert np.array_equal(model.kernel.rows, asymmetric.kernel.rows)
        assert np.allclose(model.pi.probs, asymmetric.pi.probs, atol=1e-15)
        assert np.allclose(model.f, asymmetric.f, atol=1e-15)

    def test_two_components(self, mixture):
        report = ergodicity_report(mixture.kernel, mixture.pi)
        assert not report.irreducible
        assert np.allclose(mixture.pi.probs, [0.25] * 4)
        assert mixture.pi.classes == ((0, 1), (2, 3))

    def test_bad_weights(self, symmetric, rademacher):
        with pytest.raises(BadWeights):
            block_diagonal([(0.7, symmetric), (0.7, rademacher)])


class TestPresets:
    """Tests for preset documents."""

    def test_unknown_gallery(self):
        with pytest.raises(UnknownGallery):
            parse_preset({"gallery": "three_state"})

    def test_unknown_key(self):
        with pytest.raises(DocumentError):
            parse_preset({"gallery": "two_state", "a": 0.25, "b": 0.25, "c": 1.0})

    def test_nested_preset(self, mixture):
        spec = build_preset(
            parse_preset(
                {
                    "gallery": "block_diagonal",
                    "components": [
                        {"weight": 0.5, "model": {"gallery": "two_state", "a": 0.25, "b": 0.25}},
                        {"weight": 0.5, "model": {"gallery": "iid", "pi": [0.5, 0.5], "f": [-1, 1]}},
                    ],
                }
            )
        )
        assert spec.name == "block_diagonal"
        assert model_checksum(spec.model) == model_checksum(mixture)

    def test_iid_preset(self):
        spec = build_preset(parse_preset({"gallery": "iid", "pi": [0.25, 0.75], "f": [3, -1]}))
        assert np.allclose(spec.model.f, [3.0, -1.0])
        assert model_checksum(spec.model) == model_checksum(iid([0.25, 0.75], [3.0, -1.0]))


PRESETS = {
    "two_state": {"gallery": "two_state", "a": 0.2, "b": 0.3},
    "flip_flop": {"gallery": "flip_flop"},
    "iid": {"gallery": "iid", "pi": [0.2, 0.5, 0.3], "f": [2.0, -1.0, 1.0 / 3.0]},
    "renewal_e1": {"gallery": "truncated_renewal", "N": 64, "log_exponent": 1},
    "renewal_e2": {"gallery": "truncated_renewal", "N": 64},
    "product_chain": {
        "gallery": "product_chain",
        "left": {"gallery": "two_state", "a": 0.25, "b": 0.25},
        "right": {"gallery": "two_state", "a": 0.125, "b": 0.125},
    },
    "block_diagonal": {
        "gallery": "block_diagonal",
        "components": [
            {"weight": 0.25, "model": {"gallery": "two_state", "a": 0.25, "b": 0.25}},
            {"weight": 0.75, "model": {"gallery": "flip_flop"}},
        ],
    },
}


class TestGalleryInvariants:
    """Every preset yields a valid, centered, stationary model."""

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_stationary_and_centered(self, name):
        model = build_preset(parse_preset(PRESETS[name])).model
        probs, rows = model.pi.probs, model.kernel.rows
        assert np.abs(probs @ rows - probs).sum() <= 1e-12
        assert probs.sum() == pytest.approx(1.0, abs=1e-14)
        assert abs(float(probs @ model.f)) <= 1e-12
        assert np.allclose(rows.sum(axis=1), 1.0, rtol=0.0, atol=1e-12)

    def test_weaker_log_factor_mixes_slower(self):
        weak = build_preset(parse_preset(PRESETS["renewal_e1"])).model
        strong = build_preset(parse_preset(PRESETS["renewal_e2"])).model
        for n in range(8, 65):
            assert beta_coefficient(weak.kernel, weak.pi, n) >= beta_coefficient(strong.kernel, strong.pi, n) - 1e-12
