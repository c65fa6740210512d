import math

import numpy as np
import pytest

from tmcc_qkd.attacks import (
    AttackKind,
    AttackModel,
    ResendLaw,
    apply_beam_split,
    apply_clone,
    lambda_for_mean,
)
from tmcc_qkd.channel import CountPair, NoiseModel, TmccSource, draw_batch, empirical_correlation
from tmcc_qkd.photon_statistics import DomainError, mean_photons, tmcc_pmf, variance

N = 40_000


def _bob_counts(attack, lam=2.0, seed=5, n=N):
    return draw_batch(TmccSource(lam, seed), NoiseModel(0), n, attack)


class TestModel:
    def test_parse(self):
        assert AttackModel.parse("none") == AttackModel.none()
        assert AttackModel.parse("beam_split:0.5").transmittance == 0.5
        assert AttackModel.parse("clone").resend_law is ResendLaw.POISSON
        assert AttackModel.parse("clone:tmcc_mean_matched").resend_law is ResendLaw.TMCC_MEAN_MATCHED

    @pytest.mark.parametrize("t", [0.0, 1.0, -0.2, 1.3])
    def test_transmittance_open_interval(self, t):
        with pytest.raises(DomainError):
            AttackModel.beam_split(t)

    @pytest.mark.parametrize("text", ["beam_split", "teleport", "none:1"])
    def test_parse_rejects(self, text):
        with pytest.raises(DomainError):
            AttackModel.parse(text)

    def test_labels_round_trip(self):
        for text in ("none", "beam_split:0.25", "clone:poisson", "clone:tmcc_mean_matched"):
            assert AttackModel.parse(text).label() == text


def test_no_attack_identity():
    plain = draw_batch(TmccSource(2, 3), NoiseModel(0.1), 2000)
    none = draw_batch(TmccSource(2, 3), NoiseModel(0.1), 2000, AttackModel.none())
    assert plain.pairs() == none.pairs()


class TestBeamSplit:
    def test_empty_pulse(self):
        pair, eve = apply_beam_split(CountPair(0, 0, 0), 0.5, 0.7)
        assert (pair.bob_count, eve) == (0, 0)

    def test_conserves_photons_and_leaves_alice(self):
        pair = CountPair(6, 6, 6)
        for u in np.linspace(0, 0.999, 25):
            out, eve = apply_beam_split(pair, 0.3, u)
            assert out.alice_count == 6
            assert out.bob_count + eve == 6

    def test_near_unit_transmittance(self):
        batch = _bob_counts(AttackModel.beam_split(1 - 1e-12))
        np.testing.assert_array_equal(batch.bob, batch.alice)

    def test_mean_scales_with_transmittance(self):
        batch = _bob_counts(AttackModel.beam_split(0.5))
        se = math.sqrt(batch.bob.var() / N)
        assert abs(batch.bob.mean() - 0.5 * batch.alice.mean()) < 5 * se
        np.testing.assert_array_equal(batch.bob + batch.eve, batch.base)

    def test_breaks_correlation(self):
        _, rho = empirical_correlation(_bob_counts(AttackModel.beam_split(0.5), n=10_000))
        assert rho < 0.9


class TestClone:
    @pytest.mark.parametrize("law", list(ResendLaw))
    def test_empty_pulse(self, law):
        for u in (0.0, 0.5, 0.999):
            assert apply_clone(CountPair(0, 0, 0), law, u).bob_count == 0

    def test_lambda_for_mean_inverts(self):
        for target in (0.1, 1.0, 2.0, 7.0):
            assert mean_photons(lambda_for_mean(target)) == pytest.approx(target, rel=1e-12)
        assert lambda_for_mean(0) == 0.0
        with pytest.raises(ArithmeticError):
            lambda_for_mean(math.nan)

    @pytest.mark.parametrize("law", list(ResendLaw))
    def test_mean_stealthy(self, law):
        batch = _bob_counts(AttackModel.clone(law))
        se = math.sqrt(batch.bob.var() / N)
        assert abs(batch.bob.mean() - mean_photons(2)) < 5 * se

    def test_poisson_law_inflates_variance(self):
        batch = _bob_counts(AttackModel.clone(ResendLaw.POISSON))
        # law of total variance: E[m] + Var(m)
        predicted = mean_photons(2) + variance(2)
        sample_var = batch.bob.var(ddof=1)
        assert sample_var - variance(2) >= 0.9 * mean_photons(2)
        # standard error of a sample variance, with a fourth-moment estimate
        centred = batch.bob - batch.bob.mean()
        se = math.sqrt((np.mean(centred**4) - sample_var**2) / N)
        assert abs(sample_var - predicted) < 5 * se

    def test_tmcc_matched_law_inflates_variance(self):
        batch = _bob_counts(AttackModel.clone(ResendLaw.TMCC_MEAN_MATCHED))
        # E[Var(resend | m)] > 0, so the attacked variance exceeds Var(m)
        assert batch.bob.var(ddof=1) > variance(2) * 1.2

    def test_alice_untouched(self):
        batch = _bob_counts(AttackModel.clone())
        np.testing.assert_array_equal(batch.alice, batch.base)
