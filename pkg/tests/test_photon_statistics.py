import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tmcc_qkd.photon_statistics import (
    DomainError,
    PhotonDistribution,
    TruncationError,
    apply_pair_annihilation,
    bessel_i,
    build_fock_amplitudes,
    mean_photons,
    mean_square_photons,
    poisson_pmf,
    sample_count,
    sample_counts,
    tmcc_pmf,
    variance,
)

LAMBDA_GRID = [0.1, 0.5, 1, 2, 5, 10]

# mpmath at 40 digits
I0_OF_2 = 2.2795853023360672674
P0_OF_1 = 0.43867627983704873938
MEAN_OF_1 = 0.69777465796400798201
VAR_OF_1 = 0.51311052670321167209


class TestBessel:
    def test_trivial_values(self):
        assert bessel_i(0, 0) == 1.0
        assert bessel_i(1, 0) == 0.0

    def test_i0_of_2(self):
        assert bessel_i(0, 2) == pytest.approx(I0_OF_2, rel=1e-15)

    @pytest.mark.parametrize("order", [0, 1])
    @pytest.mark.parametrize("x", [1e-8, 0.3, 1.0, 2.0, 7.5, 20.0, 40.0])
    def test_against_mpmath(self, order, x):
        assert bessel_i(order, x) == pytest.approx(oracles.bessel_i(order, x), rel=1e-14)

    @given(st.floats(0, 40))
    def test_lower_bounds(self, x):
        assert bessel_i(0, x) >= 1.0
        assert bessel_i(1, x) >= 0.0

    @pytest.mark.parametrize("x", [-1.0, math.inf, math.nan])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            bessel_i(0, x)

    def test_order_restricted(self):
        with pytest.raises(DomainError):
            bessel_i(2, 1.0)


class TestTmccPmf:
    def test_vacuum(self):
        d = tmcc_pmf(0)
        assert d.probabilities[0] == 1.0
        assert not d.probabilities[1:].any()
        assert d.n_max == 20

    def test_lambda_one(self):
        p = tmcc_pmf(1).probabilities
        assert p[0] == pytest.approx(P0_OF_1, rel=1e-12)
        assert p[1] == pytest.approx(p[0], rel=1e-12)
        assert p[2] == pytest.approx(p[0] / 4, rel=1e-12)

    def test_second_moment_lambda_two(self):
        d = tmcc_pmf(2)
        n = np.arange(d.n_max + 1)
        assert math.fsum(n**2 * d.probabilities) == pytest.approx(4.0, abs=1e-10)

    def test_matches_series_pointwise(self):
        for lam in LAMBDA_GRID:
            d = tmcc_pmf(lam)
            ref = oracles.tmcc_probabilities(lam, d.n_max + 1)
            np.testing.assert_allclose(d.probabilities, ref, rtol=1e-11, atol=1e-15)

    @pytest.mark.parametrize("lam", LAMBDA_GRID)
    def test_distribution_invariants(self, lam):
        d = tmcc_pmf(lam)
        assert abs(math.fsum(d.probabilities) - 1.0) <= 1e-12
        assert d.cdf[-1] == 1.0
        assert np.all(np.diff(d.cdf) >= 0)
        assert d.variance >= 0
        n = np.arange(d.n_max + 1)
        assert d.mean == pytest.approx(math.fsum(n * d.probabilities), abs=1e-12)

    def test_truncation_is_adaptive(self):
        assert tmcc_pmf(0.1).n_max == 20
        big = tmcc_pmf(20)
        assert big.n_max > 20
        ref = oracles.tmcc_probabilities(20, big.n_max + 60)
        assert math.fsum(ref[big.n_max + 1:]) < 1e-12

    def test_phase_ignored(self):
        np.testing.assert_array_equal(tmcc_pmf(2j).probabilities, tmcc_pmf(2).probabilities)

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            tmcc_pmf(math.inf)


class TestPoissonPmf:
    def test_vacuum(self):
        assert poisson_pmf(0).probabilities[0] == 1.0

    def test_mean_one(self):
        assert poisson_pmf(1).probabilities[0] == pytest.approx(math.exp(-1), rel=1e-12)

    def test_variance_equals_mean(self):
        d = poisson_pmf(2)
        assert d.variance == pytest.approx(2.0, abs=1e-10)
        assert d.mean == pytest.approx(2.0, abs=1e-10)

    def test_rejects_negative_mean(self):
        with pytest.raises(DomainError):
            poisson_pmf(-0.5)


class TestMoments:
    def test_zero(self):
        assert mean_photons(0) == 0.0
        assert mean_square_photons(0) == 0.0
        assert variance(0) == 0.0

    def test_lambda_one(self):
        assert mean_photons(1) == pytest.approx(MEAN_OF_1, rel=1e-13)
        assert mean_square_photons(1) == 1.0
        assert variance(1) == pytest.approx(VAR_OF_1, rel=1e-12)

    def test_lambda_two_identity(self):
        assert mean_photons(2) ** 2 + variance(2) == pytest.approx(4.0, abs=1e-12)

    def test_lambda_three_against_series(self):
        _, m2 = oracles.series_moments(3)
        assert mean_square_photons(3) == 9
        assert m2 == pytest.approx(9, abs=1e-10)

    @pytest.mark.parametrize("lam", LAMBDA_GRID)
    def test_closed_forms_match_series(self, lam):
        m1, m2 = oracles.series_moments(lam)
        assert mean_photons(lam) == pytest.approx(m1, abs=1e-10)
        assert mean_square_photons(lam) == pytest.approx(m2, abs=1e-10)
        assert variance(lam) == pytest.approx(m2 - m1**2, abs=1e-10)

    @pytest.mark.parametrize("lam", LAMBDA_GRID)
    def test_closed_forms_match_truncated_pmf(self, lam):
        d = tmcc_pmf(lam)
        assert d.mean == pytest.approx(mean_photons(lam), abs=1e-10)
        assert d.variance == pytest.approx(variance(lam), abs=1e-10)

    def test_sub_poissonian_grid(self):
        for k in range(1, 101):
            lam = k / 10
            assert variance(lam) < mean_photons(lam)

    def test_lambda_five_below_coherent(self):
        assert variance(5) < mean_photons(5)


class TestFockAmplitudes:
    def test_vacuum(self):
        c = build_fock_amplitudes(0, 20).coefficients
        assert c[0] == 1.0 and not c[1:].any()

    def test_ratios(self):
        c = build_fock_amplitudes(1, 25).coefficients
        assert c[1] / c[0] == pytest.approx(1.0, rel=1e-13)
        assert c[2] / c[0] == pytest.approx(0.5, rel=1e-13)

    def test_normalized(self):
        assert build_fock_amplitudes(1, 25).norm_squared == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("lam", [0.5, 1, 2, 4])
    def test_squares_match_pmf(self, lam):
        d = tmcc_pmf(lam)
        c = build_fock_amplitudes(lam, d.n_max).coefficients
        np.testing.assert_allclose(c**2, d.probabilities, atol=1e-12, rtol=0)

    def test_against_direct_series(self):
        lam = 1.5
        c = build_fock_amplitudes(lam, 30).coefficients
        i0 = oracles.bessel_i(0, 2 * lam)
        direct = [lam**n / math.factorial(n) / math.sqrt(i0) for n in range(31)]
        np.testing.assert_allclose(c, direct, rtol=1e-12, atol=1e-300)

    def test_truncation_error(self):
        with pytest.raises(TruncationError):
            build_fock_amplitudes(4, 10)


class TestPairAnnihilation:
    def test_vacuum_maps_to_zero(self):
        out = apply_pair_annihilation(build_fock_amplitudes(0, 20)).coefficients
        assert not out.any()

    def test_lowest_index_lambda_one(self):
        c = build_fock_amplitudes(1, 25).coefficients
        out = apply_pair_annihilation(build_fock_amplitudes(1, 25)).coefficients
        assert out[0] == pytest.approx(c[0], rel=1e-13)

    def test_index_three_lambda_two(self):
        c = build_fock_amplitudes(2, 30).coefficients
        out = apply_pair_annihilation(build_fock_amplitudes(2, 30)).coefficients
        assert out[3] == pytest.approx(4 * c[4], rel=1e-14)
        assert out[3] == pytest.approx(2 * c[3], rel=1e-13)

    @pytest.mark.parametrize("lam", [0.5, 1, 2, 4])
    def test_eigenvalue(self, lam):
        state = build_fock_amplitudes(lam, tmcc_pmf(lam).n_max)
        out = apply_pair_annihilation(state).coefficients
        c = state.coefficients
        residual = np.abs(out[:-1] - lam * c[:-1])
        assert residual.max() <= 1e-10


class TestSampling:
    def test_vacuum_always_zero(self):
        d = tmcc_pmf(0)
        for u in (0.0, 0.3, 0.999999):
            assert sample_count(d, u) == 0

    def test_zero_variate_gives_first_supported(self):
        assert sample_count(tmcc_pmf(1), 0.0) == 0
        d = PhotonDistribution([0.0, 0.0, 0.5, 0.5])
        assert sample_count(d, 0.0) == 2

    def test_median_lambda_one(self):
        d = tmcc_pmf(1)
        assert d.cdf[0] == pytest.approx(0.43867627983704873938, rel=1e-12)
        assert d.cdf[1] == pytest.approx(2 * 0.43867627983704873938, rel=1e-12)
        assert sample_count(d, 0.5) == 1

    @given(st.floats(0, 1, exclude_max=True))
    @settings(max_examples=200)
    def test_inverse_cdf_definition(self, u):
        d = tmcc_pmf(2)
        n = sample_count(d, u)
        assert d.cdf[n] > u
        assert n == 0 or d.cdf[n - 1] <= u

    @pytest.mark.slow
    def test_sampling_law(self):
        d = tmcc_pmf(2)
        rng = np.random.default_rng(20261016)
        draws = sample_counts(d, rng.random(1_000_000))
        freq = np.bincount(draws, minlength=d.n_max + 1) / draws.size
        for n, p in enumerate(d.probabilities):
            if p > 1e-3:
                se = math.sqrt(p * (1 - p) / draws.size)
                assert abs(freq[n] - p) < 5 * se


class TestNoisyDistribution:
    def test_convolution(self):
        d = tmcc_pmf(2)
        noisy = d.with_noise(0.1)
        assert noisy.n_max == d.n_max + 1
        assert noisy.probabilities[0] == pytest.approx(0.9 * d.probabilities[0])
        assert noisy.probabilities[3] == pytest.approx(0.9 * d.probabilities[3] + 0.1 * d.probabilities[2])
        assert noisy.mean == pytest.approx(d.mean + 0.1, abs=1e-12)

    def test_zero_noise_is_identity(self):
        d = tmcc_pmf(2)
        assert d.with_noise(0.0) is d
