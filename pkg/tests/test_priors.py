import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayescons.densities import hellinger_h, kl_divergence, power, reflected_power, uniform
from bayescons.priors import (
    DiscretePrior,
    ExpFamilySpec,
    PolyaTreeParams,
    RandomHistogramPrior,
    WeightLaw,
    cosine_basis,
    discrete_kl_mass,
    expfam_density,
    histogram_density,
    kl_neighborhood_mass,
    polya_density,
    sample_density,
    sqrt_mass_sum,
)
from bayescons.summability import Verdict


class TestSampling:
    def test_balanced_polya_split_is_uniform(self):
        f = polya_density([np.array([0.5])])
        assert hellinger_h(f, uniform()) == pytest.approx(0.0, abs=1e-14)

    def test_histogram_heights_are_m_times_probs(self):
        f = histogram_density([0.25, 0.75])
        assert f(np.array([0.2, 0.7])).tolist() == [0.5, 1.5]

    def test_zero_coefficients_give_uniform(self):
        f, c = expfam_density(np.zeros(5))
        assert c == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(f(np.linspace(0, 1, 11)), 1.0)

    def test_cosine_basis_is_orthonormal(self):
        from bayescons.densities import DEFAULT_RULE

        g = DEFAULT_RULE.grid(0, 1)
        B = cosine_basis(g.nodes, 4)
        gram = np.array([[g.integrate_values(B[i] * B[j]) for j in range(5)] for i in range(5)])
        assert np.allclose(gram, np.eye(5), atol=1e-10)

    @pytest.mark.parametrize("prior", [
        PolyaTreeParams.schedule(4, lambda k: k * k),
        RandomHistogramPrior.geometric(0.5, 16),
        ExpFamilySpec.power_law(J=6),
        DiscretePrior.finite([uniform(), power(1)]),
    ], ids=["polya", "histogram", "expfam", "discrete"])
    def test_draws_are_normalized(self, prior):
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert sample_density(prior, rng).check_normalized() == pytest.approx(1.0, abs=1e-6)

    def test_draws_are_reproducible(self):
        p = PolyaTreeParams.schedule(3, [1.0, 2.0, 3.0])
        a = sample_density(p, np.random.default_rng(9))
        b = sample_density(p, np.random.default_rng(9))
        x = np.linspace(0, 1, 17)
        assert np.array_equal(a(x), b(x))


class TestSqrtMassSum:
    def test_geometric(self):
        # sum_k 2^(-k/2) = 1 / (sqrt 2 - 1)
        rep = sqrt_mass_sum(DiscretePrior.from_law(WeightLaw("geometric", 0.5), 10))
        assert rep.verdict is Verdict.SUMMABLE
        assert rep.total_bound == pytest.approx(1 / (math.sqrt(2) - 1), rel=1e-12)

    def test_inverse_square_is_divergent(self):
        rep = sqrt_mass_sum(DiscretePrior.from_law(WeightLaw("polynomial", 2.0), 10))
        assert rep.verdict is Verdict.DIVERGENT
        assert "harmonic" in rep.witness

    def test_fast_polynomial_is_summable(self):
        rep = sqrt_mass_sum(DiscretePrior.from_law(WeightLaw("polynomial", 3.0), 10))
        assert rep.verdict is Verdict.SUMMABLE
        # the tail bound must cover the true remainder; compare with a long direct sum
        k = np.arange(1, 10 ** 6 + 1, dtype=float)
        direct = np.sqrt(k ** -3.0 / 1.2020569031595942).sum()
        assert rep.total_bound >= direct

    def test_finite(self):
        rep = sqrt_mass_sum(DiscretePrior.finite([uniform()] * 3))
        assert rep.verdict is Verdict.SUMMABLE
        assert rep.total_bound == pytest.approx(3 * math.sqrt(1 / 3), abs=1e-14)

    def test_custom_law_is_inconclusive(self):
        law = WeightLaw("custom", fn=lambda k: 1.0 / (k * (k + 1)))
        rep = sqrt_mass_sum(DiscretePrior.from_law(law, 10))
        assert rep.verdict is Verdict.INCONCLUSIVE
        assert rep.tail_bound is None


class TestKLMass:
    def test_exact_enumeration(self):
        prior = DiscretePrior.finite([uniform(), power(1), reflected_power(1)], [0.4, 0.3, 0.3])
        assert discrete_kl_mass(prior, uniform(), 1e-9) == pytest.approx(0.4)
        assert discrete_kl_mass(prior, uniform(), 0.31) == pytest.approx(1.0)

    def test_monte_carlo_matches_enumeration(self):
        prior = DiscretePrior.finite([uniform(), power(1), power(2)], [0.4, 0.3, 0.3])
        est = kl_neighborhood_mass(prior, uniform(), 1e-9, 20_000, np.random.default_rng(2))
        assert abs(est.estimate - 0.4) < 4 * est.stderr

    def test_whole_space(self):
        est = kl_neighborhood_mass(PolyaTreeParams.schedule(2, [1.0, 1.0]), uniform(), math.inf, 10,
                                   np.random.default_rng(0))
        assert est.estimate == 1.0

    def test_polya_neighbourhood_has_positive_mass(self):
        prior = PolyaTreeParams.schedule(6, lambda k: k * k)
        est = kl_neighborhood_mass(prior, uniform(), 0.05, 2000, np.random.default_rng(20261016))
        assert est.estimate > 0 and est.stderr > 0

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            kl_neighborhood_mass(DiscretePrior.finite([uniform()]), uniform(), 0.0, 10, np.random.default_rng(0))


class TestPriorValidation:
    def test_polya_counts_must_be_consistent(self):
        # the left child at level 1 holds one point but its children hold none
        with pytest.raises(ValueError):
            PolyaTreeParams(2, np.array([1.0, 1.0]), (np.array([1, 0]), np.array([0, 0, 1, 0])))

    def test_histogram_first_moment(self):
        assert RandomHistogramPrior.geometric(0.5).first_moment_finite()
        assert not RandomHistogramPrior.polynomial(2.0).first_moment_finite()
        assert RandomHistogramPrior.polynomial(3.0).first_moment_finite()

    def test_weights_are_normalized(self):
        p = DiscretePrior.finite([uniform(), power(1)], [2.0, 6.0])
        assert p.weights.tolist() == [0.25, 0.75]


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8))
def test_polya_density_integrates_to_one(level1):
    splits = [np.array(level1[:1])]
    if len(level1) >= 3:
        splits.append(np.array(level1[1:3]))
    assert polya_density(splits).check_normalized() == pytest.approx(1.0, abs=1e-12)


def test_kl_of_sampled_histogram_is_finite():
    f = sample_density(RandomHistogramPrior.point(4), np.random.default_rng(1))
    assert math.isfinite(kl_divergence(uniform(), f))
