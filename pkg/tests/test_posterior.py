import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sint
from scipy import stats

from bayescons.densities import half_supported, hellinger_h, power, uniform
from bayescons.posterior import (
    DiscretePosterior,
    HellingerComplementSet,
    PosteriorError,
    expfam_posterior_is,
    histogram_predictive,
    histogram_update,
    polya_log_marginal,
    polya_predictive,
    polya_update,
    posterior_mass,
    predictive,
    restricted_predictive,
    update_discrete,
    update_discrete_many,
)
from bayescons.priors import DiscretePrior, ExpFamilySpec, PolyaTreeParams, RandomHistogramPrior


def two_atoms():
    return DiscretePosterior.from_prior(DiscretePrior.finite([uniform(), power(1)]))


class TestDiscreteUpdate:
    def test_hand_normalization(self):
        post = update_discrete(two_atoms(), 0.8)
        # (0.5 * 1, 0.5 * 1.6) normalised
        assert post.weights == pytest.approx([0.5 / 1.3, 0.8 / 1.3], abs=1e-15)
        assert np.round(post.weights, 4).tolist() == [0.3846, 0.6154]

    def test_equal_likelihoods(self):
        assert update_discrete(two_atoms(), 0.5).weights == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_identical_atoms(self):
        post = DiscretePosterior.from_prior(DiscretePrior.finite([power(1), power(1)]))
        assert update_discrete_many(post, [0.1, 0.9, 0.4]).weights == pytest.approx([0.5, 0.5])

    def test_all_atoms_zero(self):
        post = DiscretePosterior.from_prior(DiscretePrior.finite([half_supported(True)]))
        with pytest.raises(PosteriorError):
            update_discrete(post, 0.9)

    def test_update_is_pure(self):
        post = two_atoms()
        update_discrete(post, 0.8)
        assert post.weights == pytest.approx([0.5, 0.5]) and post.n == 0


class TestPredictive:
    def test_prior_predictive(self):
        x = np.linspace(0, 1, 9)
        assert np.allclose(predictive(two_atoms())(x), 0.5 + x)

    def test_after_update(self):
        assert predictive(update_discrete(two_atoms(), 0.8))(np.array([0.5]))[0] == pytest.approx(1.0)

    def test_single_atom(self):
        post = DiscretePosterior.from_prior(DiscretePrior.finite([power(2)]))
        x = np.linspace(0, 1, 5)
        assert np.allclose(predictive(post)(x), 3 * x ** 2)

    def test_singleton_restriction_ignores_data(self):
        post = update_discrete_many(two_atoms(), [0.1, 0.2])
        x = np.linspace(0, 1, 5)
        assert np.allclose(restricted_predictive(post, [1])(x), 2 * x)

    def test_full_restriction_is_predictive(self):
        post = update_discrete(two_atoms(), 0.3)
        x = np.linspace(0, 1, 5)
        assert np.allclose(restricted_predictive(post, [0, 1])(x), predictive(post)(x))

    def test_renormalised_restriction(self):
        prior = DiscretePrior.finite([uniform(), power(1), power(2)], [0.25, 0.25, 0.5])
        f = restricted_predictive(DiscretePosterior.from_prior(prior), [1, 2])
        x = np.linspace(0, 1, 7)
        assert np.allclose(f(x), (2 * x) / 3 + 2 * (3 * x ** 2) / 3)

    def test_empty_restriction(self):
        with pytest.raises(PosteriorError):
            restricted_predictive(two_atoms(), np.array([False, False]))


class TestPosteriorMass:
    def test_hellinger_complement(self):
        post = update_discrete(two_atoms(), 0.8)
        A = HellingerComplementSet(uniform(), 0.3)
        assert posterior_mass(post, A) == pytest.approx(0.8 / 1.3)

    def test_radius_beyond_sqrt2_is_empty(self):
        A = HellingerComplementSet(uniform(), 1.5)
        assert posterior_mass(two_atoms(), A) == 0.0

    def test_small_radius_excludes_only_truth(self):
        prior = DiscretePrior.finite([uniform(), power(1), power(2)], [0.2, 0.3, 0.5])
        A = HellingerComplementSet(uniform(), 1e-9)
        assert posterior_mass(DiscretePosterior.from_prior(prior), A) == pytest.approx(0.8)


class TestPolya:
    def test_path_counts(self):
        p = polya_update(PolyaTreeParams.schedule(1, [1.0]), 0.3)
        assert p.branch_counts[0].tolist() == [1, 0]
        p = polya_update(PolyaTreeParams.schedule(2, [1.0, 1.0]), 0.3)
        assert p.branch_counts[0].tolist() == [1, 0]
        assert p.branch_counts[1].tolist() == [0, 1, 0, 0]

    def test_same_leaf_twice(self):
        p = PolyaTreeParams.schedule(3, [1.0, 1.0, 1.0])
        p = polya_update(polya_update(p, 0.3), 0.32)
        assert p.branch_counts[2].tolist() == [0, 0, 2, 0, 0, 0, 0, 0]
        assert p.branch_counts[1].tolist() == [0, 2, 0, 0]

    def test_prior_predictive_is_uniform(self):
        x = np.linspace(0, 1, 9)
        assert np.allclose(polya_predictive(PolyaTreeParams.schedule(4, lambda k: k))(x), 1.0)

    def test_one_observation(self):
        p = polya_update(PolyaTreeParams.schedule(1, [1.0]), 0.3)
        assert polya_predictive(p)(np.array([0.1, 0.9])) == pytest.approx([4 / 3, 2 / 3])

    def test_shrinkage_limit(self):
        p = polya_update(PolyaTreeParams.schedule(1, [1e6]), 0.3)
        assert np.abs(polya_predictive(p)(np.array([0.1, 0.9])) - 1).max() < 1e-5

    @pytest.mark.parametrize("a", [0.5, 2.0, 7.0])
    def test_log_marginal_against_direct_integral(self, a):
        # two observations in the left half, one in the right; depth 1
        p = PolyaTreeParams.schedule(1, [a])
        for x in (0.1, 0.2, 0.8):
            p = polya_update(p, x)
        direct, _ = sint.quad(lambda t: (2 * t) ** 2 * (2 * (1 - t)) * stats.beta(a, a).pdf(t), 0, 1)
        assert polya_log_marginal(p) == pytest.approx(math.log(direct), abs=1e-10)


class TestHistogram:
    def test_counts_two_one(self):
        hp = histogram_update(RandomHistogramPrior.point(2), [0.1, 0.2, 0.9])
        assert hp.bin_weights[0] == pytest.approx([1.2, 0.8])
        f = histogram_predictive(hp)
        assert f(np.array([0.25, 0.75])) == pytest.approx([1.2, 0.8])

    def test_no_data(self):
        hp = histogram_update(RandomHistogramPrior.geometric(0.5, 8), [])
        assert all(np.allclose(w, 1.0) for w in hp.bin_weights)
        assert np.allclose(histogram_predictive(hp)(np.linspace(0, 1, 11)), 1.0)

    def test_single_bin(self):
        hp = histogram_update(RandomHistogramPrior.point(1), [0.1, 0.15, 0.3])
        assert hp.bin_weights[0].tolist() == [1.0]

    def test_mixture_of_two_models_without_data(self):
        prior = RandomHistogramPrior(np.array([0, 0.5, 0, 0.5]))
        f = histogram_predictive(histogram_update(prior, []))
        assert np.allclose(f(np.linspace(0, 1, 13)), 1.0)

    def test_log_evidence(self):
        # m = 2, counts (2, 1): 2^3 E[p1^2 p2] under Dirichlet(1, 1) = 8 / 12
        hp = histogram_update(RandomHistogramPrior.point(2), [0.1, 0.2, 0.9])
        assert hp.log_evidence == pytest.approx(math.log(2 / 3), abs=1e-14)

    def test_data_outside_unit_interval(self):
        with pytest.raises(ValueError):
            histogram_update(RandomHistogramPrior.point(2), [1.5])


@given(st.lists(st.floats(0.0, 1.0), max_size=30), st.integers(1, 12))
def test_histogram_predictive_is_a_density(data, m):
    hp = histogram_update(RandomHistogramPrior.geometric(0.6, m), data)
    assert histogram_predictive(hp).check_normalized() == pytest.approx(1.0, abs=1e-10)
    assert hp.model_post.sum() == pytest.approx(1.0)


@given(st.lists(st.floats(0.0, 1.0), max_size=20))
def test_polya_predictive_is_a_density(data):
    p = PolyaTreeParams.schedule(4, lambda k: k ** 2)
    for x in data:
        p = polya_update(p, x)
    assert p.n == len(data)
    assert polya_predictive(p).check_normalized() == pytest.approx(1.0, abs=1e-10)


class TestImportanceSampling:
    def test_no_data(self):
        res = expfam_posterior_is(ExpFamilySpec.power_law(J=3), [], 500, np.random.default_rng(0))
        assert np.allclose(res.weights, 1 / 500)
        assert res.ess == pytest.approx(500)

    def test_constant_only(self):
        res = expfam_posterior_is(ExpFamilySpec.power_law(J=0), [0.1, 0.5], 200, np.random.default_rng(0))
        assert np.allclose(res.weights, 1 / 200)

    def test_posterior_moves_towards_truth(self):
        # With unit prior scale the prior mean density is already within
        # h = 0.005 of uniform, below the n = 20 posterior noise; scale 3 puts
        # it at h = 0.03 so the comparison measures learning.
        spec = ExpFamilySpec.power_law(J=2, scale=3.0)
        gains = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            prior_pred = expfam_posterior_is(spec, [], 4000, rng).predictive()
            data = uniform().sample(20, rng)
            post_pred = expfam_posterior_is(spec, data, 4000, rng).predictive()
            gains.append(hellinger_h(prior_pred, uniform()) - hellinger_h(post_pred, uniform()))
        assert np.mean(gains) > 3 * np.std(gains) / np.sqrt(len(gains))

    def test_degeneracy_warning(self):
        spec = ExpFamilySpec.power_law(J=4, scale=5.0)
        data = power(6).sample(300, np.random.default_rng(1))
        with pytest.warns(RuntimeWarning, match="ESS"):
            res = expfam_posterior_is(spec, data, 100, np.random.default_rng(2))
        assert res.warning is not None

    def test_requires_enough_draws(self):
        with pytest.raises(ValueError):
            expfam_posterior_is(ExpFamilySpec.power_law(J=2), [], 50, np.random.default_rng(0))
