"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Each criterion also has a wall-clock budget that is asserted.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import special

from bayescons.covering import (
    GaussianCoordCover,
    MixtureTailCover,
    PolyaThetaCover,
    expfam_cover_sum,
    fit_psi,
    gamma_ratio_inequality,
    gaussian_sqrt_sum,
    mixture_tail_sum,
    polya_cover_sum,
    polya_level_bound_check,
    xi_inequality,
)
from bayescons.densities import (
    beta_poly,
    chi_squared,
    hellinger_H,
    hellinger_h,
    kl_divergence,
    power,
    reflected_power,
    step,
    uniform,
)
from bayescons.experiments import ExperimentConfig, run
from bayescons.experiments.cli import main
from bayescons.martingale import (
    build_trace,
    cesaro_diagnostics,
    chi_sq_criterion,
    conditional_mean_check,
    lambda_ensemble,
)
from bayescons.posterior import DiscretePosterior, update_discrete_many
from bayescons.priors import DiscretePrior, RandomHistogramPrior, WeightLaw, sqrt_mass_sum
from bayescons.summability import Verdict

pytestmark = pytest.mark.acceptance

SEED = 20261016


@pytest.fixture
def criterion(capsys):
    """Time a criterion body, print its PASS/FAIL line, then enforce the budget."""

    @contextmanager
    def check(number: int, title: str, budget: float):
        start = time.perf_counter()
        failure = None
        try:
            yield
        except AssertionError as exc:
            failure = exc
        elapsed = time.perf_counter() - start
        slow = elapsed >= budget
        status = "FAIL" if failure is not None or slow else "PASS"
        note = f" (over budget {budget:g} s)" if slow else ""
        with capsys.disabled():
            print(f"\n[{status}] criterion {number}: {title} [{elapsed:.2f} s]{note}")
        if failure is not None:
            raise failure
        assert not slow, f"criterion {number} took {elapsed:.2f} s, budget {budget} s"

    return check


def five_atom_prior():
    atoms = [uniform(), power(1), reflected_power(1), beta_poly(2, 2), step([1.2, 0.8])]
    return DiscretePrior.finite(atoms, [0.3, 0.2, 0.2, 0.2, 0.1])


def test_one_step_identity(criterion):
    with criterion(1, "one-step likelihood-ratio identity over 100 steps", 1.0):
        x = uniform().sample(100, np.random.default_rng(SEED))
        worst = 0.0
        for cell in ([1, 2], [0, 3, 4], None):
            tr = build_trace(five_atom_prior(), cell, uniform(), x, "log")
            steps = np.diff(tr.log_L_direct)
            worst = max(worst, float(np.max(np.abs(steps - tr.log_ratio))), tr.identity_error())
        assert worst < 1e-10


def test_conditional_mean_law(criterion):
    with criterion(2, "conditional mean of the transformed ratio equals minus the divergence", 1.0):
        post = DiscretePosterior.from_prior(five_atom_prior())
        later = update_discrete_many(post, [0.15, 0.62, 0.91, 0.33])
        for p in (post, later):
            for cell in ([1], [1, 2], [2, 3, 4]):
                for kind in ("sqrt-minus-one", "log"):
                    expected, formula = conditional_mean_check(p, cell, uniform(), kind)
                    assert abs(expected - formula) < 1e-6
        # E Lambda_1 for Pi(A) = 1/2, A = {2x}: sqrt(1/2) * (1 - h(2x, uniform)) = 2/3
        prior = DiscretePrior.finite([uniform(), power(1)])
        assert math.sqrt(0.5) * (1 - hellinger_h(power(1), uniform())) == pytest.approx(2 / 3, abs=1e-12)
        x = uniform().sample((100_000, 1), np.random.default_rng(SEED))
        lam = np.exp(lambda_ensemble(prior, [1], uniform(), x)[:, 1])
        assert abs(lam.mean() - 2 / 3) < 3 * lam.std(ddof=1) / math.sqrt(lam.size)


def test_lambda_decay(criterion):
    with criterion(3, "Monte-Carlo mean of Lambda_n under (1 - gamma)^n sqrt(Pi(A))", 30.0):
        prior = DiscretePrior.finite([uniform(), power(1)])
        gamma = hellinger_h(power(1), uniform())
        assert gamma == pytest.approx(0.057191, abs=1e-6)
        x = uniform().sample((10_000, 50), np.random.default_rng(SEED))
        lam = np.exp(lambda_ensemble(prior, [1], uniform(), x))
        mean = lam.mean(axis=0)
        rse = lam.std(axis=0, ddof=1) / math.sqrt(lam.shape[0]) / mean
        n = np.arange(51)
        bound = (1 - gamma) ** n * math.sqrt(0.5)
        assert np.all(mean <= bound * (1 + 3 * rse) + 1e-12)


def test_consistency_trend(criterion):
    with criterion(4, "posterior mass outside the H-ball decays exponentially", 10.0):
        atoms = [{"name": "uniform"}, {"name": "linear"}, {"name": "reflected-linear"},
                 {"name": "power", "k": 2}, {"name": "beta", "a": 2, "b": 2},
                 {"name": "piecewise", "edges": [0, 0.5, 1], "heights": [1.2, 0.8]}]
        law = {"kind": "geometric", "param": 0.5}
        assert sqrt_mass_sum(DiscretePrior.from_law(WeightLaw("geometric", 0.5), 6)).verdict is Verdict.SUMMABLE
        cfg = ExperimentConfig.from_dict({
            "scenario": "consistency", "seed": SEED, "truth": {"name": "uniform"}, "n": 300, "epsilon": 0.3,
            "prior": {"family": "discrete", "atoms": atoms, "law": law},
        })
        rows = run(cfg).rows
        assert rows[-1]["post_mass_A"] < 0.01
        n = np.array([r["n"] for r in rows[50:]], dtype=float)
        y = np.log([r["post_mass_A"] for r in rows[50:]])
        slope, intercept = np.polyfit(n, y, 1)
        r2 = 1 - np.sum((y - (slope * n + intercept)) ** 2) / np.sum((y - y.mean()) ** 2)
        assert slope < 0 and r2 > 0.9


def test_cesaro_predictive(criterion):
    with criterion(5, "Cesaro mean of H(f_{n-1}, f0) halves from N=10 to N=500", 30.0):
        prior = RandomHistogramPrior.geometric(0.5, 64)
        assert prior.first_moment_finite()
        means, evidence_root_gap = [], []
        for r in range(8):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=SEED, spawn_key=(r,)))
            cd = cesaro_diagnostics(build_trace(prior, None, uniform(), uniform().sample(500, rng), "sqrt-minus-one"))
            means.append(cd.mean_H)
            evidence_root_gap.append(abs(cd.evidence_root_gap[-1]))
        mean_H = np.mean(means, axis=0)
        assert mean_H[499] < 0.5 * mean_H[9]
        assert max(evidence_root_gap) < 0.05


def test_chi_sq_bound(criterion):
    with criterion(6, "E int f0^2 / f_n within its histogram bound", 60.0):
        rng = np.random.default_rng(SEED)
        exact = chi_sq_criterion(RandomHistogramPrior.point(1), uniform(), 5, 100, rng)
        # exact up to the rounding of the quadrature weight sum
        assert exact.bound == 1.0 and abs(exact.estimate - 1.0) <= 4 * np.finfo(float).eps
        rep = chi_sq_criterion(RandomHistogramPrior.point(2), uniform(), 3, 10_000, rng)
        assert rep.bound == pytest.approx(1.25) and rep.within(3.0)
        for n in (1, 10, 100):
            rep = chi_sq_criterion(RandomHistogramPrior.geometric(0.5, 64), uniform(), n, 2_000, rng)
            assert rep.within(3.0), (n, rep.estimate, rep.bound, rep.stderr)


def test_bound_domination_grid(criterion):
    with criterion(7, "analytic bounds dominate their exact counterparts", 5.0):
        for xi in (0.1, 1.0, 10.0, 100.0):
            for m in (1, 2, 3):
                lhs, rhs = xi_inequality(xi, m)
                assert lhs <= rhs
        for a in (1, 2, 5, 10, 50):
            lhs, rhs = gamma_ratio_inequality(a)
            assert lhs <= rhs
        for sigma in (0.5, 1.0, 2.0):
            for delta in (0.5, 1.0, 2.0):
                direct, bound = gaussian_sqrt_sum(sigma, delta, 1)
                assert direct <= bound
        psi = fit_psi()
        for cover in (PolyaThetaCover.power(3.5), PolyaThetaCover.geometric(8), PolyaThetaCover.power(4, 0.5)):
            rows = polya_level_bound_check(cover, psi, levels=10)
            assert rows and all(exact <= bound for *_, exact, bound in rows)


def test_summability_verdicts(criterion):
    with criterion(8, "summability verdicts with certificates", 10.0):
        psi = fit_psi()
        summable = [
            polya_cover_sum(PolyaThetaCover.power(3.5), psi),
            polya_cover_sum(PolyaThetaCover.geometric(8), psi),
            expfam_cover_sum(GaussianCoordCover.power_law(1.5, 1.25, m=3)),
            mixture_tail_sum(MixtureTailCover(("gaussian", 1.0), ("exponential", 10))),
        ]
        divergent = [
            sqrt_mass_sum(DiscretePrior.from_law(WeightLaw("polynomial", 2.0), 1000)),
            polya_cover_sum(PolyaThetaCover.power(1), psi),
            mixture_tail_sum(MixtureTailCover(("geometric", 0.5), ("exponential", 10))),
        ]
        for rep in summable:
            assert rep.verdict is Verdict.SUMMABLE, rep.label
            assert math.isfinite(rep.total_bound) and rep.certificate
        for rep in divergent:
            assert rep.verdict is Verdict.DIVERGENT, rep.label
            assert rep.witness


def test_divergence_accuracy(criterion):
    with criterion(9, "divergences match closed forms", 1.0):
        u, lin, b22 = uniform(), power(1), beta_poly(2, 2)
        h_lin = 1 - 2 * math.sqrt(2) / 3
        checks = [
            (hellinger_h(u, lin), h_lin),
            (hellinger_H(u, lin), math.sqrt(2 * h_lin)),
            (kl_divergence(u, lin), 1 - math.log(2)),
            (chi_squared(lin, u), 1 / 3),
            (chi_squared(u, u), 0.0),
            (hellinger_h(u, b22), 1 - math.sqrt(6) * math.pi / 8),
            (kl_divergence(u, b22), 2 - math.log(6)),
            (kl_divergence(u, u), 0.0),
        ]
        for got, want in checks:
            assert abs(got - want) < 1e-8
        assert chi_squared(u, lin) == math.inf


def test_determinism(criterion, tmp_path):
    with criterion(10, "identical config and seed give byte-identical outputs", 10.0):
        configs = {
            "consistency": {"scenario": "consistency", "seed": SEED, "truth": {"name": "uniform"}, "n": 100,
                            "epsilon": 0.3, "replicates": 2,
                            "prior": {"family": "discrete", "atoms": [{"name": "uniform"}, {"name": "linear"}]}},
            "martingale": {"scenario": "martingale", "seed": SEED, "truth": {"name": "uniform"}, "n": 50,
                           "replicates": 30, "transform": "log", "set": {"kind": "atoms", "indices": [1]},
                           "prior": {"family": "discrete", "atoms": [{"name": "uniform"}, {"name": "linear"}]}},
            "summability": {"scenario": "summability", "seed": SEED,
                            "prior": [{"family": "polya", "a": {"kind": "geometric", "rate": 8}},
                                      {"family": "discrete", "law": {"kind": "polynomial", "param": 2}}]},
            "chi-sq": {"scenario": "chi-sq-criterion", "seed": SEED, "truth": {"name": "uniform"}, "n": 3,
                       "replicates": 500, "prior": {"family": "histogram", "law": "point", "m": 2}},
        }
        for name, d in configs.items():
            path = tmp_path / f"{name}.json"
            path.write_text(ExperimentConfig.from_dict(d).dumps())
            for fmt in ("csv", "json"):
                outs = []
                for rep in ("a", "b"):
                    out = tmp_path / name / fmt / rep
                    assert main(["simulate", "--config", str(path), "--out", str(out), "--format", fmt]) == 0
                    outs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
                assert outs[0] == outs[1], name


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
