"""Posterior updating and predictive densities for the prior families.

Weights are carried as accumulated log-likelihoods and normalised with the
max-shift trick when read; the common ``f0`` factor of the likelihood ratio
cancels and is never formed here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .densities import (
    DEFAULT_RULE,
    QuadratureRule,
    SupportedDensity,
    hellinger_h,
    mixture,
    piecewise_constant,
)
from .priors import (
    DiscretePrior,
    ExpFamilySpec,
    PolyaTreeParams,
    RandomHistogramPrior,
    cosine_basis,
)

__all__ = [
    "PosteriorError",
    "DiscretePosterior",
    "HellingerComplementSet",
    "update_discrete",
    "update_discrete_many",
    "predictive",
    "restricted_predictive",
    "posterior_mass",
    "set_mask",
    "polya_update",
    "polya_predictive",
    "polya_log_marginal",
    "HistogramPosterior",
    "histogram_update",
    "histogram_predictive",
    "ISPosterior",
    "expfam_posterior_is",
]


class PosteriorError(ValueError):
    """The posterior (or a restriction of it) is undefined."""


# -- discrete priors -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscretePosterior:
    base: DiscretePrior
    log_weights: np.ndarray
    n: int = 0

    @classmethod
    def from_prior(cls, prior: DiscretePrior) -> "DiscretePosterior":
        if prior.atoms is None:
            raise PosteriorError("a weights-only prior has no likelihood")
        return cls(prior, np.zeros(len(prior)), 0)

    @property
    def log_unnormalized(self) -> np.ndarray:
        return self.base.log_weights + self.log_weights

    @property
    def weights(self) -> np.ndarray:
        lw = self.log_unnormalized
        w = np.exp(lw - lw.max())
        return w / w.sum()


def update_discrete(post: DiscretePosterior, x: float) -> DiscretePosterior:
    vals = np.array([float(f(np.array([x]))[0]) for f in post.base.atoms])
    if not np.isfinite(vals).all():
        raise PosteriorError(f"atom density not finite at x={x!r}")
    live = np.isfinite(post.log_unnormalized)
    if not (vals[live] > 0).any():
        raise PosteriorError(f"every atom vanishes at x={x!r}; posterior undefined")
    with np.errstate(divide="ignore"):
        return DiscretePosterior(post.base, post.log_weights + np.log(vals), post.n + 1)


def update_discrete_many(post: DiscretePosterior, data: Sequence[float]) -> DiscretePosterior:
    for x in np.asarray(data, dtype=float):
        post = update_discrete(post, x)
    return post


@dataclass(frozen=True, eq=False)
class HellingerComplementSet:
    """Densities at distance greater than ``radius`` from ``reference``.

    ``metric`` is ``"H"`` (Hellinger distance) or ``"h"`` (``1 - affinity``).
    Membership per atom is data independent and cached per prior.
    """

    reference: SupportedDensity
    radius: float
    metric: str = "H"
    rule: QuadratureRule = DEFAULT_RULE
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if self.metric not in ("H", "h"):
            raise ValueError("metric must be 'H' or 'h'")

    def distance(self, f: SupportedDensity) -> float:
        h = hellinger_h(f, self.reference, self.rule)
        return math.sqrt(2 * h) if self.metric == "H" else h

    def members(self, prior: DiscretePrior) -> np.ndarray:
        key = id(prior)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not prior:
            mask = np.array([self.distance(f) > self.radius for f in prior.atoms], dtype=bool)
            hit = (prior, mask)
            self._cache[key] = hit
        return hit[1].copy()

    def describe(self) -> str:
        return f"{{f : {self.metric}(f, {self.reference.name}) > {self.radius:g}}}"


def set_mask(prior: DiscretePrior, A) -> np.ndarray:
    """Boolean atom mask for ``A``: ``None`` (everything), a complement set, a mask or indices."""
    k = len(prior)
    if A is None:
        return np.ones(k, dtype=bool)
    if isinstance(A, HellingerComplementSet):
        return A.members(prior)
    A = np.asarray(A)
    if A.dtype == bool:
        if A.shape != (k,):
            raise ValueError("mask length must match the number of atoms")
        return A.copy()
    mask = np.zeros(k, dtype=bool)
    mask[A.astype(int)] = True
    return mask


def predictive(post: DiscretePosterior) -> SupportedDensity:
    """Posterior mean density ``sum_k Pi_k^n f_k``."""
    return mixture(post.base.atoms, post.weights, name=f"predictive(n={post.n})")


def restricted_predictive(post: DiscretePosterior, A) -> SupportedDensity:
    """Predictive with the posterior restricted and renormalised to ``A``."""
    mask = set_mask(post.base, A)
    w = np.where(mask, post.weights, 0.0)
    if not w.sum() > 0:
        raise PosteriorError("posterior mass of the restriction set is zero")
    return mixture(post.base.atoms, w / w.sum(), name=f"restricted-predictive(n={post.n})")


def posterior_mass(post: DiscretePosterior, A) -> float:
    mask = set_mask(post.base, A)
    return float(np.clip(post.weights[mask].sum(), 0.0, 1.0))


# -- Polya trees -----------------------------------------------------------------


def polya_update(params: PolyaTreeParams, x: float) -> PolyaTreeParams:
    """Add one observation to the counts along its path."""
    K = params.depth
    leaf = min(max(int(math.floor(float(x) * 2 ** K)), 0), 2 ** K - 1)
    counts = []
    for k, c in enumerate(params.branch_counts, start=1):
        c = c.copy()
        c[leaf >> (K - k)] += 1
        counts.append(c)
    return PolyaTreeParams(K, params.level_params, tuple(counts))


def _polya_leaf_probs(params: PolyaTreeParams) -> np.ndarray:
    probs = np.ones(1)
    for k in range(1, params.depth + 1):
        a = params.level_params[k - 1]
        c = params.branch_counts[k - 1].reshape(-1, 2).astype(float)
        left = (a + c[:, 0]) / (2 * a + c[:, 0] + c[:, 1])
        probs = np.column_stack((probs * left, probs * (1 - left))).ravel()
    return probs


def polya_predictive(params: PolyaTreeParams) -> SupportedDensity:
    """Posterior mean density: a ``2^K``-bin histogram."""
    K = params.depth
    return piecewise_constant(params.leaf_edges, _polya_leaf_probs(params) * 2 ** K,
                              name=f"polya-predictive(n={params.n})")


def polya_log_marginal(params: PolyaTreeParams) -> float:
    """``log int prod_i f(X_i) Pi(df)`` for the data summarised in the counts."""
    out = params.n * params.depth * math.log(2.0)
    for k in range(1, params.depth + 1):
        a = params.level_params[k - 1]
        c = params.branch_counts[k - 1].reshape(-1, 2)
        out += float(np.sum(betaln(a + c[:, 0], a + c[:, 1]) - betaln(a, a)))
    return out


# -- random histograms -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HistogramPosterior:
    """Per-``m`` posterior mean bin heights and the model posterior.

    ``bin_weights[i]`` holds ``w_kmn = m (1 + n_km) / (m + n)`` for
    ``m = ms[i]``; ``model_post[i]`` is ``pi(m | X^n)``.
    """

    prior: RandomHistogramPrior
    ms: np.ndarray
    counts: tuple[np.ndarray, ...]
    bin_weights: tuple[np.ndarray, ...]
    model_post: np.ndarray
    log_evidence: float
    n: int

    def node_values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for m, w, p in zip(self.ms, self.bin_weights, self.model_post):
            if p == 0:
                continue
            idx = np.clip(np.floor(x * m).astype(int), 0, m - 1)
            out += p * w[idx]
        return np.where((x >= 0) & (x <= 1), out, 0.0)


def _bin_index(data: np.ndarray, m: int) -> np.ndarray:
    return np.clip(np.floor(data * m).astype(int), 0, m - 1)


def _histogram_log_marginals(counts_by_m, ms, n):
    # log of m^n (m-1)! prod_k n_km! / (n+m-1)!
    return np.array([n * math.log(m) + gammaln(m) + gammaln(1 + c).sum() - gammaln(m + n)
                     for m, c in zip(ms, counts_by_m)])


def histogram_update(prior: RandomHistogramPrior, data: Sequence[float]) -> HistogramPosterior:
    data = np.asarray(data, dtype=float)
    if data.size and ((data < 0) | (data > 1)).any():
        raise ValueError("histogram data must lie in [0, 1]")
    n = data.size
    ms = prior.support
    counts, weights = [], []
    for m in ms:
        c = np.bincount(_bin_index(data, m), minlength=m)
        counts.append(c)
        # numerator is an integer vector summing to m (m + n)
        weights.append(m * (1 + c) / (m + n))
    log_prior = np.log(prior.bin_probs[ms - 1])
    joint = log_prior + _histogram_log_marginals(counts, ms, n)
    log_ev = float(logsumexp(joint))
    post = np.exp(joint - log_ev)
    post /= post.sum()
    return HistogramPosterior(prior, ms, tuple(counts), tuple(weights), post, log_ev, n)


def histogram_predictive(hp: HistogramPosterior) -> SupportedDensity:
    """``f_n = sum_m pi(m | X^n) f_nm`` as a step density."""
    breaks = sorted({k / m for m in hp.ms for k in range(1, m)})
    ub = float(sum(p * w.max() for w, p in zip(hp.bin_weights, hp.model_post)))
    return SupportedDensity(hp.node_values, name=f"histogram-predictive(n={hp.n})",
                            breaks=tuple(breaks), upper_bound=ub)


# -- exponential family by importance sampling -----------------------------------


@dataclass(frozen=True, eq=False)
class ISPosterior:
    """Self-normalised importance sample of exponential-family densities."""

    spec: ExpFamilySpec
    thetas: np.ndarray
    log_norms: np.ndarray
    weights: np.ndarray
    ess: float
    warning: str | None = None

    def predictive(self) -> SupportedDensity:
        J = self.spec.truncation
        keep = self.weights > 0
        th, c, w = self.thetas[keep], self.log_norms[keep], self.weights[keep]

        def ev(x):
            x = np.asarray(x, dtype=float)
            flat = x.ravel()
            B = cosine_basis(flat, J)
            out = np.zeros(flat.size)
            for s in range(0, th.shape[0], 512):
                out += w[s:s + 512] @ np.exp(th[s:s + 512] @ B - c[s:s + 512, None])
            return np.where((flat >= 0) & (flat <= 1), out, 0.0).reshape(x.shape)

        return SupportedDensity(ev, name="expfam-predictive")


def _log_normalizers(thetas: np.ndarray, J: int, rule: QuadratureRule) -> np.ndarray:
    grid = rule.grid(0.0, 1.0)
    B = cosine_basis(grid.nodes, J)
    out = np.empty(thetas.shape[0])
    for s in range(0, thetas.shape[0], 512):
        expo = thetas[s:s + 512] @ B
        shift = expo.max(axis=1, keepdims=True)
        out[s:s + 512] = shift[:, 0] + np.log(grid.integrate_values(np.exp(expo - shift)))
    return out


def expfam_posterior_is(spec: ExpFamilySpec, data: Sequence[float], S: int, rng: np.random.Generator,
                        rule: QuadratureRule = DEFAULT_RULE) -> ISPosterior:
    """Importance sampling with the prior as proposal.

    Weights are proportional to ``prod_i f_theta(X_i)``.  An effective sample
    size below 10 attaches a warning to the result and emits a
    ``RuntimeWarning``.
    """
    if S < 100:
        raise ValueError("need S >= 100 importance draws")
    data = np.asarray(data, dtype=float)
    J = spec.truncation
    thetas = rng.normal(0.0, spec.coord_sds, size=(S, J + 1))
    c = _log_normalizers(thetas, J, rule)
    if data.size:
        loglik = (thetas @ cosine_basis(data, J)).sum(axis=1) - data.size * c
    else:
        loglik = np.zeros(S)
    w = np.exp(loglik - loglik.max())
    w /= w.sum()
    ess = float(1.0 / np.sum(w * w))
    msg = None
    if ess < 10:
        msg = f"importance weights degenerate: ESS = {ess:.2f} < 10"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ISPosterior(spec, thetas, c, w, ess, msg)
