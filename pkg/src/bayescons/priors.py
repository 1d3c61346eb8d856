"""Prior families on densities over [0, 1] and diagnostics defined on priors.

Four families are provided:

* :class:`DiscretePrior` -- countably many densities with weights,
  optionally described by an analytic :class:`WeightLaw`.
* :class:`PolyaTreeParams` -- a dyadic Polya tree truncated at depth ``K``
  with symmetric ``Beta(a_k, a_k)`` splits at level ``k``.
* :class:`RandomHistogramPrior` -- a random number of equal bins ``m`` with
  ``Dirichlet(1, ..., 1)`` bin probabilities.
* :class:`ExpFamilySpec` -- ``exp{sum_j theta_j phi_j(x) - c(theta)}`` on a
  cosine basis with independent ``N(0, sigma_j^2)`` coefficients.

Samplers take an explicit ``numpy.random.Generator``; nothing here touches
global random state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .densities import (
    DEFAULT_RULE,
    INF,
    NormalizationError,
    QuadratureRule,
    SupportedDensity,
    kl_divergence,
    kl_values,
    piecewise_constant,
)
from .summability import CoverReport, Verdict

__all__ = [
    "WeightLaw",
    "DiscretePrior",
    "PolyaTreeParams",
    "RandomHistogramPrior",
    "ExpFamilySpec",
    "MassEstimate",
    "cosine_basis",
    "expfam_density",
    "polya_density",
    "histogram_density",
    "sample_density",
    "sqrt_mass_sum",
    "kl_neighborhood_mass",
    "discrete_kl_mass",
]


# -- discrete priors -------------------------------------------------------------


@dataclass(frozen=True)
class WeightLaw:
    """Analytic description of an infinite weight sequence ``Pi_1, Pi_2, ...``.

    ``geometric``: ``Pi_k = (1 - r) r^(k-1)`` with ``param = r``.
    ``polynomial``: ``Pi_k = k^(-p) / zeta(p)`` with ``param = p > 1``.
    ``custom``: ``fn(k)`` gives unnormalised weights and no tail is known.
    """

    kind: str
    param: float = 0.0
    fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "geometric" and not 0 < self.param < 1:
            raise ValueError("geometric ratio must lie in (0, 1)")
        if self.kind == "polynomial" and not self.param > 1:
            raise ValueError("polynomial exponent must exceed 1 for a proper prior")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom law needs fn")
        if self.kind not in ("geometric", "polynomial", "custom"):
            raise ValueError(f"unknown weight law {self.kind!r}")

    def weights(self, k) -> np.ndarray:
        """Normalised weights at indices ``k >= 1`` (custom laws are unnormalised)."""
        k = np.asarray(k, dtype=float)
        if self.kind == "geometric":
            r = self.param
            return (1 - r) * r ** (k - 1)
        if self.kind == "polynomial":
            return k ** -self.param / special.zeta(self.param)
        return np.asarray(self.fn(k), dtype=float)


@dataclass(frozen=True, eq=False)
class DiscretePrior:
    """Prior putting mass ``weights[k]`` on ``atoms[k]``.

    ``atoms`` may be ``None`` for a weights-only prior used in summability
    checks.  ``law`` records the infinite sequence the finite weights
    truncate, when there is one.
    """

    atoms: tuple[SupportedDensity, ...] | None
    weights: np.ndarray
    law: WeightLaw | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be a nonempty vector of nonnegative reals")
        if self.atoms is not None and len(self.atoms) != w.size:
            raise ValueError("need one weight per atom")
        keep = w > 0
        atoms = None if self.atoms is None else tuple(a for a, k in zip(self.atoms, keep) if k)
        w = w[keep]
        w = w / w.sum()
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def finite(cls, atoms: Sequence[SupportedDensity], weights: Sequence[float] | None = None) -> "DiscretePrior":
        atoms = tuple(atoms)
        w = np.full(len(atoms), 1.0 / len(atoms)) if weights is None else np.asarray(weights, dtype=float)
        return cls(atoms, w)

    @classmethod
    def from_law(cls, law: WeightLaw, n: int, atom_fn: Callable[[int], SupportedDensity] | None = None) -> "DiscretePrior":
        """First ``n`` atoms of an infinite prior, renormalised; the law is kept for tail analysis."""
        k = np.arange(1, n + 1)
        atoms = None if atom_fn is None else tuple(atom_fn(int(i)) for i in k)
        return cls(atoms, law.weights(k), law)

    def __len__(self) -> int:
        return self.weights.size

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def sqrt_mass_sum(prior: DiscretePrior, terms: int = 1000) -> CoverReport:
    """Evaluate ``sum_k sqrt(Pi_k)`` with an analytic tail.

    Finite priors (no law) are summed exactly.  Geometric and polynomial laws
    get a closed-form tail bound or a harmonic minorant; anything else is
    Inconclusive.
    """
    law = prior.law
    if law is None:
        total = float(np.sqrt(prior.weights).sum())
        return CoverReport("sqrt-mass discrete prior", Verdict.SUMMABLE, total, 0.0, len(prior),
                           certificate="finite prior: exact sum")
    k = np.arange(1, terms + 1, dtype=float)
    if law.kind == "custom":
        part = float(np.sqrt(law.weights(k)).sum())
        return CoverReport("sqrt-mass discrete prior", Verdict.INCONCLUSIVE, part, None, terms,
                           certificate="no analytic tail family for a custom law")
    part = float(np.sqrt(law.weights(k)).sum())
    if law.kind == "geometric":
        r = law.param
        tail = math.sqrt(1 - r) * r ** (terms / 2) / (1 - math.sqrt(r))
        return CoverReport("sqrt-mass discrete prior", Verdict.SUMMABLE, part, tail, terms,
                           certificate=f"geometric tail, ratio sqrt({r:g})",
                           details={"law": "geometric", "ratio": r})
    p = law.param
    s = p / 2
    norm = math.sqrt(special.zeta(p))
    if s > 1:
        tail = terms ** (1 - s) / ((s - 1) * norm)
        return CoverReport("sqrt-mass discrete prior", Verdict.SUMMABLE, part, tail, terms,
                           certificate=f"integral bound on sum k^-{s:g} beyond k={terms}",
                           details={"law": "polynomial", "exponent": p})
    return CoverReport("sqrt-mass discrete prior", Verdict.DIVERGENT, part, None, terms,
                       witness=f"sqrt(Pi_k) = k^-{s:g}/sqrt(zeta({p:g})) >= k^-1/{norm:.6g}: harmonic minorant",
                       details={"law": "polynomial", "exponent": p})


# -- Polya trees -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolyaTreeParams:
    """Dyadic Polya tree to depth ``depth``.

    ``level_params[k - 1]`` is ``a_k``.  ``branch_counts[k - 1]`` holds the
    ``2**k`` observation counts of the level-``k`` intervals, left to right.
    """

    depth: int
    level_params: np.ndarray
    branch_counts: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        a = np.asarray(self.level_params, dtype=float)
        if a.shape != (self.depth,) or not (a > 0).all():
            raise ValueError("need one positive a_k per level")
        object.__setattr__(self, "level_params", a)
        if not self.branch_counts:
            counts = tuple(np.zeros(2 ** k, dtype=np.int64) for k in range(1, self.depth + 1))
            object.__setattr__(self, "branch_counts", counts)
        for k, c in enumerate(self.branch_counts, start=1):
            if c.shape != (2 ** k,):
                raise ValueError(f"level {k} needs {2 ** k} counts")
            if k > 1 and not np.array_equal(c.reshape(-1, 2).sum(1), self.branch_counts[k - 2]):
                raise ValueError(f"counts at level {k} do not add up to level {k - 1}")

    @classmethod
    def schedule(cls, depth: int, a: Callable[[int], float] | Sequence[float]) -> "PolyaTreeParams":
        if callable(a):
            a = [a(k) for k in range(1, depth + 1)]
        return cls(depth, np.asarray(a, dtype=float))

    @property
    def n(self) -> int:
        return int(self.branch_counts[0].sum())

    @property
    def leaf_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 2 ** self.depth + 1)


def polya_density(splits: Sequence[np.ndarray]) -> SupportedDensity:
    """Density ``2^K prod_k theta`` from left-branch probabilities per level.

    ``splits[k - 1]`` has ``2**(k - 1)`` entries: the probability of the left
    child for each level-``(k - 1)`` interval.
    """
    probs = np.ones(1)
    for k, th in enumerate(splits, start=1):
        th = np.asarray(th, dtype=float)
        if th.shape != (2 ** (k - 1),):
            raise ValueError(f"level {k} needs {2 ** (k - 1)} split probabilities")
        probs = np.column_stack((probs * th, probs * (1 - th))).ravel()
    K = len(splits)
    return piecewise_constant(np.linspace(0.0, 1.0, 2 ** K + 1), probs * 2 ** K, name=f"polya-tree(K={K})")


def _polya_splits(params: PolyaTreeParams, rng: np.random.Generator) -> list[np.ndarray]:
    splits = []
    for k in range(1, params.depth + 1):
        a = params.level_params[k - 1]
        c = params.branch_counts[k - 1].reshape(-1, 2)
        splits.append(rng.beta(a + c[:, 0], a + c[:, 1]))
    return splits


# -- random histograms -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RandomHistogramPrior:
    """Law ``pi(m)`` on the number of equal bins, ``m = 1..m_max``.

    Mass beyond ``m_max`` is folded into the last atom.  ``kind`` and
    ``param`` remember the untruncated law so that the first-moment condition
    ``sum_m m pi(m) < inf`` can be decided analytically.
    """

    bin_probs: np.ndarray
    kind: str = "explicit"
    param: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.bin_probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or (p < 0).any() or abs(p.sum() - 1) > 1e-12:
            raise ValueError("bin law must be a probability vector over m = 1..m_max")
        object.__setattr__(self, "bin_probs", p)

    @classmethod
    def geometric(cls, rho: float, m_max: int = 64) -> "RandomHistogramPrior":
        m = np.arange(1, m_max + 1)
        p = (1 - rho) * rho ** (m - 1.0)
        p[-1] += 1 - p.sum()
        return cls(p, "geometric", rho)

    @classmethod
    def polynomial(cls, exponent: float, m_max: int = 64) -> "RandomHistogramPrior":
        m = np.arange(1, m_max + 1)
        p = m ** -float(exponent) / special.zeta(exponent)
        p[-1] += 1 - p.sum()
        return cls(p, "polynomial", exponent)

    @classmethod
    def point(cls, m: int) -> "RandomHistogramPrior":
        p = np.zeros(m)
        p[-1] = 1.0
        return cls(p, "point", m)

    @property
    def m_max(self) -> int:
        return self.bin_probs.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.bin_probs > 0) + 1

    def first_moment(self) -> float:
        """``sum_m m pi(m)`` of the truncated law."""
        return float(np.dot(np.arange(1, self.m_max + 1), self.bin_probs))

    def first_moment_finite(self) -> bool:
        """Whether the untruncated law has ``sum_m m pi(m) < inf``."""
        if self.kind == "polynomial":
            return self.param > 2
        return True


def histogram_density(p: Sequence[float]) -> SupportedDensity:
    """Step density with ``m = len(p)`` equal bins and heights ``m p_k``."""
    p = np.asarray(p, dtype=float)
    m = p.size
    return piecewise_constant(np.linspace(0.0, 1.0, m + 1), m * p, name=f"histogram(m={m})")


# -- infinite-dimensional exponential family ---------------------------------


@dataclass(frozen=True, eq=False)
class ExpFamilySpec:
    """Cosine-basis exponential family truncated at ``truncation`` = ``J``.

    ``coord_sds[j]`` is ``sigma_j`` for ``j = 0..J``; the sds must be
    nonincreasing from index ``decreasing_from`` on.
    """

    truncation: int
    coord_sds: np.ndarray
    decreasing_from: int = 1

    def __post_init__(self):
        s = np.asarray(self.coord_sds, dtype=float)
        if self.truncation < 0 or s.shape != (self.truncation + 1,) or not (s > 0).all():
            raise ValueError("need J >= 0 and positive sigma_j for j = 0..J")
        if (np.diff(s[self.decreasing_from:]) > 0).any():
            raise ValueError(f"sigma_j must be nonincreasing from j={self.decreasing_from}")
        object.__setattr__(self, "coord_sds", s)

    @classmethod
    def power_law(cls, J: int = 12, scale: float = 1.0, exponent: float = 1.5) -> "ExpFamilySpec":
        j = np.arange(J + 1, dtype=float)
        s = scale * np.maximum(j, 1.0) ** -exponent
        return cls(J, s)


def cosine_basis(x, J: int) -> np.ndarray:
    """Rows ``phi_0 = 1`` and ``phi_j = sqrt(2) cos(j pi x)`` for ``j <= J``."""
    x = np.asarray(x, dtype=float)
    j = np.arange(J + 1)[:, None]
    out = math.sqrt(2.0) * np.cos(j * math.pi * x[None, :])
    out[0] = 1.0
    return out


def expfam_density(theta: Sequence[float], rule: QuadratureRule = DEFAULT_RULE) -> tuple[SupportedDensity, float]:
    """Return the density for coefficients ``theta`` and its log-normaliser ``c``."""
    theta = np.asarray(theta, dtype=float)
    J = theta.size - 1
    grid = rule.grid(0.0, 1.0)
    expo = theta @ cosine_basis(grid.nodes, J)
    shift = expo.max()
    c = shift + math.log(grid.integrate_values(np.exp(expo - shift)))

    def ev(x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        vals = np.exp(theta @ cosine_basis(flat, J) - c)
        return np.where((flat >= 0) & (flat <= 1), vals, 0.0).reshape(x.shape)

    mass = float(grid.integrate_values(ev(grid.nodes)))
    if abs(mass - 1.0) > 1e-6:
        raise NormalizationError(f"exponential-family density integrates to {mass!r}")
    ub = math.exp(float(np.abs(theta[1:]).sum()) * math.sqrt(2.0) + theta[0] - c)
    return SupportedDensity(ev, name="expfam", upper_bound=ub), float(c)


# -- sampling ------------------------------------------------------------------


def sample_density(prior, rng: np.random.Generator, rule: QuadratureRule = DEFAULT_RULE) -> SupportedDensity:
    """Draw one density from any of the prior families."""
    if isinstance(prior, DiscretePrior):
        if prior.atoms is None:
            raise ValueError("weights-only prior has no atoms to sample")
        return prior.atoms[int(rng.choice(len(prior), p=prior.weights))]
    if isinstance(prior, PolyaTreeParams):
        return polya_density(_polya_splits(prior, rng))
    if isinstance(prior, RandomHistogramPrior):
        m = int(rng.choice(prior.m_max, p=prior.bin_probs)) + 1
        return histogram_density(rng.dirichlet(np.ones(m)))
    if isinstance(prior, ExpFamilySpec):
        theta = rng.normal(0.0, prior.coord_sds)
        return expfam_density(theta, rule)[0]
    raise TypeError(f"unsupported prior {type(prior).__name__}")


@dataclass(frozen=True)
class MassEstimate:
    estimate: float
    stderr: float
    samples: int
    hits: int


def kl_neighborhood_mass(prior, f0: SupportedDensity, eps: float, samples: int,
                         rng: np.random.Generator, rule: QuadratureRule = DEFAULT_RULE) -> MassEstimate:
    """Monte-Carlo estimate of ``Pi({f : D(f, f0) < eps})`` with a binomial standard error."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if eps == INF:
        return MassEstimate(1.0, 0.0, samples, samples)
    if isinstance(prior, DiscretePrior):
        idx = rng.choice(len(prior), size=samples, p=prior.weights)
        d = np.array([kl_divergence(f0, f, rule) for f in prior.atoms])
        hits = int((d[idx] < eps).sum())
    elif isinstance(prior, PolyaTreeParams):
        # all draws share the leaf edges, so one grid serves every divergence
        grid = rule.grid(0.0, 1.0, prior.leaf_edges[1:-1])
        f0v = f0(grid.nodes)
        leaf = np.clip((grid.nodes * 2 ** prior.depth).astype(int), 0, 2 ** prior.depth - 1)
        hits = 0
        for _ in range(samples):
            probs = np.ones(1)
            for th in _polya_splits(prior, rng):
                probs = np.column_stack((probs * th, probs * (1 - th))).ravel()
            fv = probs[leaf] * 2 ** prior.depth
            hits += int(kl_values(grid, f0v, fv) < eps)
    else:
        hits = sum(int(kl_divergence(f0, sample_density(prior, rng, rule), rule) < eps) for _ in range(samples))
    p = hits / samples
    return MassEstimate(p, math.sqrt(p * (1 - p) / samples), samples, hits)


def discrete_kl_mass(prior: DiscretePrior, f0: SupportedDensity, eps: float,
                     rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Exact ``Pi({f : D(f, f0) < eps})`` for a discrete prior, by enumeration."""
    d = np.array([kl_divergence(f0, f, rule) for f in prior.atoms])
    return float(prior.weights[d < eps].sum())
