"""Densities on an interval, composite Gauss-Legendre quadrature and the
divergence functionals used everywhere else in the package.

All divergences are evaluated on a :class:`QuadratureGrid`: a composite
Gauss-Legendre rule whose panels are graded geometrically towards both
support endpoints.  The grading serves two purposes.  Endpoint-singular but
integrable integrands (``sqrt(x)``, ``log x``) are integrated to near machine
precision, and non-integrable ones (``1/x``) are recognised because the
contribution of successive graded panels stops shrinking.  Such integrals are
reported as ``math.inf`` instead of being extrapolated.

Argument order follows the integrand: ``kl_divergence(f0, f)`` is
``int f0 log(f0 / f)`` and ``chi_squared(f0, f)`` is ``int f0**2 / f - 1``,
with the reference (true) density first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "INF",
    "CLAMP",
    "QuadratureError",
    "NormalizationError",
    "QuadratureRule",
    "QuadratureGrid",
    "SupportedDensity",
    "integrate",
    "hellinger_h",
    "hellinger_H",
    "kl_divergence",
    "chi_squared",
    "h_values",
    "kl_values",
    "chi2_values",
    "uniform",
    "power",
    "reflected_power",
    "beta_poly",
    "piecewise_constant",
    "step",
    "mixture",
    "half_supported",
    "DEFAULT_RULE",
]

INF = math.inf
# divergences above this are reported as infinite
CLAMP = 1e12


class QuadratureError(ArithmeticError):
    """Raised when an integrand is not finite at a quadrature node."""


class NormalizationError(ValueError):
    """Raised when a density fails to integrate to one."""


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre panel rule.

    ``panels`` uniform panels of ``order`` nodes each, plus ``grading``
    geometric refinements of the first and last panel.
    """

    scheme: str = "gauss-legendre"
    panels: int = 512
    abs_tol: float = 1e-10
    order: int = 8
    grading: int = 40

    def __post_init__(self):
        if self.scheme != "gauss-legendre":
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.panels < 2:
            raise ValueError("panels must be >= 2")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be > 0")
        if self.order < 1 or self.grading < 3:
            raise ValueError("order must be >= 1 and grading >= 3")

    def grid(self, a: float = 0.0, b: float = 1.0, breaks: Sequence[float] = ()) -> "QuadratureGrid":
        return _build_grid(self, float(a), float(b), tuple(sorted(set(float(t) for t in breaks))))

    def doubled(self) -> "QuadratureRule":
        return QuadratureRule(self.scheme, 2 * self.panels, self.abs_tol, self.order, self.grading)


DEFAULT_RULE = QuadratureRule()


@lru_cache(maxsize=16)
def _gauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Nodes and weights of a graded composite rule on ``[a, b]``.

    ``left_chain`` and ``right_chain`` hold panel indices ordered from the
    outermost to the innermost graded panel at each endpoint.
    """

    a: float
    b: float
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    left_chain: np.ndarray
    right_chain: np.ndarray
    abs_tol: float

    @property
    def n_panels(self) -> int:
        return self.nodes.size // self.order

    def panel_sums(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float) * self.weights
        return v.reshape(v.shape[:-1] + (self.n_panels, self.order)).sum(axis=-1)

    def integrate_values(self, values: np.ndarray) -> np.ndarray | float:
        """Integrate node values; the last axis runs over nodes.

        Returns ``+-inf`` for rows whose endpoint contributions fail to decay.
        Non-finite node values raise :class:`QuadratureError`.
        """
        values = np.asarray(values, dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            idx = np.argwhere(bad)[0]
            raise QuadratureError(f"non-finite integrand value {values[tuple(idx)]!r} at node x={self.nodes[idx[-1]]!r}")
        ps = self.panel_sums(values)
        total = ps.sum(axis=-1)
        blown = np.zeros(total.shape, dtype=bool)
        sign = np.zeros(total.shape)
        for chain in (self.left_chain, self.right_chain):
            # compare the last two halving panels; the innermost one reaches the endpoint
            inner = ps[..., chain[-2]]
            prev = ps[..., chain[-3]]
            hit = (np.abs(inner) > self.abs_tol) & (np.abs(inner) >= 0.99 * np.abs(prev)) & (inner * prev > 0)
            blown |= hit
            sign = np.where(hit, np.sign(inner), sign)
        out = np.where(blown, np.where(sign < 0, -INF, INF), total)
        return float(out) if out.ndim == 0 else out


def _grading_depth(g: int, width: float, endpoint: float) -> int:
    """Halvings toward an endpoint, capped so nodes stay distinguishable from it.

    Near a nonzero endpoint ``t`` the innermost panel keeps a width of at
    least ``2^-40 |t|``; otherwise ``t - x`` would round to zero at the nodes.
    """
    if endpoint == 0:
        return g
    cap = int(math.floor(math.log2(width / (2.0 ** -40 * abs(endpoint)))))
    return max(2, min(g, cap))


def _build_grid(rule: QuadratureRule, a: float, b: float, breaks: tuple) -> QuadratureGrid:
    if not (math.isfinite(a) and math.isfinite(b)) or not b > a:
        raise ValueError(f"quadrature needs a finite interval, got [{a}, {b}]")
    edges = np.linspace(a, b, rule.panels + 1)
    inner = [t for t in breaks if a < t < b]
    if inner:
        edges = np.union1d(edges, inner)
    w0 = edges[1] - edges[0]
    w1 = edges[-1] - edges[-2]
    gl = _grading_depth(rule.grading, w0, a)
    gr = _grading_depth(rule.grading, w1, b)
    left = a + w0 * 2.0 ** -np.arange(gl, -1, -1)  # a + w0 2^-gl, ..., a + w0
    right = b - w1 * 2.0 ** -np.arange(1, gr + 1)  # b - w1/2, ..., b - w1 2^-gr
    bounds = np.concatenate(([a], left, edges[2:-1], right, [b]))
    lo, hi = bounds[:-1], bounds[1:]
    x, w = _gauss(rule.order)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    n_pan = lo.size
    left_chain = np.arange(gl, -1, -1)  # outermost [a+w0/2, a+w0] first ... innermost [a, a+w0 2^-gl]
    right_chain = np.arange(n_pan - gr - 1, n_pan)
    return QuadratureGrid(a, b, nodes, weights, rule.order, left_chain, right_chain, rule.abs_tol)


@dataclass(frozen=True, eq=False)
class SupportedDensity:
    """A probability density on an interval.

    ``evaluator`` must accept and return numpy arrays.  ``breaks`` lists
    points of discontinuity so quadrature panels can align with them;
    ``upper_bound`` is ``sup f`` when known and ``ppf`` an inverse CDF when one
    is available in closed form.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float] = (0.0, 1.0)
    positivity_floor: float = 0.0
    name: str = "density"
    breaks: tuple[float, ...] = ()
    upper_bound: float | None = None
    ppf: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)

    def grid(self, rule: QuadratureRule = DEFAULT_RULE, *others: "SupportedDensity") -> QuadratureGrid:
        breaks = set(self.breaks)
        for o in others:
            if tuple(o.support) != tuple(self.support):
                raise ValueError(f"support mismatch: {self.support} vs {o.support}")
            breaks.update(o.breaks)
        return rule.grid(self.support[0], self.support[1], sorted(breaks))

    def total_mass(self, rule: QuadratureRule = DEFAULT_RULE) -> float:
        g = self.grid(rule)
        return float(g.integrate_values(self(g.nodes)))

    def check_normalized(self, rule: QuadratureRule = DEFAULT_RULE, tol: float = 1e-6) -> float:
        g = self.grid(rule)
        vals = self(g.nodes)
        if (vals < 0).any():
            raise NormalizationError(f"{self.name}: negative density value")
        mass = float(g.integrate_values(vals))
        if not abs(mass - 1.0) <= tol:
            raise NormalizationError(f"{self.name}: integrates to {mass!r}, not 1")
        return mass

    def inverse_cdf(self, u) -> np.ndarray:
        """Quantile function: closed form if available, else a 10^4-knot table."""
        u = np.asarray(u, dtype=float)
        if self.ppf is not None:
            return np.asarray(self.ppf(u), dtype=float)
        xs, cdf = _tabulate_cdf(self)
        return np.interp(u, cdf, xs)

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws; points where the density vanishes are redrawn."""
        x = self.inverse_cdf(rng.random(size))
        for _ in range(100):
            bad = ~(self(x) > 0)
            if not bad.any():
                return x
            x[bad] = self.inverse_cdf(rng.random(int(bad.sum())))
        raise NormalizationError(f"{self.name}: could not draw points of positive density")

    def with_floor(self, floor: float) -> "SupportedDensity":
        return SupportedDensity(self.evaluator, self.support, floor, self.name, self.breaks, self.upper_bound, self.ppf)


def _tabulate_cdf(f: SupportedDensity, knots: int = 10_000):
    a, b = f.support
    xs = np.linspace(a, b, knots + 1)
    x, w = _gauss(8)
    lo, hi = xs[:-1], xs[1:]
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]
    cell = (f(nodes.ravel()).reshape(nodes.shape) * w[None, :]).sum(1) * half
    cdf = np.concatenate(([0.0], np.cumsum(cell)))
    cdf /= cdf[-1]
    # strictly increasing for interpolation of the inverse
    cdf = np.maximum.accumulate(cdf + np.arange(cdf.size) * 1e-15)
    return xs, cdf


def integrate(f: Callable[[np.ndarray], np.ndarray], support: tuple[float, float] = (0.0, 1.0),
              rule: QuadratureRule = DEFAULT_RULE, breaks: Sequence[float] = ()) -> float:
    """Integrate ``f`` over a finite interval with a graded composite rule.

    Returns ``inf`` (with sign) when an endpoint singularity is not
    integrable.  Raises :class:`QuadratureError` naming the offending node if
    ``f`` is not finite at a node.
    """
    g = rule.grid(support[0], support[1], breaks)
    return float(g.integrate_values(np.asarray(f(g.nodes), dtype=float)))


# -- divergences on node values ------------------------------------------------
# fv, gv have nodes on the last axis; leading axes broadcast.


def _clamp(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x > CLAMP, INF, x)
    return float(out) if out.ndim == 0 else out


def h_values(grid: QuadratureGrid, fv, gv):
    """``1 - int sqrt(f g)``, clipped to ``[0, 1]``.

    Values within a few ulps of zero are rounding in the quadrature weight
    sum and are reported as exactly zero, so that ``H(f, f) = 0``.
    """
    aff = grid.integrate_values(np.sqrt(np.maximum(fv, 0.0) * np.maximum(gv, 0.0)))
    out = np.clip(1.0 - np.asarray(aff), 0.0, 1.0)
    out = np.where(out <= 4 * np.finfo(float).eps, 0.0, out)
    return float(out) if out.ndim == 0 else out


def kl_values(grid: QuadratureGrid, f0v, fv, floor: float = 0.0):
    """``int f0 log(f0 / f)``; ``inf`` when ``f`` vanishes where ``f0 > 0``."""
    f0v, fv = np.broadcast_arrays(np.asarray(f0v, float), np.asarray(fv, float))
    fv = np.maximum(fv, floor)
    pos = f0v > 0
    dead = (pos & (fv <= 0)).any(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(pos & (fv > 0), f0v * np.log(f0v / fv), 0.0)
    val = grid.integrate_values(integrand)
    out = np.where(dead, INF, np.maximum(val, 0.0))
    return _clamp(out)


def chi2_values(grid: QuadratureGrid, f0v, fv, floor: float = 0.0):
    """``int f0**2 / f - 1``; ``inf`` when ``f`` vanishes where ``f0 > 0``."""
    f0v, fv = np.broadcast_arrays(np.asarray(f0v, float), np.asarray(fv, float))
    fv = np.maximum(fv, floor)
    pos = f0v > 0
    dead = (pos & (fv <= 0)).any(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(pos & (fv > 0), f0v * f0v / fv, 0.0)
    val = grid.integrate_values(integrand)
    out = np.where(dead, INF, np.maximum(np.asarray(val) - 1.0, 0.0))
    return _clamp(out)


# -- divergences on densities --------------------------------------------------


def hellinger_h(f: SupportedDensity, g: SupportedDensity, rule: QuadratureRule = DEFAULT_RULE) -> float:
    """``h(f, g) = 1 - int sqrt(f g)``; lies in ``[0, 1]``."""
    grid = f.grid(rule, g)
    return h_values(grid, f(grid.nodes), g(grid.nodes))


def hellinger_H(f: SupportedDensity, g: SupportedDensity, rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Hellinger distance ``{int (sqrt f - sqrt g)^2}^(1/2) = sqrt(2 h)``."""
    return math.sqrt(2.0 * hellinger_h(f, g, rule))


def kl_divergence(f0: SupportedDensity, f: SupportedDensity, rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Kullback-Leibler divergence ``int f0 log(f0 / f)`` of ``f`` from ``f0``.

    Returns ``math.inf`` under absolute-continuity failure or when the value
    exceeds :data:`CLAMP`.
    """
    grid = f0.grid(rule, f)
    return kl_values(grid, f0(grid.nodes), f(grid.nodes), f.positivity_floor)


def chi_squared(f0: SupportedDensity, f: SupportedDensity, rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Chi-squared distance ``int f0**2 / f - 1``; ``math.inf`` if not integrable."""
    grid = f0.grid(rule, f)
    return chi2_values(grid, f0(grid.nodes), f(grid.nodes), f.positivity_floor)


# -- analytic menu -------------------------------------------------------------


def _inside(x, a=0.0, b=1.0):
    return (x >= a) & (x <= b)


def uniform() -> SupportedDensity:
    return SupportedDensity(lambda x: np.where(_inside(x), 1.0, 0.0), name="uniform",
                            upper_bound=1.0, ppf=lambda u: u)


def power(k: float) -> SupportedDensity:
    """``(k + 1) x**k`` on ``[0, 1]``; ``power(1)`` is ``2x``."""
    if k < 0:
        raise ValueError("power density needs k >= 0")
    c = k + 1.0
    name = "uniform" if k == 0 else ("2x" if k == 1 else f"{c:g}x^{k:g}")
    return SupportedDensity(lambda x: np.where(_inside(x), c * np.abs(x) ** k, 0.0), name=name,
                            upper_bound=c, ppf=lambda u: u ** (1.0 / c))


def reflected_power(k: float) -> SupportedDensity:
    """``(k + 1)(1 - x)**k`` on ``[0, 1]``."""
    c = k + 1.0
    return SupportedDensity(lambda x: np.where(_inside(x), c * np.abs(1.0 - x) ** k, 0.0),
                            name=f"{c:g}(1-x)^{k:g}", upper_bound=c, ppf=lambda u: 1.0 - (1.0 - u) ** (1.0 / c))


def beta_poly(a: float, b: float) -> SupportedDensity:
    """Beta(a, b) density with ``a, b >= 1`` (bounded)."""
    if a < 1 or b < 1:
        raise ValueError("beta_poly needs a, b >= 1 so the density is bounded")
    dist = stats.beta(a, b)
    if a == 1 and b == 1:
        sup = 1.0
    else:
        mode = (a - 1) / (a + b - 2)
        sup = float(dist.pdf(mode))
    return SupportedDensity(lambda x: np.where(_inside(x), dist.pdf(np.clip(x, 0, 1)), 0.0),
                            name=f"beta({a:g},{b:g})", upper_bound=sup, ppf=dist.ppf)


def piecewise_constant(edges: Sequence[float], heights: Sequence[float], name: str | None = None) -> SupportedDensity:
    """Step density with the given bin ``edges`` (covering the support) and ``heights``."""
    edges = np.asarray(edges, dtype=float)
    heights = np.asarray(heights, dtype=float)
    if edges.ndim != 1 or heights.shape != (edges.size - 1,):
        raise ValueError("need len(edges) == len(heights) + 1")
    if (np.diff(edges) <= 0).any() or (heights < 0).any():
        raise ValueError("edges must increase and heights be nonnegative")
    mass = float(np.sum(heights * np.diff(edges)))
    if abs(mass - 1.0) > 1e-9:
        raise NormalizationError(f"step density has mass {mass!r}")
    a, b = float(edges[0]), float(edges[-1])
    cum = np.concatenate(([0.0], np.cumsum(heights * np.diff(edges))))

    def ev(x):
        i = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, heights.size - 1)
        return np.where(_inside(x, a, b), heights[i], 0.0)

    def ppf(u):
        u = np.asarray(u, dtype=float) * cum[-1]
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, heights.size - 1)
        # skip zero-height bins
        h = heights[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = edges[i] + np.where(h > 0, (u - cum[i]) / h, 0.0)
        return np.clip(x, a, b)

    return SupportedDensity(ev, (a, b), name=name or "step", breaks=tuple(edges[1:-1]),
                            upper_bound=float(heights.max()), ppf=ppf)


def step(heights: Sequence[float], name: str | None = None) -> SupportedDensity:
    """Equal-width step density on ``[0, 1]``; heights are renormalised."""
    heights = np.asarray(heights, dtype=float)
    m = heights.size
    heights = heights * m / heights.sum()
    return piecewise_constant(np.linspace(0.0, 1.0, m + 1), heights, name)


def half_supported(left: bool = True) -> SupportedDensity:
    """Density 2 on one half of ``[0, 1]`` and 0 on the other."""
    return step([1.0, 0.0] if left else [0.0, 1.0], name="2*1[0,1/2]" if left else "2*1[1/2,1]")


def mixture(components: Sequence[SupportedDensity], weights: Sequence[float], name: str = "mixture") -> SupportedDensity:
    """Pointwise mixture ``sum_k w_k f_k`` of densities on a common support."""
    comps = tuple(components)
    w = np.asarray(weights, dtype=float)
    if len(comps) == 0 or w.shape != (len(comps),):
        raise ValueError("need one weight per component")
    support = comps[0].support
    if any(tuple(c.support) != tuple(support) for c in comps):
        raise ValueError("mixture components must share a support")
    keep = w > 0
    comps = tuple(c for c, k in zip(comps, keep) if k)
    w = w[keep]
    if len(comps) == 1 and abs(w[0] - 1.0) < 1e-15:
        return comps[0]
    breaks = tuple(sorted(set().union(*(c.breaks for c in comps))))
    ubs = [c.upper_bound for c in comps]
    ub = float(np.dot(w, ubs)) if all(u is not None for u in ubs) else None

    def ev(x):
        out = np.zeros(np.shape(x))
        for wk, c in zip(w, comps):
            out = out + wk * c(x)
        return out

    return SupportedDensity(ev, support, 0.0, name, breaks, ub)
