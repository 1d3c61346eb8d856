"""Disjoint covers of density families and sums of square-rooted cell masses.

Three families are handled.

* Gaussian coordinates: ``theta_j ~ N(0, sigma_j^2)`` cut into cells
  ``(n delta_j, (n + 1) delta_j)`` with ``delta_j = delta * gamma_j``.
* Polya trees: each split ``theta ~ Beta(a_k, a_k)`` at level ``k`` is cut
  into a central cell ``(1/2 - b_k, 1/2 + b_k)`` and two geometric ladders of
  cells on either side, so that within a cell both ``theta`` and
  ``1 - theta`` vary by at most a factor ``exp(delta_k)``.
* Mixtures ``sum_N p_N Pi_N`` where component ``N`` needs ``I_N`` cells.

Every summability verdict comes with either a certified upper bound on the
remainder of the series or a diverging minorant; truncation alone never
produces a verdict.  Several of the Polya-tree series are far too large to
hold in a float, so those reports work with natural logarithms
(``CoverReport.log_scale``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special
from scipy.special import logsumexp

from .densities import DEFAULT_RULE, QuadratureRule, hellinger_h
from .priors import PolyaTreeParams, expfam_density, polya_density
from .summability import CoverReport, Verdict

__all__ = [
    "CoverError",
    "TOL",
    "RUN_LENGTH",
    "gaussian_cell_mass",
    "gaussian_sqrt_sum",
    "gaussian_sqrt_bound",
    "xi_inequality",
    "GaussianCoordCover",
    "expfam_cover_sum",
    "beta_cell_mass",
    "gamma_ratio_inequality",
    "PolyaThetaCover",
    "polya_level_sum",
    "polya_level_bound",
    "fit_psi",
    "PSI_ANALYTIC",
    "polya_level_bound_check",
    "polya_cover_sum",
    "MixtureTailCover",
    "mixture_terms",
    "mixture_tail_sum",
    "Cell",
    "cover_to_prior_cells",
    "cell_diameter_check",
]

TOL = 1e-14
RUN_LENGTH = 100  # consecutive terms below TOL before a ratio-test closure is tried

_LOG2 = math.log(2.0)


class CoverError(ValueError):
    """Invalid cover description, or cells that overlap."""


def _finish(label, log_part, log_tail, count, certificate, details, force_log=False) -> CoverReport:
    """Summable report, in linear scale when both pieces fit in a float."""
    if not force_log and log_part < 700 and log_tail < 700:
        return CoverReport(label, Verdict.SUMMABLE, math.exp(log_part), math.exp(log_tail), count,
                           certificate=certificate, details=details)
    return CoverReport(label, Verdict.SUMMABLE, log_part, log_tail, count, certificate=certificate,
                       log_scale=True, details=details)


# -- Gaussian coordinates ------------------------------------------------------


def _log_normal_interval(lo, hi):
    """``log P(lo < Z < hi)`` for standard normal ``Z``, accurate in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    # reflect so the interval sits where the upper tail is computed without cancellation
    flip = lo + hi < 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la, lb = special.log_ndtr(-a), special.log_ndtr(-b)  # log P(Z > a), log P(Z > b)
    with np.errstate(divide="ignore"):
        return la + np.log1p(-np.exp(lb - la))


def gaussian_cell_mass(sigma: float, delta: float, n) -> float | np.ndarray:
    """Mass of ``(n delta, (n + 1) delta)`` under ``N(0, sigma^2)``."""
    if not (sigma > 0 and delta > 0):
        raise ValueError("sigma and delta must be positive")
    n = np.asarray(n, dtype=float)
    out = np.exp(_log_normal_interval(n * delta / sigma, (n + 1) * delta / sigma))
    return float(out) if out.ndim == 0 else out


def gaussian_sqrt_bound(sigma: float, delta: float, m: int) -> float:
    """``1 + 4^m m! (2 pi)^(-1/4) (sigma / delta)^(2m - 1/2)``."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    return 1.0 + 4.0 ** m * math.factorial(m) * (2 * math.pi) ** -0.25 * (sigma / delta) ** (2 * m - 0.5)


def gaussian_sqrt_sum(sigma: float, delta: float, m: int = 1, tol: float = TOL) -> tuple[float, float]:
    """Return ``(sum_{n >= 0} sqrt(mass of cell n), closed-form bound)``.

    The direct sum runs until a term drops below ``tol``; the remainder is
    closed with the Gaussian tail envelope
    ``sqrt(mass_n) <= (2 pi)^(-1/4) (delta/sigma)^(1/2) exp(-delta^2 n^2 / (4 sigma^2))``,
    whose consecutive ratios decrease.  The direct value is asserted to sit
    below the bound.
    """
    bound = gaussian_sqrt_bound(sigma, delta, m)
    t = delta / sigma
    # first n whose envelope is below tol, with margin
    n_stop = int(math.ceil(2 * math.sqrt(max(math.log(1 / tol), 1.0)) / t)) + 2
    n = np.arange(n_stop + 1, dtype=float)
    terms = np.exp(0.5 * _log_normal_interval(n * t, (n + 1) * t))
    below = np.flatnonzero(terms < tol)
    last = int(below[0]) if below.size else n_stop
    direct = float(terms[: last + 1].sum())
    N = last + 1  # first index not summed
    env = (2 * math.pi) ** -0.25 * math.sqrt(t) * math.exp(-t * t * N * N / 4)
    rho = math.exp(-t * t * (2 * N + 1) / 4)
    direct += env / (1 - rho)
    if direct > bound * (1 + 1e-12):
        raise ArithmeticError(f"direct sum {direct} exceeds the closed-form bound {bound}")
    return direct, bound


def xi_inequality(xi: float, m: int) -> tuple[float, float]:
    """``(xi^(1/4) / (e^(xi/4) - 1), 4^m m! xi^(1/4 - m))``."""
    lhs = xi ** 0.25 / math.expm1(xi / 4)
    rhs = 4.0 ** m * math.factorial(m) * xi ** (0.25 - m)
    return lhs, rhs


@dataclass(frozen=True)
class GaussianCoordCover:
    """Coordinate-wise cover ``delta_j = delta * gamma_j`` for independent normals.

    ``sds`` and ``gammas`` hold the first ``J`` coordinates.  When both
    follow power laws (``sd_law = (scale, exponent)`` meaning
    ``sigma_j = scale * j^-exponent``, and ``gamma_exponent`` with
    ``gamma_j = j^-exponent / zeta(exponent)``) the remainder beyond ``J``
    has a closed-form tail.  ``m`` is the order of the per-coordinate bound;
    ``None`` lets :func:`expfam_cover_sum` choose it.
    """

    delta: float
    sds: np.ndarray
    gammas: np.ndarray
    m: int | None = None
    sd_law: tuple[float, float] | None = None
    gamma_exponent: float | None = None

    def __post_init__(self):
        sds = np.asarray(self.sds, dtype=float)
        gam = np.asarray(self.gammas, dtype=float)
        object.__setattr__(self, "sds", sds)
        object.__setattr__(self, "gammas", gam)
        if not self.delta > 0:
            raise CoverError("delta must be positive")
        if sds.shape != gam.shape or sds.ndim != 1 or sds.size == 0:
            raise CoverError("sds and gammas must be nonempty vectors of equal length")
        if not ((sds > 0).all() and (gam > 0).all()):
            raise CoverError("sds and gammas must be positive")
        if self.m is not None and self.m < 1:
            raise CoverError("m must be a positive integer")

    @classmethod
    def power_law(cls, sd_exponent: float, gamma_exponent: float = 1.25, *, delta: float = 1.0,
                  sd_scale: float = 1.0, m: int | None = None, J: int = 1000) -> "GaussianCoordCover":
        if not gamma_exponent > 1:
            raise CoverError("gamma_j = j^-e needs e > 1 to be summable")
        j = np.arange(1, J + 1, dtype=float)
        gam = j ** -gamma_exponent / special.zeta(gamma_exponent)
        return cls(delta, sd_scale * j ** -sd_exponent, gam, m, (sd_scale, sd_exponent), gamma_exponent)

    @property
    def J(self) -> int:
        return self.sds.size

    @property
    def deltas(self) -> np.ndarray:
        return self.delta * self.gammas

    def decay_exponent(self, m: int) -> float | None:
        """Exponent ``e`` with ``(sigma_j / delta_j)^(2m - 1/2) ~ j^-e``, if known."""
        if self.sd_law is None or self.gamma_exponent is None:
            return None
        return (self.sd_law[1] - self.gamma_exponent) * (2 * m - 0.5)

    def choose_m(self) -> int:
        if self.m is not None:
            return self.m
        if self.sd_law is None or self.gamma_exponent is None:
            return 1
        gap = self.sd_law[1] - self.gamma_exponent
        if gap <= 0:
            return 1
        # smallest m with gap * (2m - 1/2) > 1
        return max(1, math.floor((1 / gap + 0.5) / 2) + 1)


def expfam_cover_sum(cover: GaussianCoordCover, tol: float = TOL) -> CoverReport:
    """Log of ``prod_j sum_{n >= 0} sqrt(P(theta_j in A_jn))`` with a power-law tail.

    The per-coordinate factor is the one-sided sum from
    :func:`gaussian_sqrt_sum` (the two-sided sum is reduced to it by the
    symmetry of the normal).  The first ``J`` factors are evaluated
    directly; beyond ``J`` the log of each factor is at most
    ``x_j = 4^m m! (2 pi)^(-1/4) (sigma_j / delta_j)^(2m - 1/2)``, summed by an
    integral bound.  Reported values are logarithms.
    """
    m = cover.choose_m()
    label = f"gaussian coordinates, m={m}"
    direct = np.empty(cover.J)
    bounds = np.empty(cover.J)
    for i, (s, d) in enumerate(zip(cover.sds, cover.deltas)):
        direct[i], bounds[i] = gaussian_sqrt_sum(float(s), float(d), m, tol)
    log_part = float(np.log(direct).sum())
    details = {"m": m, "J": cover.J, "delta": cover.delta, "sd_law": cover.sd_law,
               "gamma_exponent": cover.gamma_exponent, "log_bound_product": float(np.log(bounds).sum())}
    e = cover.decay_exponent(m)
    if e is None:
        return CoverReport(label, Verdict.INCONCLUSIVE, log_part, None, cover.J, log_scale=True,
                           certificate="no tail family for explicit sds/gammas", details=details)
    scale, ps = cover.sd_law
    pg = cover.gamma_exponent
    # x_j = X j^-e with sigma_j / delta_j = scale * zeta(pg) / delta * j^-(ps - pg)
    ratio0 = scale * special.zeta(pg) / cover.delta
    X = 4.0 ** m * math.factorial(m) * (2 * math.pi) ** -0.25 * ratio0 ** (2 * m - 0.5)
    details["decay_exponent"] = e
    if e > 1:
        J = cover.J
        tail = X * J ** (1 - e) / (e - 1)  # sum_{j > J} X j^-e <= int_J^inf X t^-e dt
        return CoverReport(label, Verdict.SUMMABLE, log_part, math.log(tail), cover.J, log_scale=True,
                           certificate=f"log(1 + x_j) <= x_j = {X:.6g} j^-{e:g}; integral tail beyond j={J}",
                           details=details)
    if ps <= pg:
        # sigma_j / delta_j does not vanish, so each factor stays at its limiting value or above
        lim = ratio0 if ps == pg else math.inf
        if lim == math.inf or gaussian_sqrt_sum(lim, 1.0, m, tol)[0] > 1:
            floor_val = direct[-1] if lim == math.inf else gaussian_sqrt_sum(lim, 1.0, m, tol)[0]
            return CoverReport(label, Verdict.DIVERGENT, log_part, None, cover.J, log_scale=True,
                               witness=(f"sigma_j/delta_j does not vanish; every factor is at least "
                                        f"{floor_val:.6g} > 1, so the product diverges"),
                               details=details)
    return CoverReport(label, Verdict.INCONCLUSIVE, log_part, None, cover.J, log_scale=True,
                       certificate=f"sum_j j^-{e:g} diverges, so the bound gives no certificate",
                       details=details)


# -- Polya-tree split cells ------------------------------------------------------


def _log_beta_cdf(a, x):
    return np.log(special.betainc(a, a, x))


def beta_cell_mass(a: float, cell: tuple[float, float]) -> float:
    """``P(lo < theta < hi)`` for ``theta ~ Beta(a, a)``.

    Evaluated on the side of 1/2 where the incomplete Beta values are small,
    so narrow cells far from the centre keep their relative accuracy.
    """
    lo, hi = float(cell[0]), float(cell[1])
    if not (a > 0 and 0 <= lo <= hi <= 1):
        raise ValueError(f"need a > 0 and a cell inside [0, 1], got a={a}, cell={cell}")
    if lo + hi > 1:  # reflect to the lower half
        lo, hi = 1 - hi, 1 - lo
    if hi <= 0.5:
        return float(special.betainc(a, a, hi) - special.betainc(a, a, lo))
    # straddles 1/2: P(lo < theta < hi) = 1 - P(theta < lo) - P(theta > hi)
    return float(1 - special.betainc(a, a, lo) - special.betainc(a, a, 1 - hi))


def gamma_ratio_inequality(a: float) -> tuple[float, float]:
    """``(Gamma(2a) / Gamma(a)^2, 2^(2a - 1) sqrt(a / pi))``."""
    lhs = math.exp(special.gammaln(2 * a) - 2 * special.gammaln(a))
    rhs = 2.0 ** (2 * a - 1) * math.sqrt(a / math.pi)
    return lhs, rhs


def _half_width(delta):
    """``b = (e^delta - 1) / (2 (e^delta + 1))``."""
    return 0.5 * np.tanh(np.asarray(delta, dtype=float) / 2)


def _ladder(a: float, delta: float, floor: float = 1e-300):
    """Lower-side ladder cells ``(c e^-(l delta), c e^-((l-1) delta))`` and their masses."""
    b = float(_half_width(delta))
    c = 0.5 - b
    L = max(1, int(math.ceil((math.log(c) - math.log(floor)) / delta)))
    l = np.arange(1, L + 1, dtype=float)
    hi = c * np.exp(-(l - 1) * delta)
    lo = c * np.exp(-l * delta)
    mass = np.maximum(special.betainc(a, a, hi) - special.betainc(a, a, lo), 0.0)
    return lo, hi, mass, b, c


def polya_level_sum(a: float, delta: float) -> float:
    """Exact ``sum over cells of sqrt(mass)`` for one ``Beta(a, a)`` split."""
    lo, hi, mass, b, c = _ladder(a, delta)
    centre = beta_cell_mass(a, (c, 1 - c))
    return math.sqrt(centre) + 2 * float(np.sqrt(mass).sum())


def _level_shape(a, delta):
    """``log[ratio(delta) a^(1/4) (1 - 4 b^2)^(a/2 - 1/2)]`` with ``ratio = sqrt(e^d - 1)/(e^(d/2) - 1)``."""
    a = np.asarray(a, dtype=float)
    delta = np.asarray(delta, dtype=float)
    b = _half_width(delta)
    log_ratio = 0.5 * np.log(np.expm1(delta)) - np.log(np.expm1(delta / 2))
    return log_ratio + 0.25 * np.log(a) + (a / 2 - 0.5) * np.log1p(-4 * b * b)


def polya_level_bound(a: float, delta: float, psi: float) -> float:
    """``1 + psi * ratio(delta) a^(1/4) (1 - 4 b^2)^(a/2 - 1/2)``."""
    return 1.0 + psi * math.exp(float(_level_shape(a, delta)))


# Gamma-ratio and cell-length bounds give psi <= 2 pi^(-1/4) for a >= 1.
PSI_ANALYTIC = 2 * math.pi ** -0.25

_PSI_GRID_A = (1.0, 1.5, 2.0, 5.0, 10.0, 50.0, 100.0)
_PSI_GRID_DELTA = (0.005, 0.01, 0.05, 0.1, 0.2, 0.5)


def fit_psi(a_grid: Sequence[float] = _PSI_GRID_A, delta_grid: Sequence[float] = _PSI_GRID_DELTA) -> float:
    """Smallest ``psi`` with ``2 sum_l sqrt(mass of ladder cell l) <= psi * shape`` on the grid."""
    best = 0.0
    for a in a_grid:
        for d in delta_grid:
            _, _, mass, _, _ = _ladder(a, d)
            side = 2 * float(np.sqrt(mass).sum())
            best = max(best, side / math.exp(float(_level_shape(a, d))))
    return best


@dataclass(frozen=True)
class PolyaThetaCover:
    """Per-level split cells for a Polya tree with ``a_k`` given by a schedule.

    ``schedule`` is ``("power", A, p)`` for ``a_k = A k^p``,
    ``("geometric", A, B)`` for ``a_k = A B^k``, or ``("explicit", values)``.
    Cell widths follow ``delta_k = D k^-(1 + r)`` with
    ``D = delta_star / zeta(1 + r)``, so that ``sum_k delta_k = delta_star``.
    """

    schedule: tuple
    delta_star: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        kind = self.schedule[0]
        if kind not in ("power", "geometric", "explicit"):
            raise CoverError(f"unknown a_k schedule {kind!r}")
        if kind == "explicit" and not all(v > 0 for v in self.schedule[1]):
            raise CoverError("explicit a_k must be positive")
        if kind != "explicit" and not (self.schedule[1] > 0 and self.schedule[2] > 0):
            raise CoverError("schedule constants must be positive")
        if not (self.delta_star > 0 and self.r > 0):
            raise CoverError("delta_star and r must be positive")

    @classmethod
    def power(cls, p: float, scale: float = 1.0, delta_star: float = 1.0, r: float | None = None) -> "PolyaThetaCover":
        """``a_k = scale * k^p``; ``r`` defaults to ``min(1/2, (p - 3)/4)`` when ``p > 3``, else 1/2."""
        if r is None:
            r = min(0.5, (p - 3) / 4) if p > 3 else 0.5
        return cls(("power", float(scale), float(p)), delta_star, r)

    @classmethod
    def geometric(cls, base: float, scale: float = 1.0, delta_star: float = 1.0, r: float = 0.5) -> "PolyaThetaCover":
        return cls(("geometric", float(scale), float(base)), delta_star, r)

    @classmethod
    def explicit(cls, values: Sequence[float], delta_star: float = 1.0, r: float = 0.5) -> "PolyaThetaCover":
        return cls(("explicit", tuple(float(v) for v in values)), delta_star, r)

    @property
    def D(self) -> float:
        return self.delta_star / float(special.zeta(1 + self.r))

    @property
    def s(self) -> float:
        return 1 + self.r

    @property
    def levels(self) -> int | None:
        return len(self.schedule[1]) if self.schedule[0] == "explicit" else None

    def a(self, k):
        k = np.asarray(k, dtype=float)
        kind = self.schedule[0]
        if kind == "power":
            return self.schedule[1] * k ** self.schedule[2]
        if kind == "geometric":
            return self.schedule[1] * self.schedule[2] ** k
        vals = np.asarray(self.schedule[1])
        return vals[k.astype(int) - 1]

    def log_a(self, k):
        k = np.asarray(k, dtype=float)
        kind = self.schedule[0]
        if kind == "power":
            return math.log(self.schedule[1]) + self.schedule[2] * np.log(k)
        if kind == "geometric":
            return math.log(self.schedule[1]) + k * math.log(self.schedule[2])
        return np.log(self.a(k))

    def delta(self, k):
        return self.D * np.asarray(k, dtype=float) ** -self.s

    def b(self, k):
        return _half_width(self.delta(k))

    def c(self, k):
        return 0.5 - self.b(k)

    def describe(self) -> dict:
        kind = self.schedule[0]
        sched = {"kind": kind}
        if kind == "explicit":
            sched["values"] = list(self.schedule[1])
        else:
            sched.update(scale=self.schedule[1], rate=self.schedule[2])
        return {"a_k": sched, "delta_star": self.delta_star, "r": self.r, "D": self.D}


def _log_summands(cover: PolyaThetaCover, k: np.ndarray, psi: float) -> np.ndarray:
    """``log[2^(k-1) psi ratio(delta_k) a_k^(1/4) (1 - 4 b_k^2)^(a_k/2 - 1/2)]``, overflow-safe."""
    la = cover.log_a(k)
    d = cover.delta(k)
    b = _half_width(d)
    log_ratio = 0.5 * np.log(np.expm1(d)) - np.log(np.expm1(d / 2))
    a_half = 0.5 * np.exp(la) - 0.5
    return (k - 1) * _LOG2 + math.log(psi) + log_ratio + 0.25 * la + a_half * np.log1p(-4 * b * b)


class _Envelope:
    """Concave upper envelope ``u(k) >= log summand_k`` for ``a_k >= 1``.

    Built from ``b >= (delta/4)(1 - D^2/12)``, ``ratio <= 2 e^(D/2) delta^(-1/2)`` and
    ``(1 - 4b^2)^(a/2 - 1/2) <= e^(1/2) exp(-2 a b^2)``.
    """

    def __init__(self, cover: PolyaThetaCover, psi: float):
        self.cover = cover
        A, rate = cover.schedule[1], cover.schedule[2]
        D, s = cover.D, cover.s
        beta = 1 - D * D / 12
        self.kind = cover.schedule[0]
        self.A, self.rate, self.s = A, rate, s
        self.C = A * beta * beta * D * D / 8
        self.const = -_LOG2 + math.log(psi) + _LOG2 + D / 2 - 0.5 * math.log(D) + 0.25 * math.log(A) + 0.5
        if self.kind == "power":
            self.kappa = rate / 4 + s / 2
            self.e = rate - 2 * s
            self.lin = _LOG2
        else:
            self.kappa = s / 2
            self.lin = _LOG2 + math.log(rate) / 4

    def u(self, k):
        k = np.asarray(k, dtype=float)
        if self.kind == "power":
            decay = self.C * k ** self.e
        else:
            decay = self.C * np.exp(k * math.log(self.rate) - 2 * self.s * np.log(k))
        return self.const + self.lin * k + self.kappa * np.log(k) - decay

    def du(self, k: float) -> float:
        if self.kind == "power":
            return self.lin + self.kappa / k - self.C * self.e * k ** (self.e - 1)
        g = math.exp(min(k * math.log(self.rate) - 2 * self.s * math.log(k), 700.0))
        return self.lin + self.kappa / k - self.C * g * (math.log(self.rate) - 2 * self.s / k)

    def concave(self) -> bool:
        return self.kind == "geometric" or self.e >= 1

    def slope_limit(self) -> float:
        if self.kind == "power" and self.e == 1:
            return self.lin - self.C
        return -math.inf

    def first_below(self, target: float, start: int) -> int | None:
        """Smallest integer ``k >= start`` with ``u'(k) <= target``."""
        if self.du(start) <= target:
            return start
        hi = start
        while self.du(hi) > target:
            hi *= 2
            if hi > 10 ** 300:
                return None
        lo = hi // 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.du(mid) <= target:
                hi = mid
            else:
                lo = mid
        return hi

    def argmax(self, lo: int, hi: int) -> float:
        """Maximiser of the concave ``u`` over ``[lo, hi]`` (continuous)."""
        if self.du(lo) <= 0:
            return float(lo)
        if self.du(hi) >= 0:
            return float(hi)
        a, b = float(lo), float(hi)
        for _ in range(200):
            mid = 0.5 * (a + b)
            if self.du(mid) > 0:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)


def _lower_envelope(cover: PolyaThetaCover, psi: float):
    """Minorant ``log L_k`` valid for ``a_k >= 1`` (power schedules only).

    Uses ``b <= delta/4``, ``ratio >= 2 e^(-D/2) delta^(-1/2)`` and
    ``(1 - 4b^2)^(a/2 - 1/2) >= exp(-a delta^2 / (8 (1 - D^2/4)))``.
    """
    A, p = cover.schedule[1], cover.schedule[2]
    D, s = cover.D, cover.s
    Cp = A * D * D / (8 * (1 - D * D / 4))
    const = -_LOG2 + math.log(psi) + _LOG2 - D / 2 - 0.5 * math.log(D) + 0.25 * math.log(A)
    kappa = p / 4 + s / 2
    e = p - 2 * s

    def ell(k):
        k = np.asarray(k, dtype=float)
        return const + _LOG2 * k + kappa * np.log(k) - Cp * k ** e

    return ell, e, Cp


_HEAD_LIMIT = 2_000_000
_HEAD_EXACT = 100_000


def polya_cover_sum(cover: PolyaThetaCover, psi_fit: float | None = None, tol: float = TOL) -> CoverReport:
    """Summability of ``sum_k 2^(k-1) psi ratio(delta_k) a_k^(1/4) (1 - 4 b_k^2)^(a_k/2 - 1/2)``.

    Power and geometric schedules are certified analytically: a concave
    envelope ``u`` of the log summand gives the tail beyond the first ``k``
    with ``u'(k) <= -1`` as ``e^(u(k)) / (1 - e^(-1))``, or a diverging
    minorant is exhibited.  Explicit schedules fall back to the ratio test:
    ``RUN_LENGTH`` consecutive terms below ``tol`` and a ratio below one at the
    end, otherwise Inconclusive.
    """
    psi = fit_psi() if psi_fit is None else float(psi_fit)
    if not psi > 0:
        raise CoverError("psi must be positive")
    kind = cover.schedule[0]
    label = f"polya tree, a_k {kind}"
    details = {**cover.describe(), "psi": psi, "psi_analytic": PSI_ANALYTIC}
    if kind == "explicit":
        return _explicit_polya_sum(cover, psi, tol, label, details)

    # first level from which a_k >= 1 for good (a_k is increasing)
    k_a = 1
    while float(cover.log_a(k_a)) < 0:
        k_a *= 2
    lo = k_a // 2
    while k_a - lo > 1:
        mid = (lo + k_a) // 2
        if float(cover.log_a(mid)) >= 0:
            k_a = mid
        else:
            lo = mid
    env = _Envelope(cover, psi)
    details["first_level_a_ge_1"] = k_a

    if kind == "power" and env.e < 1:
        ell, e, Cp = _lower_envelope(cover, psi)
        # the minorant eventually increases without bound; find where it exceeds 0
        k = max(k_a, 1)
        while float(ell(k)) < 0 or float(ell(2 * k)) < float(ell(k)):
            k *= 2
        part = float(logsumexp(_log_summands(cover, np.arange(1, k + 1, dtype=float), psi)))
        details["decay_exponent"] = e
        return CoverReport(label, Verdict.DIVERGENT, part, None, k, log_scale=True,
                           witness=(f"summand_k >= exp({_LOG2:.6g} k + {env.kappa:.6g} log k - {Cp:.6g} k^{e:g} + const) "
                                    f"with exponent {e:g} < 1; minorant >= 1 from k={k} on"),
                           details=details)

    lim = env.slope_limit()
    if kind == "power" and env.e == 1:
        ell, _, Cp = _lower_envelope(cover, psi)
        if _LOG2 - Cp > 0:
            k = max(k_a, 1)
            while float(ell(k)) < 0:
                k *= 2
            return CoverReport(label, Verdict.DIVERGENT, 0.0, None, 0, log_scale=True,
                               witness=f"minorant grows like exp({_LOG2 - Cp:.6g} k); >= 1 from k={k}",
                               details=details)
        if lim >= 0:
            return CoverReport(label, Verdict.INCONCLUSIVE, 0.0, None, 0, log_scale=True,
                               certificate="decay exponent 1 with envelopes straddling the geometric rate",
                               details=details)
    target = -1.0 if lim == -math.inf or lim < -1 else lim / 2
    k2 = env.first_below(target, max(k_a, 1))
    if k2 is None:
        return CoverReport(label, Verdict.INCONCLUSIVE, 0.0, None, 0, log_scale=True,
                           certificate="envelope slope never reaches the closure target", details=details)
    log_tail = float(env.u(k2)) - math.log(-math.expm1(target))
    details.update(tail_from_level=k2, closure_slope=target)
    if k2 - 1 <= _HEAD_LIMIT:
        ks = np.arange(1, k2, dtype=float)
        log_part = float(logsumexp(_log_summands(cover, ks, psi))) if ks.size else -math.inf
        cert = f"exact summands for k < {k2}; concave envelope tail e^u({k2}) / (1 - e^{target:g})"
        if ks.size == 0:
            log_part = -math.inf
        return _finish_polya(label, log_part, log_tail, k2 - 1, cert, details)
    # head too long to enumerate: exact for the first levels, then (count) * max of the envelope
    k_h = max(k_a, _HEAD_EXACT)
    ks = np.arange(1, k_h, dtype=float)
    head_exact = float(logsumexp(_log_summands(cover, ks, psi)))
    kmax = env.argmax(k_h, k2 - 1)
    head_env = math.log(k2 - k_h) + float(env.u(kmax))
    log_part = float(np.logaddexp(head_exact, head_env))
    cert = (f"exact summands for k < {k_h}; the {k2 - k_h} levels k in [{k_h}, {k2}) bounded by the "
            f"envelope maximum u({kmax:.6g}); concave envelope tail from k={k2}")
    details["envelope_max_at"] = kmax
    return _finish_polya(label, log_part, log_tail, k_h - 1, cert, details, force_log=True)


def _finish_polya(label, log_part, log_tail, count, cert, details, force_log=False):
    if log_part == -math.inf:
        return CoverReport(label, Verdict.SUMMABLE, 0.0, math.exp(log_tail) if log_tail < 700 else log_tail,
                           count, certificate=cert, log_scale=log_tail >= 700, details=details)
    return _finish(label, log_part, log_tail, count, cert, details, force_log)


def _explicit_polya_sum(cover, psi, tol, label, details):
    ks = np.arange(1, cover.levels + 1, dtype=float)
    logt = _log_summands(cover, ks, psi)
    small = logt < math.log(tol)
    run = 0
    stop = None
    for i, sm in enumerate(small):
        run = run + 1 if sm else 0
        if run >= RUN_LENGTH:
            stop = i
            break
    part = float(logsumexp(logt[: (stop if stop is not None else len(logt)) + 1]))
    if stop is None:
        return CoverReport(label, Verdict.INCONCLUSIVE, part, None, len(logt), log_scale=True,
                           certificate=f"fewer than {RUN_LENGTH} consecutive terms below {tol:g}", details=details)
    tail_ratios = np.diff(logt[stop - RUN_LENGTH + 1: stop + 1])
    rho = float(np.exp(tail_ratios.max()))
    if not rho < 1:
        return CoverReport(label, Verdict.INCONCLUSIVE, part, None, stop + 1, log_scale=True,
                           certificate="ratio test inconclusive at the truncation level", details=details)
    log_tail = float(logt[stop]) + math.log(rho) - math.log1p(-rho)
    return _finish(label, part, log_tail, stop + 1,
                   f"ratio-test closure with ratio {rho:.6g} over the last {RUN_LENGTH} levels", details)


def polya_level_bound_check(cover: PolyaThetaCover, psi: float | None = None, levels: int = 10):
    """``[(k, a_k, delta_k, exact level sum, bound)]`` for ``k <= levels`` with ``a_k >= 1``."""
    psi = fit_psi() if psi is None else psi
    out = []
    for k in range(1, levels + 1):
        a = float(cover.a(k))
        if a < 1:
            continue
        d = float(cover.delta(k))
        out.append((k, a, d, polya_level_sum(a, d), polya_level_bound(a, d, psi)))
    return out


# -- mixtures ---------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureTailCover:
    """Mixture ``sum_N p_N Pi_N`` (``N >= 1``) with ``I_N`` cells for component ``N``.

    ``weights``: ``("gaussian", c)`` for ``p_N ~ e^(-c N^2)``,
    ``("geometric", rho)`` for ``p_N = (1 - rho) rho^(N-1)``, or
    ``("explicit", (p_1, ..., p_n))``.
    ``counts``: ``("exponential", base)`` for ``I_N = base^N`` (e.g. ``base = c / delta``)
    or ``("explicit", (I_1, ..., I_n))``, constant after the last entry.
    """

    weights: tuple
    counts: tuple
    delta: float = 0.1

    def __post_init__(self):
        wk, ck = self.weights[0], self.counts[0]
        if wk not in ("gaussian", "geometric", "explicit"):
            raise CoverError(f"unknown weight family {wk!r}")
        if ck not in ("exponential", "explicit"):
            raise CoverError(f"unknown count family {ck!r}")
        if wk == "geometric" and not 0 < self.weights[1] < 1:
            raise CoverError("geometric ratio must lie in (0, 1)")
        if wk == "gaussian" and not self.weights[1] > 0:
            raise CoverError("gaussian rate must be positive")
        if wk == "explicit":
            p = np.asarray(self.weights[1], dtype=float)
            if (p < 0).any() or abs(p.sum() - 1) > 1e-9:
                raise CoverError("explicit weights must be nonnegative and sum to 1")
        if ck == "exponential" and not self.counts[1] > 1:
            raise CoverError("count base must exceed 1")
        if ck == "explicit":
            I = np.asarray(self.counts[1], dtype=float)
            if (np.diff(I) < 0).any() or (I < 1).any():
                raise CoverError("explicit counts must be nondecreasing and at least 1")

    def _gauss_logZ(self) -> float:
        c = self.weights[1]
        N = np.arange(1, int(math.ceil(math.sqrt(800 / c))) + 2, dtype=float)
        return float(logsumexp(-c * N * N))

    def log_tail(self, M) -> np.ndarray:
        """``log P-bar(M) = log sum_{N >= M} p_N``."""
        M = np.asarray(M, dtype=float)
        wk = self.weights[0]
        if wk == "geometric":
            return (M - 1) * math.log(self.weights[1])
        if wk == "gaussian":
            c = self.weights[1]
            j = np.arange(0, int(math.ceil(math.sqrt(800 / c))) + 2, dtype=float)
            inner = logsumexp(-c * (2 * np.multiply.outer(M, j) + j * j), axis=-1)
            return -c * M * M + inner - self._gauss_logZ()
        p = np.asarray(self.weights[1], dtype=float)
        suffix = np.concatenate((np.cumsum(p[::-1])[::-1], [0.0]))
        idx = np.clip(M.astype(int) - 1, 0, len(p))
        with np.errstate(divide="ignore"):
            return np.log(suffix[idx])

    def count(self, N) -> np.ndarray:
        N = np.asarray(N, dtype=float)
        if self.counts[0] == "exponential":
            return self.counts[1] ** N
        I = np.asarray(self.counts[1], dtype=float)
        return I[np.clip(N.astype(int) - 1, 0, len(I) - 1)]

    def log_group_size(self, M) -> np.ndarray:
        """``log #{k >= 1 : M_k = M}``."""
        M = np.asarray(M, dtype=float)
        if self.counts[0] == "exponential":
            base = self.counts[1]
            if (M * math.log(base) < 50).all():
                hi = np.floor(base ** M)
                lo = np.where(M > 1, np.floor(base ** (M - 1)), 0.0)
                with np.errstate(divide="ignore"):
                    return np.log(hi - lo)
            # floors are immaterial at this size
            return M * math.log(base) + np.where(M > 1, np.log1p(-1 / base), 0.0)
        I = np.floor(self.count(M))
        prev = np.where(M > 1, np.floor(self.count(M - 1)), 0.0)
        with np.errstate(divide="ignore"):
            return np.log(I - prev)

    def M_of_k(self, k) -> np.ndarray:
        """``M_k = min{N >= 1 : I_N >= k}``; 0 marks ``k`` beyond every ``I_N``."""
        k = np.asarray(k, dtype=float)
        if self.counts[0] == "exponential":
            base = self.counts[1]
            M = np.maximum(1, np.ceil(np.log(k) / math.log(base) - 1e-12))
            M = np.where(base ** M < k, M + 1, M)
            M = np.where((M > 1) & (base ** (M - 1) >= k), M - 1, M)
            return M.astype(int)
        I = np.asarray(self.counts[1], dtype=float)
        M = np.searchsorted(I, k, side="left") + 1
        return np.where(M > len(I), 0, M)


def mixture_terms(cover: MixtureTailCover, k) -> np.ndarray:
    """``sqrt(P-bar(M_k))`` for each cell index ``k``."""
    M = cover.M_of_k(k)
    out = np.exp(0.5 * cover.log_tail(np.maximum(M, 1)))
    return np.where(M > 0, out, 0.0)


def mixture_tail_sum(cover: MixtureTailCover, k_max: float = 1e12, tol: float = TOL) -> CoverReport:
    """``sum_k sqrt(P-bar(M_k))`` summed in groups of equal ``M_k``.

    Groups whose cells all satisfy ``k <= k_max`` are summed explicitly.
    Beyond that a tail bound is attached for Gaussian weights (concave
    envelope) and geometric weights (geometric series), or a diverging
    minorant is given.  Finite weight lists and bounded counts give a finite
    series that is summed exactly.
    """
    wk, ck = cover.weights[0], cover.counts[0]
    label = f"mixture tail, p_N {wk}, I_N {ck}"
    details = {"weights": [wk, _jsonable(cover.weights[1])], "counts": [ck, _jsonable(cover.counts[1])],
               "delta": cover.delta}

    def group_logs(M):
        return cover.log_group_size(M) + 0.5 * cover.log_tail(M)

    # finite series
    if ck == "explicit" or wk == "explicit":
        if ck == "explicit":
            last = len(cover.counts[1])
        else:
            last = len(cover.weights[1])
        M = np.arange(1, last + 1, dtype=float)
        g = group_logs(M)
        if ck == "explicit":
            total = float(np.exp(logsumexp(g)))
            n_cells = int(np.floor(cover.count(last)))
            return CoverReport(label, Verdict.SUMMABLE, total, 0.0, n_cells,
                               certificate=f"finite cover: {n_cells} cells summed exactly", details=details)
        total = float(np.exp(logsumexp(g)))
        return CoverReport(label, Verdict.SUMMABLE, total, 0.0, last,
                           certificate=f"p_N = 0 beyond N={last}: finite sum", details=details)

    L = math.log(cover.counts[1])
    M_eval = max(1, int(math.floor(math.log(k_max) / L)))  # groups with I_M <= k_max
    Ms = np.arange(1, M_eval + 1, dtype=float)
    g = group_logs(Ms)
    slope = float(cover.log_tail(M_eval) / M_eval)
    details["log_tail_slope"] = slope  # N^-1 log P-bar(N) at the last evaluated group
    if wk == "geometric":
        q_log = L + 0.5 * math.log(cover.weights[1])
        details["group_growth_log_rate"] = q_log
        if q_log >= 0:
            return CoverReport(label, Verdict.DIVERGENT, float(np.exp(logsumexp(g))) if g.max() < 700 else math.inf,
                               None, M_eval,
                               witness=(f"group M contributes >= (1 - 1/I_1) I_M rho^((M-1)/2) / 2, "
                                        f"growing like exp({q_log:.6g} M): terms do not vanish"),
                               details=details)
        # group_M <= I_M rho^((M-1)/2) = exp(M L + (M-1) log(rho)/2), ratio e^q
        M0 = M_eval + 1
        log_tail = M0 * L + 0.5 * (M0 - 1) * math.log(cover.weights[1]) - math.log(-math.expm1(q_log))
        return _finish(label, float(logsumexp(g)), log_tail, M_eval,
                       f"geometric tail from group {M0}, ratio exp({q_log:.6g})", details)
    # gaussian weights: v(M) = M L - (c/2) M^2 + const is concave and dominates the group logs
    c = cover.weights[1]
    const = -0.5 * cover._gauss_logZ() - 0.5 * math.log(-math.expm1(-3 * c))
    M2 = max(M_eval + 1, int(math.ceil((L + 1) / c)))
    if M2 > M_eval + 1:
        extra = np.arange(M_eval + 1, M2, dtype=float)
        g = np.concatenate((g, group_logs(extra)))
    v2 = M2 * L - 0.5 * c * M2 * M2 + const
    log_tail = v2 - math.log(-math.expm1(-1.0))
    return _finish(label, float(logsumexp(g)), log_tail, int(g.size),
                   f"groups beyond {g.size} bounded by the concave envelope M L - (c/2) M^2 + const", details)


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


# -- cells -----------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    label: str
    lo: float
    hi: float
    mass: float

    @property
    def sqrt_mass(self) -> float:
        return math.sqrt(self.mass)


def _check_disjoint(cells: list[Cell]) -> list[Cell]:
    ordered = sorted(cells, key=lambda c: c.lo)
    for left, right in zip(ordered, ordered[1:]):
        if left.hi > right.lo + 1e-15 * max(1.0, abs(right.lo)):
            raise CoverError(f"cells {left.label} and {right.label} overlap")
    return cells


def cover_to_prior_cells(cover, prior, level: int = 1, n_range: tuple[int, int] | None = None,
                         mass_floor: float = 1e-16) -> list[Cell]:
    """Enumerate the cells of one coordinate or one Polya level with their prior masses.

    * ``PolyaThetaCover`` with ``prior`` a :class:`PolyaTreeParams` or a
      split parameter ``a``: centre cell plus ladder cells on both sides of
      level ``level``, down to cells of mass below ``mass_floor``.
    * ``GaussianCoordCover`` with ``prior`` a standard deviation (or ``None``
      for the cover's own ``sigma_level``): cells ``n`` in ``n_range``.

    Cells are checked to be disjoint.
    """
    if isinstance(cover, PolyaThetaCover):
        a = float(prior.level_params[level - 1]) if isinstance(prior, PolyaTreeParams) else float(prior)
        d = float(cover.delta(level))
        lo, hi, mass, b, c = _ladder(a, d)
        keep = np.ones(lo.size, dtype=bool)
        # drop the far ladder once the remaining mass is negligible
        remain = special.betainc(a, a, lo)
        cut = np.flatnonzero(remain < mass_floor)
        if cut.size:
            keep[cut[0] + 1:] = False
        cells = [Cell("centre", c, 1 - c, beta_cell_mass(a, (c, 1 - c)))]
        for l in np.flatnonzero(keep):
            cells.append(Cell(f"lower-{l + 1}", float(lo[l]), float(hi[l]), float(mass[l])))
            cells.append(Cell(f"upper-{l + 1}", float(1 - hi[l]), float(1 - lo[l]), float(mass[l])))
        return _check_disjoint(cells)
    if isinstance(cover, GaussianCoordCover):
        sigma = float(cover.sds[level - 1]) if prior is None else float(prior)
        d = float(cover.deltas[level - 1])
        n0, n1 = n_range if n_range is not None else (-6, 6)
        ns = np.arange(n0, n1 + 1)
        masses = np.atleast_1d(gaussian_cell_mass(sigma, d, ns))
        cells = [Cell(f"n={n}", n * d, (n + 1) * d, float(m)) for n, m in zip(ns, masses)]
        return _check_disjoint(cells)
    raise CoverError(f"no cell enumeration for {type(cover).__name__}")


def cell_diameter_check(cover, prior, rng: np.random.Generator, pairs: int = 5, depth: int = 4,
                        rule: QuadratureRule = DEFAULT_RULE) -> tuple[float, float]:
    """Sample pairs of densities sharing a cell; return ``(largest h, claimed bound)``.

    Polya trees: for every split of the first ``depth`` levels a random cell
    is chosen and both densities draw their split uniformly inside it; the
    bound is ``1 - exp(-delta_star / 2)``.  Gaussian coordinates (the cosine
    exponential family): each coordinate is drawn inside a random cell of
    width ``delta_j``; the bound is ``1 - exp(-delta sqrt 2)``.
    """
    worst = 0.0
    if isinstance(cover, PolyaThetaCover):
        bound = -math.expm1(-cover.delta_star / 2)
        for _ in range(pairs):
            s1, s2 = [], []
            for k in range(1, depth + 1):
                a = float(prior.level_params[k - 1]) if isinstance(prior, PolyaTreeParams) else float(prior)
                cells = cover_to_prior_cells(cover, a, level=k)
                probs = np.array([c.mass for c in cells])
                pick = rng.choice(len(cells), size=2 ** (k - 1), p=probs / probs.sum())
                lo = np.array([cells[i].lo for i in pick])
                hi = np.array([cells[i].hi for i in pick])
                s1.append(rng.uniform(lo, hi))
                s2.append(rng.uniform(lo, hi))
            worst = max(worst, hellinger_h(polya_density(s1), polya_density(s2), rule))
        return worst, bound
    if isinstance(cover, GaussianCoordCover):
        bound = -math.expm1(-cover.delta * math.sqrt(2))
        d = cover.deltas
        for _ in range(pairs):
            n = np.floor(rng.normal(0, cover.sds) / d)
            t1 = (n + rng.uniform(size=d.size)) * d
            t2 = (n + rng.uniform(size=d.size)) * d
            f1, _ = expfam_density(np.concatenate(([0.0], t1)), rule)
            f2, _ = expfam_density(np.concatenate(([0.0], t2)), rule)
            worst = max(worst, hellinger_h(f1, f2, rule))
        return worst, bound
    raise CoverError(f"no diameter check for {type(cover).__name__}")
