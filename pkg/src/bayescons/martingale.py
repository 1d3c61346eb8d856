"""Martingale objects built on the numerator ``L_n = int_A R_n dPi``.

The basic fact used throughout is the one-step identity

    L_{n+1} / L_n = f_{nA}(X_{n+1}) / f0(X_{n+1}),

where ``f_{nA}`` is the predictive restricted to ``A``.  A trace records both
sides: ``log L_n`` accumulated through the identity, and ``log L_n``
computed directly from the prior and the data.  Transforms ``T`` of the
one-step ratio have conditional mean ``-d(f_{nA}, f0)`` for a paired
divergence ``d``, which makes

    M_N = sum_{n <= N} {T(L_n / L_{n-1}) + d(f_{n-1,A}, f0)}

a zero-mean martingale.

All ratio arithmetic is done on logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .densities import (
    DEFAULT_RULE,
    INF,
    QuadratureRule,
    SupportedDensity,
    chi2_values,
    chi_squared,
    h_values,
    hellinger_h,
    integrate,
    kl_divergence,
    kl_values,
)
from .posterior import (
    DiscretePosterior,
    histogram_update,
    polya_log_marginal,
    polya_predictive,
    polya_update,
    restricted_predictive,
    set_mask,
)
from .priors import DiscretePrior, PolyaTreeParams, RandomHistogramPrior
from .summability import Verdict

__all__ = [
    "TraceError",
    "TransformKind",
    "t_transform",
    "t_from_log",
    "MartingaleTrace",
    "build_trace",
    "conditional_mean_check",
    "LambdaTrace",
    "lambda_trace",
    "lambda_ensemble",
    "VarianceReport",
    "variance_condition",
    "log_ratio_bound",
    "CesaroDiagnostics",
    "cesaro_diagnostics",
    "ChiSqCriterionReport",
    "chi_sq_criterion",
    "MIN_REPLICATES",
]

MIN_REPLICATES = 30


class TraceError(ValueError):
    """A trace cannot be built: bad set, vanishing truth, or nonpositive ratio."""


class TransformKind(str, Enum):
    SQRT_MINUS_ONE = "sqrt-minus-one"  # paired with h
    LOG = "log"  # paired with D
    ONE_MINUS_INVERSE = "one-minus-inverse"  # paired with chi-squared


def t_transform(y, kind: TransformKind):
    """``sqrt(y) - 1``, ``log y`` or ``1 - 1/y``; ``y`` must be positive."""
    y_arr = np.asarray(y, dtype=float)
    if not (y_arr > 0).all():
        raise ValueError("T is defined for y > 0 only")
    kind = TransformKind(kind)
    if kind is TransformKind.SQRT_MINUS_ONE:
        out = np.sqrt(y_arr) - 1.0
    elif kind is TransformKind.LOG:
        out = np.log(y_arr)
    else:
        out = 1.0 - 1.0 / y_arr
    return float(out) if out.ndim == 0 else out


def t_from_log(log_y, kind: TransformKind):
    log_y = np.asarray(log_y, dtype=float)
    kind = TransformKind(kind)
    if kind is TransformKind.SQRT_MINUS_ONE:
        return np.expm1(0.5 * log_y)
    if kind is TransformKind.LOG:
        return log_y
    return -np.expm1(-log_y)


def _distance_values(kind: TransformKind, grid, fv, f0v):
    if kind is TransformKind.SQRT_MINUS_ONE:
        return h_values(grid, fv, f0v)
    if kind is TransformKind.LOG:
        return kl_values(grid, f0v, fv)
    return chi2_values(grid, f0v, fv)


def _distance(kind: TransformKind, f: SupportedDensity, f0: SupportedDensity, rule) -> float:
    if kind is TransformKind.SQRT_MINUS_ONE:
        return hellinger_h(f, f0, rule)
    if kind is TransformKind.LOG:
        return kl_divergence(f0, f, rule)
    return chi_squared(f0, f, rule)


# -- traces ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MartingaleTrace:
    """Per-step record of one sequential run.

    Arrays indexed by step ``n = 1..N`` have length ``N``; ``log_L``,
    ``log_L_direct`` and ``log_I`` include ``n = 0`` and have length
    ``N + 1``.  ``distance[n - 1]`` is ``d(f_{n-1,A}, f0)``; ``pred_H[n]`` and
    ``pred_D[n]`` hold ``H(f_n, f0)`` and ``D(f_n, f0)`` for the unrestricted
    predictive, ``n = 0..N``.
    """

    kind: TransformKind
    set_label: str
    data: np.ndarray
    log_L: np.ndarray
    log_L_direct: np.ndarray
    log_I: np.ndarray
    log_ratio: np.ndarray
    t_increment: np.ndarray
    distance: np.ndarray
    M: np.ndarray
    pred_H: np.ndarray
    pred_D: np.ndarray
    whole_space: bool
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.data.size

    @property
    def log_post_mass(self) -> np.ndarray:
        """``log Pi^n(A) = log L_n - log I_n`` for ``n = 0..N``."""
        return self.log_L - self.log_I

    def identity_error(self) -> float:
        """Largest gap between recursive and direct ``log L_n``."""
        return float(np.max(np.abs(self.log_L - self.log_L_direct)))


def _check_data(f0: SupportedDensity, data: np.ndarray) -> np.ndarray:
    f0x = f0(data)
    if not (f0x > 0).all():
        bad = data[~(f0x > 0)][0]
        raise TraceError(f"true density vanishes at data point {bad!r}")
    return f0x


def _assemble(kind, label, data, log_L, log_L_direct, log_I, log_ratio, dist, pred_H, pred_D, whole, seed, meta):
    if not np.isfinite(log_ratio).all():
        i = int(np.flatnonzero(~np.isfinite(log_ratio))[0])
        raise TraceError(f"nonpositive one-step ratio at step {i + 1} (x={data[i]!r})")
    t_inc = t_from_log(log_ratio, kind)
    M = np.cumsum(t_inc + dist)
    return MartingaleTrace(kind, label, data, log_L, log_L_direct, log_I, log_ratio, t_inc, dist, M,
                           pred_H, pred_D, whole, seed, meta)


def build_trace(prior, A, f0: SupportedDensity, data: Sequence[float], kind: TransformKind,
                rule: QuadratureRule = DEFAULT_RULE, seed: int | None = None) -> MartingaleTrace:
    """Run the posterior sequentially through ``data`` and record the martingale.

    ``prior`` is a :class:`DiscretePrior` (any ``A``), or a
    :class:`RandomHistogramPrior` / :class:`PolyaTreeParams` with ``A`` the
    whole space (``None``).
    """
    kind = TransformKind(kind)
    data = np.asarray(data, dtype=float)
    if isinstance(prior, DiscretePrior):
        return _discrete_trace(prior, A, f0, data, kind, rule, seed)
    if A is not None:
        raise TraceError("restricted traces need a discrete prior")
    if isinstance(prior, (RandomHistogramPrior, PolyaTreeParams)):
        return _conjugate_trace(prior, f0, data, kind, rule, seed)
    raise TraceError(f"unsupported prior {type(prior).__name__}")


def _discrete_trace(prior, A, f0, data, kind, rule, seed):
    if prior.atoms is None:
        raise TraceError("a weights-only prior has no likelihood")
    mask = set_mask(prior, A)
    whole = bool(mask.all())
    if not mask.any():
        raise TraceError("prior mass of A is zero")
    f0x = _check_data(f0, data)
    N = data.size
    atoms = prior.atoms
    grid = f0.grid(rule, *atoms)
    V = np.array([f(grid.nodes) for f in atoms])
    f0v = f0(grid.nodes)
    Fx = np.array([f(data) for f in atoms]).reshape(len(atoms), N)
    with np.errstate(divide="ignore"):
        logFx = np.log(Fx)
    lw0 = prior.log_weights
    # posterior log weights before each step: row n is the state after n points
    cum = np.concatenate((np.zeros((len(atoms), 1)), np.cumsum(logFx, axis=1)), axis=1)
    state = lw0[:, None] + cum  # (K, N+1)
    if not np.isfinite(state[:, :N].max(axis=0)).all():
        raise TraceError("every atom vanished on the data; posterior undefined")

    def restricted_weights(m, cols):
        s = np.where(m[:, None], state[:, :cols], -np.inf)
        return np.exp(s - logsumexp(s, axis=0, keepdims=True))  # (K, cols)

    WA = restricted_weights(mask, N)
    fA_x = np.einsum("kn,kn->n", WA, Fx)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(fA_x) - np.log(f0x)
    log_L = np.concatenate(([math.log(prior.weights[mask].sum())], math.log(prior.weights[mask].sum()) + np.cumsum(log_ratio)))
    log_f0_cum = np.concatenate(([0.0], np.cumsum(np.log(f0x))))
    log_L_direct = logsumexp(np.where(mask[:, None], state, -np.inf), axis=0) - log_f0_cum

    W = restricted_weights(np.ones(len(atoms), dtype=bool), N + 1)
    f_x = np.einsum("kn,kn->n", W[:, :N], Fx)
    with np.errstate(divide="ignore"):
        log_I = np.concatenate(([0.0], np.cumsum(np.log(f_x) - np.log(f0x))))
    pv = W.T @ V  # predictive on nodes for n = 0..N
    pred_H = np.sqrt(2 * np.asarray(h_values(grid, pv, f0v)))
    pred_D = np.asarray(kl_values(grid, f0v, pv))
    dist = np.asarray(_distance_values(kind, grid, (W[:, :N] if whole else WA).T @ V, f0v))
    label = "whole space" if whole else (A.describe() if hasattr(A, "describe") else f"atoms {np.flatnonzero(mask).tolist()}")
    return _assemble(kind, label, data, log_L, log_L_direct, log_I, log_ratio, dist,
                     pred_H, pred_D, whole, seed, {"prior_mass": float(prior.weights[mask].sum())})


def _conjugate_trace(prior, f0, data, kind, rule, seed):
    f0x = _check_data(f0, data)
    N = data.size
    if isinstance(prior, RandomHistogramPrior):
        breaks = {k / m for m in prior.support for k in range(1, m)}

        def states():
            for n in range(N + 1):
                hp = histogram_update(prior, data[:n])
                yield hp.node_values, hp.log_evidence
    else:
        breaks = set(prior.leaf_edges[1:-1])

        def states():
            params = prior
            for n in range(N + 1):
                yield polya_predictive(params), polya_log_marginal(params)
                if n < N:
                    params = polya_update(params, data[n])

    grid = rule.grid(0.0, 1.0, sorted(breaks | set(f0.breaks)))
    f0v = f0(grid.nodes)
    pv = np.empty((N + 1, grid.nodes.size))
    fx = np.empty(N)
    log_ev = np.empty(N + 1)
    for n, (pred, ev) in enumerate(states()):
        log_ev[n] = ev
        pv[n] = pred(grid.nodes)
        if n < N:
            fx[n] = pred(data[n:n + 1])[0]
    with np.errstate(divide="ignore"):
        log_ratio = np.log(fx) - np.log(f0x)
    log_f0_cum = np.concatenate(([0.0], np.cumsum(np.log(f0x))))
    log_L = np.concatenate(([0.0], np.cumsum(log_ratio)))
    log_L_direct = log_ev - log_f0_cum
    pred_H = np.sqrt(2 * np.asarray(h_values(grid, pv, f0v)))
    pred_D = np.asarray(kl_values(grid, f0v, pv))
    dist = np.asarray(_distance_values(kind, grid, pv[:N], f0v))
    return _assemble(kind, "whole space", data, log_L, log_L_direct, log_L.copy(), log_ratio, dist,
                     pred_H, pred_D, True, seed, {"prior": type(prior).__name__})


def conditional_mean_check(post: DiscretePosterior, A, f0: SupportedDensity, kind: TransformKind,
                           rule: QuadratureRule = DEFAULT_RULE) -> tuple[float, float]:
    """Return ``(int T(f_nA / f0) f0, -d(f_nA, f0))``.

    The first entry is the conditional expectation of the transformed
    one-step ratio computed by direct quadrature; the second is the paired
    divergence from the densities module.
    """
    kind = TransformKind(kind)
    fA = restricted_predictive(post, A)

    def integrand(x):
        a, b = fA(x), f0(x)
        out = np.zeros_like(b)
        pos = b > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            if kind is TransformKind.SQRT_MINUS_ONE:
                out[pos] = np.sqrt(a[pos] * b[pos]) - b[pos]
            elif kind is TransformKind.LOG:
                out[pos] = b[pos] * np.log(a[pos] / b[pos])
            else:
                out[pos] = b[pos] - b[pos] ** 2 / a[pos]
        return out

    breaks = sorted(set(fA.breaks) | set(f0.breaks))
    try:
        expected = integrate(integrand, f0.support, rule, breaks)
    except ArithmeticError:
        expected = -INF
    return float(expected), -_distance(kind, fA, f0, rule)


# -- Lambda sequences ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LambdaTrace:
    """``log Lambda_n`` for ``n = 0..N`` by recursion and directly."""

    log_lambda: np.ndarray
    log_lambda_direct: np.ndarray
    log_L: np.ndarray
    cell_mass: float


def lambda_trace(prior: DiscretePrior, cell, f0: SupportedDensity, data: Sequence[float],
                 rule: QuadratureRule = DEFAULT_RULE) -> LambdaTrace:
    """``Lambda_n = sqrt(int_{A_j} R_n dPi)`` with ``Lambda_0 = sqrt(Pi(A_j))``."""
    mask = set_mask(prior, cell)
    mass = float(prior.weights[mask].sum())
    if not mass > 0:
        raise TraceError("cell has zero prior mass")
    tr = build_trace(prior, mask, f0, data, TransformKind.SQRT_MINUS_ONE, rule)
    return LambdaTrace(0.5 * tr.log_L, 0.5 * tr.log_L_direct, tr.log_L, mass)


def lambda_ensemble(prior: DiscretePrior, cell, f0: SupportedDensity, data: np.ndarray) -> np.ndarray:
    """``log Lambda_n`` for each row of a replicate data matrix (direct form)."""
    mask = set_mask(prior, cell)
    if not prior.weights[mask].sum() > 0:
        raise TraceError("cell has zero prior mass")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    R, N = data.shape
    atoms = [f for f, m in zip(prior.atoms, mask) if m]
    lw = prior.log_weights[mask]
    flat = data.ravel()
    f0x = f0(flat).reshape(R, N)
    if not (f0x > 0).all():
        raise TraceError("true density vanishes at a data point")
    with np.errstate(divide="ignore"):
        logr = np.stack([np.log(f(flat).reshape(R, N)) - np.log(f0x) for f in atoms])  # (k, R, N)
    cum = np.concatenate((np.zeros(logr.shape[:2] + (1,)), np.cumsum(logr, axis=2)), axis=2)
    return 0.5 * logsumexp(lw[:, None, None] + cum, axis=0)


# -- variance condition ------------------------------------------------------------


@dataclass
class VarianceReport:
    """Cross-replicate variances of the T-increments and their weighted sums."""

    kind: TransformKind
    variances: np.ndarray
    partial_sums: np.ndarray
    analytic_bound: np.ndarray | None
    verdict: Verdict
    certificate: str
    growth_exponent: float | None = None

    @property
    def partial_sum(self) -> float:
        return float(self.partial_sums[-1])


def variance_condition(traces: Sequence[MartingaleTrace], increment_bound: float | None = None) -> VarianceReport:
    """Partial sums of ``n^-2 Var{T(L_n / L_{n-1})}`` over a replicate ensemble.

    The variance at each ``n`` is the sample variance across replicates.  A
    Summable verdict needs an analytic bound: ``Var <= 1`` for the square-root
    transform, or ``Var <= c^2`` when every increment lies in ``[-c, c]``
    (``increment_bound``).  Otherwise the verdict is Inconclusive and the
    empirical growth exponent of the variances is reported.
    """
    if len(traces) < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicate traces, got {len(traces)}")
    kind = traces[0].kind
    if any(t.kind is not kind for t in traces):
        raise ValueError("all traces must use the same transform")
    N = min(t.N for t in traces)
    T = np.array([t.t_increment[:N] for t in traces])
    var = T.var(axis=0, ddof=1)
    n = np.arange(1, N + 1, dtype=float)
    sums = np.cumsum(var / n ** 2)
    inv_sq = np.cumsum(1.0 / n ** 2)
    bound = None
    if kind is TransformKind.SQRT_MINUS_ONE:
        bound = inv_sq
        cert = "Var(sqrt(y) - 1) <= E y = 1, so partial sums <= sum n^-2 < pi^2/6"
    elif increment_bound is not None and math.isfinite(increment_bound):
        observed = float(np.abs(T).max()) if T.size else 0.0
        if observed > increment_bound * (1 + 1e-12):
            raise ValueError(f"an increment of size {observed} exceeds the declared bound {increment_bound}")
        bound = increment_bound ** 2 * inv_sq
        cert = f"increments in [-{increment_bound:.6g}, {increment_bound:.6g}]: Var <= c^2, sum <= c^2 pi^2/6"
    else:
        cert = "no analytic variance bound"
    growth = None
    half = N // 2
    pos = var[half:] > 0
    if pos.sum() >= 3:
        growth = float(np.polyfit(np.log(n[half:][pos]), np.log(var[half:][pos]), 1)[0])
    verdict = Verdict.SUMMABLE if bound is not None else Verdict.INCONCLUSIVE
    return VarianceReport(kind, var, sums, bound, verdict, cert, growth)


def log_ratio_bound(prior: DiscretePrior, A, f0: SupportedDensity, points: int = 4097) -> float:
    """Bound on ``|log(f_{nA} / f0)|`` valid for every posterior state.

    ``f_{nA} / f0`` is a convex combination of the atom ratios, so it stays
    between the smallest and largest atom ratio.  Evaluated on a fine grid
    including the endpoints; ``inf`` if some atom vanishes where ``f0 > 0``.
    """
    mask = set_mask(prior, A)
    a, b = f0.support
    x = np.linspace(a, b, points)
    f0x = f0(x)
    pos = f0x > 0
    lo, hi = INF, 0.0
    for f, m in zip(prior.atoms, mask):
        if not m:
            continue
        r = f(x[pos]) / f0x[pos]
        lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
    if not lo > 0:
        return INF
    return max(abs(math.log(lo)), abs(math.log(hi)))


# -- Cesaro diagnostics ------------------------------------------------------------


@dataclass(frozen=True)
class CesaroDiagnostics:
    """Running means for ``N = 1..N_max``."""

    mean_H: np.ndarray
    mean_D: np.ndarray
    mean_T: np.ndarray
    evidence_root_gap: np.ndarray  # I_N^(1/(2N)) - 1


def cesaro_diagnostics(trace: MartingaleTrace) -> CesaroDiagnostics:
    """Cesaro means of ``H(f_{n-1}, f0)``, ``D(f_{n-1}, f0)`` and ``T(I_n / I_{n-1})``."""
    if not trace.whole_space:
        raise TraceError("Cesaro diagnostics need a trace over the whole space")
    N = np.arange(1, trace.N + 1, dtype=float)
    with np.errstate(invalid="ignore"):
        mean_D = np.cumsum(trace.pred_D[:-1]) / N
    return CesaroDiagnostics(
        np.cumsum(trace.pred_H[:-1]) / N,
        mean_D,
        np.cumsum(trace.t_increment) / N,
        np.expm1(trace.log_I[1:] / (2 * N)),
    )


# -- the sup_n E int f0^2 / f_n criterion -----------------------------------------


@dataclass
class ChiSqCriterionReport:
    n: int
    bound: float
    established: bool
    estimate: float | None = None
    stderr: float | None = None
    replicates: int = 0
    message: str = ""

    def within(self, k_se: float = 3.0) -> bool:
        """Estimate at most ``bound + k_se * stderr``."""
        return self.established and self.estimate <= self.bound + k_se * self.stderr + 1e-12


def chi_sq_criterion(model: RandomHistogramPrior, f0: SupportedDensity, n: int, replicates: int,
                     rng: np.random.Generator, rule: QuadratureRule = DEFAULT_RULE,
                     chunk: int = 256) -> ChiSqCriterionReport:
    """Monte-Carlo ``E int f0^2 / f_n`` against ``lam sum_m pi(m)(m + n)/(1 + n)``.

    ``lam = sup f0`` must be finite.  When the bin law has an infinite first
    moment no estimate is produced and ``established`` is False.
    """
    if f0.upper_bound is None or not math.isfinite(f0.upper_bound):
        raise ValueError("criterion needs a bounded true density (finite sup f0)")
    lam = float(f0.upper_bound)
    ms = model.support
    pis = model.bin_probs[ms - 1]
    bound = lam * float(np.sum(pis * (ms + n) / (1.0 + n)))
    if not model.first_moment_finite():
        return ChiSqCriterionReport(n, bound, False, message="criterion not established: sum_m m pi(m) diverges")
    breaks = sorted({k / m for m in ms for k in range(1, m)} | set(f0.breaks))
    grid = rule.grid(0.0, 1.0, breaks)
    f0v = f0(grid.nodes)
    f0sq = f0v * f0v
    idx = [np.clip(np.floor(grid.nodes * m).astype(int), 0, m - 1) for m in ms]
    log_pi = np.log(pis)
    vals = np.empty(replicates)
    from scipy.special import gammaln

    for s in range(0, replicates, chunk):
        C = min(chunk, replicates - s)
        X = f0.sample((C, n), rng) if n else np.zeros((C, 0))
        joint = np.empty((C, ms.size))
        ws = []
        for i, m in enumerate(ms):
            b = np.clip(np.floor(X * m).astype(int), 0, m - 1)
            counts = np.zeros((C, m))
            np.add.at(counts, (np.repeat(np.arange(C), n), b.ravel()), 1)
            joint[:, i] = n * math.log(m) + gammaln(m) + gammaln(1 + counts).sum(1) - gammaln(m + n)
            ws.append(m * (1 + counts) / (m + n))
        joint += log_pi
        post = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        fn = np.zeros((C, grid.nodes.size))
        for i in range(ms.size):
            fn += post[:, i:i + 1] * ws[i][:, idx[i]]
        vals[s:s + C] = grid.integrate_values(f0sq / fn)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    return ChiSqCriterionReport(n, bound, True, est, se, replicates)
