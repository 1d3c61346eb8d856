"""Scenario runners and their serialized outputs.

Every runner returns a :class:`Result`: a table (list of row dicts, written
as CSV) plus a summary dict (written as JSON).  Floats are written with
``repr`` and JSON keys are sorted, so a config and seed fully determine the
output bytes.

Replicate ``r`` draws from
``numpy.random.default_rng(SeedSequence(entropy=seed, spawn_key=(r,)))``, so
its stream does not depend on how many replicates run or on which worker
runs it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..covering import GaussianCoordCover, MixtureTailCover, PolyaThetaCover, expfam_cover_sum, fit_psi, \
    mixture_tail_sum, polya_cover_sum
from ..densities import SupportedDensity
from ..martingale import (
    MartingaleTrace,
    TransformKind,
    build_trace,
    chi_sq_criterion,
    variance_condition,
)
from ..posterior import HellingerComplementSet, set_mask
from ..priors import DiscretePrior, PolyaTreeParams, RandomHistogramPrior, WeightLaw, sqrt_mass_sum
from ..summability import SCHEMA_VERSION, CoverReport
from .config import ConfigError, ExperimentConfig, make_truth

__all__ = [
    "TRACE_SCHEMA",
    "TRACE_COLUMNS",
    "Result",
    "replicate_rng",
    "generate_data",
    "make_prior",
    "run_consistency",
    "run_martingale",
    "run_summability",
    "run_chi_sq",
    "run",
    "write_result",
    "read_trace_csv",
    "replay_check",
]

TRACE_SCHEMA = "bayescons-trace/1"
TRACE_COLUMNS = ("replicate", "n", "x", "log_L", "log_I", "post_mass_A", "H_pred", "D_pred",
                 "cesaro_H", "cesaro_D", "M")


@dataclass
class Result:
    scenario: str
    rows: list[dict] = field(default_factory=list)
    columns: tuple[str, ...] = ()
    summary: dict = field(default_factory=dict)


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))


def generate_data(f0: SupportedDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from ``f0`` (inverse CDF, exact or tabulated)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return np.empty(0)
    x = f0.sample(n, rng)
    if not (f0(x) > 0).all():
        raise ArithmeticError("drew a point where the true density vanishes")
    return x


def make_prior(spec: dict, for_sequential: bool = True):
    """Prior object for a validated prior spec."""
    fam = spec["family"]
    if fam == "discrete":
        atoms = spec.get("atoms")
        dens = None if atoms is None else [make_truth(a, f"prior.atoms[{i}]") for i, a in enumerate(atoms)]
        law = spec.get("law")
        if law is not None:
            wl = WeightLaw(law["kind"], float(law["param"]))
            size = len(dens) if dens is not None else int(spec.get("size", 1000))
            return DiscretePrior.from_law(wl, size, (lambda k: dens[k - 1]) if dens is not None else None)
        return DiscretePrior.finite(dens, spec.get("weights"))
    if fam == "histogram":
        law = spec["law"]
        m_max = int(spec.get("m_max", 64))
        if law == "point":
            return RandomHistogramPrior.point(int(spec["m"]))
        if law == "geometric":
            return RandomHistogramPrior.geometric(float(spec["param"]), m_max)
        return RandomHistogramPrior.polynomial(float(spec["param"]), m_max)
    if fam == "polya":
        a = spec["a"]
        if for_sequential:
            depth = int(spec.get("depth", 6))
            if a["kind"] == "explicit":
                return PolyaTreeParams.schedule(depth, [float(v) for v in a["values"]][:depth])
            scale, rate = float(a.get("scale", 1.0)), float(a["rate"])
            fn = (lambda k: scale * k ** rate) if a["kind"] == "power" else (lambda k: scale * rate ** k)
            return PolyaTreeParams.schedule(depth, fn)
        kw = {"delta_star": float(spec.get("delta_star", 1.0))}
        if a["kind"] == "explicit":
            return PolyaThetaCover.explicit(a["values"], r=float(spec.get("r", 0.5)), **kw)
        if a["kind"] == "power":
            r = spec.get("r")
            return PolyaThetaCover.power(float(a["rate"]), float(a.get("scale", 1.0)), r=None if r is None else float(r), **kw)
        return PolyaThetaCover.geometric(float(a["rate"]), float(a.get("scale", 1.0)), r=float(spec.get("r", 0.5)), **kw)
    if fam == "expfam":
        m = spec.get("m")
        return GaussianCoordCover.power_law(float(spec["sd_exponent"]), float(spec["gamma_exponent"]),
                                            delta=float(spec.get("delta", 1.0)),
                                            sd_scale=float(spec.get("sd_scale", 1.0)),
                                            m=None if m is None else int(m), J=int(spec.get("J", 1000)))
    if fam == "mixture":
        w, c = spec["weights"], spec["counts"]
        conv = lambda v: tuple(v) if isinstance(v, list) else v  # noqa: E731
        return MixtureTailCover((w[0], conv(w[1])), (c[0], conv(c[1])), float(spec.get("delta", 0.1)))
    raise ConfigError(f"prior.family: unknown prior family {fam!r}")


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _rows_from_trace(r: int, whole: MartingaleTrace, restricted: MartingaleTrace | None,
                     empty_set: bool) -> list[dict]:
    N = whole.N
    rows = []
    cH = np.concatenate(([math.nan], np.cumsum(whole.pred_H[:-1]) / np.arange(1, N + 1)))
    with np.errstate(invalid="ignore"):
        cD = np.concatenate(([math.nan], np.cumsum(whole.pred_D[:-1]) / np.arange(1, N + 1)))
    for n in range(N + 1):
        if restricted is not None:
            log_L = restricted.log_L[n]
            mass = math.exp(min(0.0, restricted.log_L[n] - whole.log_I[n]))
            M = 0.0 if n == 0 else restricted.M[n - 1]
        elif empty_set:
            log_L, mass, M = -math.inf, 0.0, None
        else:
            log_L, mass, M = whole.log_L[n], 1.0, (0.0 if n == 0 else whole.M[n - 1])
        rows.append({
            "replicate": r, "n": n, "x": None if n == 0 else whole.data[n - 1],
            "log_L": log_L, "log_I": whole.log_I[n], "post_mass_A": mass,
            "H_pred": whole.pred_H[n], "D_pred": whole.pred_D[n],
            "cesaro_H": None if n == 0 else cH[n], "cesaro_D": None if n == 0 else cD[n], "M": M,
        })
    return rows


def _set_for(config: ExperimentConfig, f0):
    if config.epsilon is not None:
        return HellingerComplementSet(f0, float(config.epsilon), "H")
    s = config.set
    if s is None:
        return None
    if s["kind"] == "hellinger":
        return HellingerComplementSet(f0, float(s["radius"]), "H")
    return [int(i) for i in s["indices"]]


def _one_replicate(args):
    config_dict, r = args
    config = ExperimentConfig.from_dict(config_dict)
    f0 = make_truth(config.truth)
    prior = make_prior(config.prior)
    x = generate_data(f0, config.n, replicate_rng(config.seed, r))
    kind = config.transform_kind
    A = _set_for(config, f0)
    whole = build_trace(prior, None, f0, x, kind, seed=config.seed)
    restricted, empty = None, False
    if A is not None:
        mask = set_mask(prior, A)
        if not mask.any():
            empty = True
        elif not mask.all():
            restricted = build_trace(prior, mask, f0, x, kind, seed=config.seed)
    return whole, restricted, empty


def _run_replicates(config: ExperimentConfig, workers: int):
    jobs = [(config.to_dict(), r) for r in range(config.replicates)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_one_replicate, jobs))
    return [_one_replicate(j) for j in jobs]


def _config_summary(config: ExperimentConfig) -> dict:
    return {"schema": SCHEMA_VERSION, "config": config.to_dict()}


def run_consistency(config: ExperimentConfig, workers: int = 1) -> Result:
    """Sequential trace of ``Pi^n(A)``, predictive distances and ``log I_n`` per replicate."""
    rows = []
    finals = []
    for r, (whole, restricted, empty) in enumerate(_run_replicates(config, workers)):
        rr = _rows_from_trace(r, whole, restricted, empty)
        rows.extend(rr)
        finals.append(rr[-1]["post_mass_A"])
    summary = {**_config_summary(config), "final_post_mass_A": finals}
    return Result(config.scenario, rows, TRACE_COLUMNS, summary)


def _slope(n: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and R^2."""
    A = np.vstack([n, np.ones_like(n)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - A @ coef) ** 2).sum())
    return float(coef[0]), (1 - ss_res / ss_tot) if ss_tot > 0 else 1.0


def run_martingale(config: ExperimentConfig, workers: int = 1) -> Result:
    """Replicate ensemble: decay slope of ``log L_N``, ``M_N / N``, variance sums, Cesaro means."""
    reps = _run_replicates(config, workers)
    traces, rows = [], []
    for r, (whole, restricted, empty) in enumerate(reps):
        if empty:
            raise ConfigError("set: has zero prior mass")
        tr = restricted if restricted is not None else whole
        traces.append(tr)
        rows.extend(_rows_from_trace(r, whole, restricted, empty))
    N = traces[0].N
    n = np.arange(1, N + 1, dtype=float)
    slopes = np.array([_slope(n, t.log_L[1:])[0] for t in traces])
    terminal = np.array([t.M[-1] / N for t in traces])
    mean_dist = np.array([float(np.mean(t.distance)) for t in traces])
    var = variance_condition(traces)
    kind = config.transform_kind
    cesaro_dist = np.mean([np.cumsum(t.distance) / n for t in traces], axis=0)
    summary = {
        **_config_summary(config),
        "log_L_slope": {"mean": float(slopes.mean()), "se": float(slopes.std(ddof=1) / math.sqrt(len(slopes)))},
        "predicted_slope_from_distance": -float(mean_dist.mean()) if kind is TransformKind.LOG else None,
        "terminal_M_over_N": {"mean": float(terminal.mean()), "sd": float(terminal.std(ddof=1))},
        "terminal_log_I_over_N": [float(t.log_I[-1] / N) for t in traces],
        "variance_condition": {"verdict": var.verdict.value, "certificate": var.certificate,
                               "partial_sum": var.partial_sum,
                               "growth_exponent": var.growth_exponent},
        "cesaro_mean_distance": [float(v) for v in cesaro_dist[[0, 9, 49, 99, N - 1] if N >= 100 else [N - 1]]],
        "cesaro_checkpoints": [1, 10, 50, 100, N] if N >= 100 else [N],
    }
    return Result("martingale", rows, TRACE_COLUMNS, summary)


def _summability_one(spec: dict) -> CoverReport:
    fam = spec["family"]
    if fam == "discrete":
        return sqrt_mass_sum(make_prior(spec, for_sequential=False))
    obj = make_prior(spec, for_sequential=False)
    if fam == "polya":
        return polya_cover_sum(obj, fit_psi())
    if fam == "expfam":
        return expfam_cover_sum(obj)
    if fam == "mixture":
        return mixture_tail_sum(obj)
    raise ConfigError(f"prior.family: no summability evaluation for {fam!r}")


def run_summability(config: ExperimentConfig, workers: int = 1) -> Result:
    specs = config.prior if isinstance(config.prior, list) else [config.prior]
    reports = [_summability_one(s) for s in specs]
    rows = []
    for spec, rep in zip(specs, reports):
        rows.append({"family": spec["family"], "label": rep.label, "verdict": rep.verdict.value,
                     "log_scale": int(rep.log_scale), "partial_sum": rep.partial_sum,
                     "tail_bound": rep.tail_bound, "total_bound": rep.total_bound,
                     "cells": rep.cell_count_evaluated})
    summary = {**_config_summary(config),
               "reports": [{"prior": s, **rep.to_dict()} for s, rep in zip(specs, reports)]}
    return Result("summability", rows,
                  ("family", "label", "verdict", "log_scale", "partial_sum", "tail_bound", "total_bound", "cells"),
                  summary)


def run_chi_sq(config: ExperimentConfig, workers: int = 1) -> Result:
    f0 = make_truth(config.truth)
    model = make_prior(config.prior)
    rep = chi_sq_criterion(model, f0, config.n, config.replicates, replicate_rng(config.seed, 0))
    row = {"n": rep.n, "bound": rep.bound, "established": int(rep.established), "estimate": rep.estimate,
           "stderr": rep.stderr, "replicates": rep.replicates}
    summary = {**_config_summary(config), **row, "within_3se": rep.within(3.0), "message": rep.message}
    return Result("chi-sq-criterion", [row], tuple(row), summary)


_RUNNERS = {
    "consistency": run_consistency,
    "predictive": run_consistency,
    "martingale": run_martingale,
    "summability": run_summability,
    "chi-sq-criterion": run_chi_sq,
}


def run(config: ExperimentConfig, workers: int = 1) -> Result:
    return _RUNNERS[config.scenario](config, workers)


# -- serialization ------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return repr(float(o))
    return o


def _dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, default=_json_default) + "\n"


def _table_csv(result: Result) -> str:
    buf = io.StringIO()
    buf.write(f"# {TRACE_SCHEMA} scenario={result.scenario}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for row in result.rows:
        w.writerow([row[c] if isinstance(row[c], str) else _num(row[c]) for c in result.columns])
    return buf.getvalue()


def write_result(result: Result, out_dir, fmt: str = "csv") -> list[Path]:
    """Write the table as CSV plus the summary as JSON, or everything as one JSON file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.scenario
    if fmt == "json":
        p = out / f"{stem}.json"
        p.write_text(_dump_json({**result.summary, "rows": result.rows}))
        return [p]
    if fmt != "csv":
        raise ConfigError(f"format: must be csv or json, got {fmt!r}")
    p1, p2 = out / f"{stem}.csv", out / f"{stem}.json"
    p1.write_text(_table_csv(result))
    p2.write_text(_dump_json(result.summary))
    return [p1, p2]


def read_trace_csv(path) -> list[dict]:
    """Rows of a trace CSV with numeric fields parsed (blank fields become ``None``)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {TRACE_SCHEMA}"):
        raise ValueError(f"{path}: missing '{TRACE_SCHEMA}' header comment")
    reader = csv.DictReader(lines[1:])
    rows = []
    for rec in reader:
        rows.append({k: (None if v == "" else (int(v) if k in ("replicate", "n") else float(v)))
                     for k, v in rec.items()})
    return rows


def replay_check(config: ExperimentConfig, rows: Sequence[dict], tol: float = 1e-9) -> None:
    """Recompute each row from the previous one and its data point.

    For each replicate the posterior is advanced one observation at a time
    from the ``x`` column; the recomputed ``log L_n``, ``log I_n``,
    ``Pi^n(A)`` and ``M_n`` must match the stored row, and consecutive rows
    must satisfy ``log L_n - log L_{n-1} = log(f_{n-1,A}(x_n) / f0(x_n))``.
    Raises ``ValueError`` at the first mismatch.
    """
    f0 = make_truth(config.truth)
    prior = make_prior(config.prior)
    kind = config.transform_kind
    A = _set_for(config, f0)
    by_rep: dict[int, list[dict]] = {}
    for row in rows:
        by_rep.setdefault(row["replicate"], []).append(row)
    for r, rr in by_rep.items():
        rr = sorted(rr, key=lambda d: d["n"])
        if [d["n"] for d in rr] != list(range(len(rr))):
            raise ValueError(f"replicate {r}: steps are not 0..N")
        x = np.array([d["x"] for d in rr[1:]], dtype=float)
        whole = build_trace(prior, None, f0, x, kind)
        restricted, empty = None, False
        if A is not None:
            mask = set_mask(prior, A)
            empty = not mask.any()
            if not empty and not mask.all():
                restricted = build_trace(prior, mask, f0, x, kind)
        fresh = _rows_from_trace(r, whole, restricted, empty)
        ref = restricted if restricted is not None else whole
        for n, (stored, new) in enumerate(zip(rr, fresh)):
            for col in ("log_L", "log_I", "post_mass_A", "M"):
                a, b = stored[col], new[col]
                if a is None and b is None:
                    continue
                if a is None or b is None or not (a == b or abs(a - b) <= tol * max(1.0, abs(b))):
                    raise ValueError(f"replicate {r}, n={n}: column {col} is {a!r}, replay gives {b!r}")
            if n > 0 and not empty:
                step = stored["log_L"] - rr[n - 1]["log_L"]
                if abs(step - ref.log_ratio[n - 1]) > tol * max(1.0, abs(step)):
                    raise ValueError(f"replicate {r}, n={n}: one-step ratio does not match the stored rows")
