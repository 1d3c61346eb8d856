"""Experiment configuration: JSON in, validated dataclass out, and back.

A config is a JSON object with these keys (``*`` marks required keys)::

    scenario*   "consistency" | "predictive" | "martingale" | "summability" | "chi-sq-criterion"
    seed*       integer in [0, 2**64)
    truth       density spec, e.g. {"name": "uniform"} or {"name": "beta", "a": 2, "b": 3}
    prior       prior spec, or a list of them for "summability"
    n           sample size (>= 1; "chi-sq-criterion" also accepts 0)
    replicates  number of independent replicates (>= 1; >= 30 for "martingale")
    epsilon     Hellinger radius of {f : H(f, f0) > epsilon} (consistency only)
    set         restriction set for "martingale": null, {"kind": "atoms", "indices": [...]},
                or {"kind": "hellinger", "radius": r}
    transform   "sqrt-minus-one" | "log" | "one-minus-inverse"
    output      {"dir": "out"}

Density specs (``truth`` and discrete atoms) use ``name`` plus parameters:
``uniform``, ``linear`` (the density 2x), ``reflected-linear`` (2(1 - x)),
``power`` (``k``: (k + 1) x^k), ``beta`` (``a``, ``b``; polynomial Beta shapes),
``piecewise`` (``edges``, ``heights``).  The same menu is reachable from
short strings such as ``"2x"`` or ``"beta(2,3)"`` via :func:`parse_density`.

Prior specs carry a ``family``:

* ``discrete``: ``atoms`` (density specs) with optional ``weights``, or a
  ``law`` ``{"kind": "geometric" | "polynomial", "param": x}`` with optional
  ``atoms`` and ``size``.
* ``histogram``: ``law`` in ``geometric`` (``param`` = ratio), ``polynomial``
  (``param`` = exponent) or ``point`` (``m``); optional ``m_max``.
* ``polya``: ``depth`` and ``a`` = ``{"kind": "power" | "geometric", "scale", "rate"}``
  or ``{"kind": "explicit", "values": [...]}``; optional ``delta_star`` and ``r``
  for summability.
* ``expfam``: ``sd_exponent``, ``gamma_exponent``, optional ``sd_scale``,
  ``delta``, ``m``, ``J``.
* ``mixture``: ``weights`` and ``counts`` pairs as in
  :class:`~bayescons.covering.MixtureTailCover`, optional ``delta``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .. import densities as dens
from ..densities import SupportedDensity
from ..martingale import TransformKind

__all__ = [
    "ConfigError",
    "SCENARIOS",
    "ExperimentConfig",
    "load_config",
    "make_truth",
    "parse_density",
]

SCENARIOS = ("consistency", "predictive", "martingale", "summability", "chi-sq-criterion")
_FAMILIES = ("discrete", "histogram", "polya", "expfam", "mixture")
_KEYS = ("scenario", "seed", "truth", "prior", "n", "replicates", "epsilon", "set", "transform", "output")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""


def _need(cond: bool, fieldname: str, msg: str):
    if not cond:
        raise ConfigError(f"{fieldname}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


# -- densities -------------------------------------------------------------------


def make_truth(spec: dict, fieldname: str = "truth") -> SupportedDensity:
    """Build a density from a menu spec."""
    _need(isinstance(spec, dict) and "name" in spec, fieldname, "expected an object with a 'name'")
    name = spec["name"]
    try:
        if name == "uniform":
            return dens.uniform()
        if name in ("linear", "2x"):
            return dens.power(1)
        if name in ("reflected-linear", "2(1-x)"):
            return dens.reflected_power(1)
        if name == "power":
            _need(_is_num(spec.get("k")) and spec["k"] >= 0, f"{fieldname}.k", "needs a number >= 0")
            return dens.power(spec["k"])
        if name == "beta":
            for p in ("a", "b"):
                _need(_is_num(spec.get(p)) and spec[p] >= 1, f"{fieldname}.{p}", "needs a number >= 1")
            return dens.beta_poly(spec["a"], spec["b"])
        if name == "piecewise":
            return dens.piecewise_constant(spec["edges"], spec["heights"])
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{fieldname}: {exc}") from exc
    raise ConfigError(f"{fieldname}.name: unknown density {name!r}")


_CALL = re.compile(r"^\s*([a-z-]+)\s*\(([^)]*)\)\s*$")


def parse_density(text: str) -> SupportedDensity:
    """Short names: ``uniform``, ``2x``, ``2(1-x)``, ``power(k)``, ``beta(a,b)``, ``step(h1,...)``."""
    t = text.strip().replace(" ", "")
    if t in ("uniform", "2x", "linear", "2(1-x)", "reflected-linear"):
        return make_truth({"name": t}, "density")
    m = _CALL.match(t)
    if m:
        name = m.group(1)
        try:
            args = [float(v) for v in m.group(2).split(",") if v]
        except ValueError as exc:
            raise ConfigError(f"density: bad arguments in {text!r}") from exc
        if name == "power" and len(args) == 1:
            return make_truth({"name": "power", "k": args[0]}, "density")
        if name == "beta" and len(args) == 2:
            return make_truth({"name": "beta", "a": args[0], "b": args[1]}, "density")
        if name == "step" and args:
            try:
                return dens.step(args)
            except ValueError as exc:
                raise ConfigError(f"density: {exc}") from exc
    raise ConfigError(f"density: cannot parse {text!r}")


# -- priors ------------------------------------------------------------------------


def _check_prior(spec, fieldname: str):
    _need(isinstance(spec, dict), fieldname, "expected an object")
    fam = spec.get("family")
    _need(fam in _FAMILIES, f"{fieldname}.family", f"must be one of {', '.join(_FAMILIES)}")
    if fam == "discrete":
        atoms = spec.get("atoms")
        law = spec.get("law")
        _need(atoms is not None or law is not None, fieldname, "discrete prior needs 'atoms' or 'law'")
        if atoms is not None:
            _need(isinstance(atoms, list) and atoms, f"{fieldname}.atoms", "expected a nonempty list")
            for i, a in enumerate(atoms):
                make_truth(a, f"{fieldname}.atoms[{i}]")
            w = spec.get("weights")
            if w is not None:
                _need(isinstance(w, list) and len(w) == len(atoms) and all(_is_num(x) and x >= 0 for x in w)
                      and sum(w) > 0, f"{fieldname}.weights", "needs one nonnegative weight per atom")
        if law is not None:
            _need(isinstance(law, dict) and law.get("kind") in ("geometric", "polynomial"),
                  f"{fieldname}.law.kind", "must be 'geometric' or 'polynomial'")
            _need(_is_num(law.get("param")), f"{fieldname}.law.param", "needs a number")
    elif fam == "histogram":
        law = spec.get("law")
        _need(law in ("geometric", "polynomial", "point"), f"{fieldname}.law",
              "must be 'geometric', 'polynomial' or 'point'")
        if law == "point":
            _need(_is_int(spec.get("m")) and spec["m"] >= 1, f"{fieldname}.m", "needs an integer >= 1")
        else:
            _need(_is_num(spec.get("param")), f"{fieldname}.param", "needs a number")
        if "m_max" in spec:
            _need(_is_int(spec["m_max"]) and spec["m_max"] >= 1, f"{fieldname}.m_max", "needs an integer >= 1")
    elif fam == "polya":
        a = spec.get("a")
        _need(isinstance(a, dict) and a.get("kind") in ("power", "geometric", "explicit"),
              f"{fieldname}.a.kind", "must be 'power', 'geometric' or 'explicit'")
        if a["kind"] == "explicit":
            _need(isinstance(a.get("values"), list) and a["values"], f"{fieldname}.a.values", "needs a list")
        else:
            _need(_is_num(a.get("rate")) and a["rate"] > 0, f"{fieldname}.a.rate", "needs a positive number")
        if "depth" in spec:
            _need(_is_int(spec["depth"]) and 1 <= spec["depth"] <= 20, f"{fieldname}.depth", "needs an integer in [1, 20]")
    elif fam == "expfam":
        for k in ("sd_exponent", "gamma_exponent"):
            _need(_is_num(spec.get(k)), f"{fieldname}.{k}", "needs a number")
    elif fam == "mixture":
        for k in ("weights", "counts"):
            _need(isinstance(spec.get(k), list) and len(spec[k]) == 2, f"{fieldname}.{k}", "needs a [kind, parameter] pair")


# -- config ------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seed: int
    truth: dict | None = None
    prior: Any = None
    n: int = 1
    replicates: int = 1
    epsilon: float | None = None
    set: dict | None = None
    transform: str = TransformKind.SQRT_MINUS_ONE.value
    output: dict = field(default_factory=lambda: {"dir": "out"})

    def __post_init__(self):
        _need(self.scenario in SCENARIOS, "scenario", f"must be one of {', '.join(SCENARIOS)}")
        _need(_is_int(self.seed) and 0 <= self.seed < 2 ** 64, "seed", "needs an integer in [0, 2**64)")
        min_n = 0 if self.scenario == "chi-sq-criterion" else 1
        if self.scenario != "summability":
            _need(_is_int(self.n) and self.n >= min_n, "n", f"must be an integer >= {min_n}")
            _need(self.truth is not None, "truth", "required for this scenario")
            make_truth(self.truth)
        min_r = 30 if self.scenario == "martingale" else 1
        _need(_is_int(self.replicates) and self.replicates >= min_r, "replicates",
              f"must be an integer >= {min_r}")
        if self.epsilon is not None:
            _need(_is_num(self.epsilon) and self.epsilon > 0, "epsilon", "must be a positive number")
        if self.scenario == "consistency":
            _need(self.epsilon is not None, "epsilon", "required for the consistency scenario")
        _need(self.prior is not None, "prior", "required")
        if self.scenario == "summability" and isinstance(self.prior, list):
            _need(len(self.prior) > 0, "prior", "empty list")
            for i, p in enumerate(self.prior):
                _check_prior(p, f"prior[{i}]")
        else:
            _check_prior(self.prior, "prior")
        try:
            TransformKind(self.transform)
        except ValueError:
            raise ConfigError(f"transform: must be one of {', '.join(t.value for t in TransformKind)}") from None
        if self.set is not None:
            _need(isinstance(self.set, dict) and self.set.get("kind") in ("atoms", "hellinger"),
                  "set.kind", "must be 'atoms' or 'hellinger'")
            if self.set["kind"] == "hellinger":
                _need(_is_num(self.set.get("radius")) and self.set["radius"] > 0, "set.radius",
                      "needs a positive number")
            else:
                _need(isinstance(self.set.get("indices"), list), "set.indices", "needs a list of atom indices")
        _need(isinstance(self.output, dict) and isinstance(self.output.get("dir", "out"), str),
              "output.dir", "needs a string path")
        if self.scenario in ("consistency", "predictive", "martingale"):
            fam = self.prior.get("family")
            if self.epsilon is not None or self.set is not None:
                _need(fam == "discrete", "prior.family", "Hellinger and atom sets need a discrete prior")
            _need(fam in ("discrete", "histogram", "polya"), "prior.family",
                  "sequential scenarios need a discrete, histogram or polya prior")
            if fam == "discrete":
                _need("atoms" in self.prior, "prior.atoms", "sequential scenarios need explicit atoms")
        if self.scenario == "chi-sq-criterion":
            _need(self.prior.get("family") == "histogram", "prior.family", "criterion needs a histogram prior")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: expected a JSON object")
        unknown = sorted(set(d) - set(_KEYS))
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown key")
        for k in ("scenario", "seed"):
            if k not in d:
                raise ConfigError(f"{k}: required")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _KEYS}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), "seed": seed})

    @property
    def transform_kind(self) -> TransformKind:
        return TransformKind(self.transform)

    @property
    def out_dir(self) -> Path:
        return Path(self.output.get("dir", "out"))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config: file not found: {p}")
    return ExperimentConfig.loads(p.read_text())
