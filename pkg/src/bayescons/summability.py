"""Verdicts and reports for series of square-rooted prior masses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

__all__ = ["Verdict", "CoverReport", "SCHEMA_VERSION"]

SCHEMA_VERSION = "bayescons-report/1"


class Verdict(str, Enum):
    SUMMABLE = "Summable"
    DIVERGENT = "Divergent"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class CoverReport:
    """Outcome of a summability evaluation.

    ``partial_sum`` is the explicitly evaluated part of the series and
    ``tail_bound`` a certified upper bound on the remainder (``None`` unless
    the verdict is Summable).  A Divergent report names its diverging
    minorant in ``witness``.  When the series is too large to hold as a float
    (``log_scale=True``), both sums are natural logarithms.
    """

    label: str
    verdict: Verdict
    partial_sum: float
    tail_bound: float | None = None
    cell_count_evaluated: int = 0
    certificate: str = ""
    witness: str | None = None
    log_scale: bool = False
    details: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict is Verdict.SUMMABLE:
            tail = self.tail_bound
            if tail is None or not math.isfinite(self.partial_sum) or math.isnan(tail) or tail == math.inf:
                raise ValueError("a Summable report needs a finite partial sum and tail bound")
        if self.verdict is Verdict.DIVERGENT and not self.witness:
            raise ValueError("a Divergent report needs a diverging minorant witness")

    @property
    def total_bound(self) -> float | None:
        """Certified bound on the whole series (log-scale if ``log_scale``)."""
        if self.verdict is not Verdict.SUMMABLE:
            return None
        if self.log_scale:
            return _logaddexp(self.partial_sum, self.tail_bound)
        return self.partial_sum + self.tail_bound

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        d["total_bound"] = self.total_bound
        d["schema"] = SCHEMA_VERSION
        return d


def _logaddexp(a: float, b: float) -> float:
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))
