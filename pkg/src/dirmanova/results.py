"""Common result container for every test in the battery."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class TestResult:
    """Outcome of a single hypothesis test.

    ``method`` is one of the battery tags (DT, CLT, LRT, BC, Sko1, Sko2,
    Hotelling, BF).  ``reference`` describes the reference distribution the
    p-value was computed from.  ``diagnostics`` carries numerical context
    such as quadrature error estimates or degeneracy flags; it never affects
    the p-value.
    """

    method: str
    statistic: float
    reference: str
    pvalue: float
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def rejects(self, alpha: float) -> bool:
        return self.pvalue <= alpha


def format_pvalue(p: float) -> str:
    """Render a p-value with 6 significant digits, scientific below 1e-4."""
    if p != 0.0 and abs(p) < 1e-4:
        return f"{p:.5e}"
    return f"{p:.6g}"
