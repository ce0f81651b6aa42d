"""Stable evaluation of the ratio of line integrals behind a directional p-value.

The p-value is ``int_1^T w(t) dt / int_0^T w(t) dt`` with weight
``w(t) = t^(d-1) h(t)`` supplied through its logarithm.  The integrand is
normalized in log space (the maximum over a probe grid is subtracted before
exponentiating) so that determinant powers with exponents in the hundreds
neither overflow nor underflow.  The two pieces [0, 1] and [1, T] are
integrated separately so numerator and denominator share the nodes on
[1, T], which is where the ratio's accuracy is decided.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .exceptions import DataError, QuadratureError

__all__ = [
    "QuadratureSettings",
    "DirectionalIntegrand",
    "RatioResult",
    "directional_ratio",
]

_PROBE_POINTS = 256


@dataclass(frozen=True)
class QuadratureSettings:
    """Tolerances and limits for the adaptive integration."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 200
    # Fraction of t_sup at which to truncate the upper limit; None keeps t_sup.
    upper_clip: float | None = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise DataError("quadrature tolerances must be positive")
        if self.max_subdivisions < 10:
            raise DataError("max_subdivisions must be at least 10")
        if self.upper_clip is not None and not (0 < self.upper_clip <= 1):
            raise DataError("upper_clip must lie in (0, 1]")


@dataclass(frozen=True)
class DirectionalIntegrand:
    """Log-integrand of a directional test along the line parameter t.

    ``log_h`` maps t (scalar or array) to log h(s(t)) and must be finite on
    [0, t_sup).  ``df`` is the exponent d of the radial weight t^(d-1).
    """

    log_h: Callable[[np.ndarray], np.ndarray]
    df: int
    t_sup: float

    def __post_init__(self):
        if self.df < 1:
            raise DataError("weight exponent df must be at least 1")


@dataclass(frozen=True)
class RatioResult:
    pvalue: float
    err_estimate: float
    converged: bool
    detail: str = ""


def _probe_grid(t_hi: float) -> np.ndarray:
    """Probe nodes on (0, t_hi) with geometric clustering toward t_hi.

    The integrand's peak can sit anywhere between 0 and t_hi and the
    (1 - t^2 q) factors vanish at the upper end, so half the nodes cover the
    interval uniformly and half crowd the boundary.
    """
    k = _PROBE_POINTS // 2
    body = np.linspace(0.0, t_hi, k, endpoint=False)[1:]
    tail = t_hi * (1.0 - np.geomspace(1e-9, 0.5, _PROBE_POINTS - k))
    grid = np.unique(np.concatenate([body, tail, [1.0 if t_hi > 1 else t_hi / 2]]))
    return grid[(grid > 0) & (grid < t_hi)]


def _log_weight(f: DirectionalIntegrand, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    vals = np.asarray(f.log_h(t), dtype=float)
    if f.df > 1:
        with np.errstate(divide="ignore"):
            vals = vals + (f.df - 1) * np.log(t)
    return vals


def directional_ratio(
    f: DirectionalIntegrand, settings: QuadratureSettings | None = None
) -> RatioResult:
    """Ratio of the [1, T] integral to the [0, T] integral of t^(d-1) h(t).

    T is ``t_sup`` (optionally clipped).  Requires T > 1; callers resolve
    the degenerate geometries (T <= 1 or T infinite) before getting here.
    Adaptive Gauss-Kronrod is used on each piece; when the subdivision cap
    is hit the best estimate is returned with ``converged=False``.
    """
    settings = settings or QuadratureSettings()
    if not np.isfinite(f.t_sup):
        raise DataError("t_sup must be finite; degenerate cases belong to the caller")
    t_hi = f.t_sup if settings.upper_clip is None else settings.upper_clip * f.t_sup
    if t_hi <= 1.0:
        return RatioResult(0.0, 0.0, True, "empty numerator interval")

    grid = _probe_grid(t_hi)
    log_vals = _log_weight(f, grid)
    if np.isnan(log_vals).any():
        t_bad = grid[int(np.argmax(np.isnan(log_vals)))]
        raise QuadratureError(f"log-integrand returned NaN at t={t_bad!r}")
    shift = float(np.max(log_vals))
    if not np.isfinite(shift):
        raise QuadratureError("log-integrand is -inf on the whole probe grid")

    def integrand(t: float) -> float:
        val = float(_log_weight(f, np.asarray([t]))[0])
        if np.isnan(val):
            raise QuadratureError(f"log-integrand returned NaN at t={t!r}")
        return float(np.exp(val - shift))

    def piece(a: float, b: float) -> tuple[float, float, bool, str]:
        interior = grid[(grid > a) & (grid < b)]
        peaks = None
        if interior.size:
            peaks = [float(interior[int(np.argmax(_log_weight(f, interior)))])]
        out = quad(
            integrand,
            a,
            b,
            epsabs=settings.abs_tol,
            epsrel=settings.rel_tol,
            limit=settings.max_subdivisions,
            points=peaks,
            full_output=1,
        )
        value, err = float(out[0]), float(out[1])
        ok = len(out) < 4
        return value, err, ok, "" if ok else str(out[3])

    lower, err_lower, ok_lower, msg_lower = piece(0.0, 1.0)
    upper, err_upper, ok_upper, msg_upper = piece(1.0, t_hi)

    denom = lower + upper
    if denom <= 0.0:
        raise QuadratureError("normalizing integral vanished after log-space shift")
    pvalue = min(max(upper / denom, 0.0), 1.0)
    err = (err_upper * lower + err_lower * upper) / denom**2
    converged = ok_lower and ok_upper
    detail = "; ".join(m for m in (msg_lower, msg_upper) if m)
    return RatioResult(pvalue=pvalue, err_estimate=float(err), converged=converged, detail=detail)
