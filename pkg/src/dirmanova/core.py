"""Grouped-sample summaries and dense positive-definite linear algebra.

Everything downstream consumes :class:`SummaryStats`; the raw observations
are only touched here.  Scatter matrices are accumulated in centered form
(group means subtracted first) to avoid cancellation when the means are far
from the origin, and symmetrized after accumulation so that the eigensolvers
see exactly symmetric input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .exceptions import DataError, NotPositiveDefiniteError, NumericalError

__all__ = [
    "GroupedSample",
    "SummaryStats",
    "summarize",
    "chol_factor",
    "log_det_pd",
    "max_eig_sym",
]


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


@dataclass(frozen=True)
class GroupedSample:
    """Observations partitioned into g groups of p-vectors.

    ``groups[i]`` is an ``n_i x p`` array whose rows are observations.
    Construction validates shapes and finiteness; every group must have at
    least two rows so that a within-group covariance exists.
    """

    groups: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.groups) < 2:
            raise DataError(f"need at least 2 groups, got {len(self.groups)}")
        mats = []
        p = None
        for i, raw in enumerate(self.groups):
            arr = np.asarray(raw, dtype=float)
            if arr.ndim != 2:
                raise DataError(f"group {i}: expected a 2-d array, got ndim={arr.ndim}")
            if arr.shape[1] < 1:
                raise DataError(f"group {i}: observations must have at least 1 coordinate")
            if arr.shape[0] < 2:
                raise DataError(f"group {i}: has {arr.shape[0]} observations, need at least 2")
            if p is None:
                p = arr.shape[1]
            elif arr.shape[1] != p:
                raise DataError(
                    f"group {i}: dimension mismatch, has {arr.shape[1]} columns, expected {p}"
                )
            if not np.isfinite(arr).all():
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise DataError(
                    f"group {i}: non-finite value at row {bad[0]}, column {bad[1]}"
                )
            mats.append(arr)
        object.__setattr__(self, "groups", tuple(mats))

    @property
    def g(self) -> int:
        return len(self.groups)

    @property
    def p(self) -> int:
        return self.groups[0].shape[1]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(y.shape[0] for y in self.groups)

    @property
    def n(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class SummaryStats:
    """Sufficient summaries of a grouped sample.

    ``between`` is the scatter of the group means about the grand mean
    (weighted by group size), ``within`` the pooled residual scatter, and
    ``group_covs[i]`` the per-group covariance MLE (``n_i`` denominator).
    ``between + within`` equals the total scatter about the grand mean.
    """

    group_means: tuple[np.ndarray, ...]
    grand_mean: np.ndarray
    between: np.ndarray
    within: np.ndarray
    group_covs: tuple[np.ndarray, ...]
    sizes: tuple[int, ...]
    n: int
    p: int
    g: int

    @property
    def df(self) -> int:
        """Degrees of freedom of the mean-equality hypothesis, p (g - 1)."""
        return self.p * (self.g - 1)


def summarize(sample: GroupedSample) -> SummaryStats:
    """Compute means, between/within scatter and per-group covariance MLEs."""
    p = sample.p
    sizes = sample.sizes
    n = sample.n
    means = [y.mean(axis=0) for y in sample.groups]
    grand = np.zeros(p)
    for ni, m in zip(sizes, means):
        grand += ni * m
    grand /= n

    between = np.zeros((p, p))
    for ni, m in zip(sizes, means):
        dev = m - grand
        between += ni * np.outer(dev, dev)
    between = _symmetrize(between)

    within = np.zeros((p, p))
    covs = []
    for y, m, ni in zip(sample.groups, means, sizes):
        centered = y - m
        scatter = centered.T @ centered
        within += scatter
        covs.append(_symmetrize(scatter / ni))
    within = _symmetrize(within)

    return SummaryStats(
        group_means=tuple(means),
        grand_mean=grand,
        between=between,
        within=within,
        group_covs=tuple(covs),
        sizes=sizes,
        n=n,
        p=p,
        g=sample.g,
    )


def chol_factor(m: np.ndarray) -> np.ndarray:
    """Upper-triangular R with R'R = m, for symmetric positive definite m.

    Only the upper triangle of ``m`` is read.  Raises
    :class:`NotPositiveDefiniteError` carrying the index of the first
    non-positive leading minor, which for scatter matrices signals a
    violated sample-size condition.
    """
    a = np.ascontiguousarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"expected a square matrix, got shape {a.shape}")
    c, info = lapack.dpotrf(a, lower=0, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (leading minor {info} of order "
            f"{a.shape[0]}); the sample may be too small for this method",
            minor=int(info),
        )
    if info < 0:
        raise NumericalError(f"Cholesky factorization: illegal argument {-info}")
    return np.triu(c)


def log_det_pd(m: np.ndarray) -> float:
    """log-determinant of a symmetric positive definite matrix."""
    r = chol_factor(m)
    return float(2.0 * np.log(np.diag(r)).sum())


def sym_eigvalues(m: np.ndarray) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"expected a square matrix, got shape {a.shape}")
    try:
        return np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"symmetric eigensolver did not converge on a "
            f"{a.shape[0]}x{a.shape[0]} matrix: {exc}"
        ) from exc


def max_eig_sym(m: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    return float(sym_eigvalues(m)[-1])
