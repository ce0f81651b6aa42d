"""Tests of mean-vector equality under a common unknown covariance matrix.

The battery: exact directional test (DT), likelihood ratio test (LRT),
Bartlett-corrected LRT (BC), two higher-order adjusted statistics (Sko1,
Sko2), a standardized-statistic normal test (CLT), and Hotelling's T^2 for
two groups.  All of them consume a :class:`HomoscedasticFit`, which holds
the unrestricted and null covariance MLEs and the spectrum that controls
the directional line integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma, polygamma
from scipy.stats import chi2, f as f_dist, norm

from .core import SummaryStats, _symmetrize, chol_factor, sym_eigvalues
from .exceptions import DataError, SampleTooSmallError
from .quadrature import DirectionalIntegrand, QuadratureSettings, directional_ratio
from .results import TestResult

__all__ = [
    "HomoscedasticFit",
    "fit_homoscedastic",
    "lrt",
    "expected_w",
    "bartlett",
    "skovgaard",
    "clt_test",
    "directional_p",
    "hotelling",
]

# Spectra below this are indistinguishable from zero between-group scatter.
_DEGENERATE_EIG = 1e-12


@dataclass(frozen=True)
class HomoscedasticFit:
    """Everything the common-covariance battery needs, computed once.

    ``cov_mle`` and ``cov0_mle`` are the covariance MLEs without and with the
    equal-means restriction; ``line_eigs`` are the eigenvalues of the
    between-group scatter whitened by the null covariance factor, whose
    maximum fixes ``t_sup``, the largest line parameter for which the path
    covariance estimate stays positive definite.
    """

    stats: SummaryStats
    cov_mle: np.ndarray
    cov0_mle: np.ndarray
    logdet_cov: float
    logdet_cov0: float
    cov_chol: np.ndarray
    cov0_chol: np.ndarray
    line_eigs: np.ndarray
    nu_max: float
    t_sup: float
    det_exponent: float

    @property
    def w(self) -> float:
        """Likelihood ratio statistic n (log|cov0| - log|cov|), clipped at 0."""
        return max(self.stats.n * (self.logdet_cov0 - self.logdet_cov), 0.0)


def fit_homoscedastic(stats: SummaryStats) -> HomoscedasticFit:
    """Fit the common-covariance model under both hypotheses.

    Requires n >= p + g + 1, the condition under which the directional
    p-value is exact.  The whitened between-scatter spectrum is obtained by
    two triangular solves against the null Cholesky factor; the factor is
    never inverted explicitly.
    """
    n, p, g = stats.n, stats.p, stats.g
    if n < p + g + 1:
        raise SampleTooSmallError(
            f"common-covariance tests need n >= p + g + 1 = {p + g + 1}, got n = {n}"
        )
    cov_mle = stats.within / n
    cov0_mle = (stats.between + stats.within) / n
    cov_chol = chol_factor(cov_mle)
    cov0_chol = chol_factor(cov0_mle)
    logdet_cov = float(2.0 * np.log(np.diag(cov_chol)).sum())
    logdet_cov0 = float(2.0 * np.log(np.diag(cov0_chol)).sum())

    scaled = stats.between / n
    half = solve_triangular(cov0_chol, scaled, trans="T", lower=False)
    whitened = solve_triangular(cov0_chol, half.T, trans="T", lower=False)
    line_eigs = sym_eigvalues(_symmetrize(whitened))
    nu_max = float(line_eigs[-1])
    t_sup = 1.0 / np.sqrt(nu_max) if nu_max > _DEGENERATE_EIG else float("inf")

    return HomoscedasticFit(
        stats=stats,
        cov_mle=cov_mle,
        cov0_mle=cov0_mle,
        logdet_cov=logdet_cov,
        logdet_cov0=logdet_cov0,
        cov_chol=cov_chol,
        cov0_chol=cov0_chol,
        line_eigs=line_eigs,
        nu_max=nu_max,
        t_sup=float(t_sup),
        det_exponent=(n - p - g - 1) / 2.0,
    )


def lrt(fit: HomoscedasticFit) -> TestResult:
    """Likelihood ratio test against its chi-square reference."""
    d = fit.stats.df
    w = fit.w
    return TestResult("LRT", w, f"chi-square({d})", float(chi2.sf(w, d)))


def expected_w(n: int, p: int, g: int) -> float:
    """Exact null expectation of the likelihood ratio statistic.

    E(W) = n sum_{j=1..p} [psi((n-j)/2) - psi((n-g-j+1)/2)], from the
    product-of-Betas representation of the within/total determinant ratio.
    """
    if n < p + g:
        raise DataError(f"E(W) needs n >= p + g = {p + g}, got n = {n}")
    j = np.arange(1, p + 1)
    lower = (n - g - j + 1) / 2.0
    if lower[-1] <= 0:
        raise DataError("digamma argument out of domain")
    return float(n * np.sum(digamma((n - j) / 2.0) - digamma(lower)))


def _w_variance(n: int, p: int, g: int) -> float:
    # Var(W) from the same product-of-Betas representation, via trigammas.
    j = np.arange(1, p + 1)
    lower = (n - g - j + 1) / 2.0
    return float(n * n * np.sum(polygamma(1, lower) - polygamma(1, (n - j) / 2.0)))


def bartlett(fit: HomoscedasticFit) -> TestResult:
    """Bartlett-corrected likelihood ratio test: W rescaled to mean d."""
    st = fit.stats
    d = st.df
    ew = expected_w(st.n, st.p, st.g)
    w_bc = d * fit.w / ew
    return TestResult(
        "BC", w_bc, f"chi-square({d})", float(chi2.sf(w_bc, d)), {"expected_w": ew}
    )


def clt_test(fit: HomoscedasticFit) -> TestResult:
    """Standardized likelihood ratio statistic against the normal upper tail.

    Uses the exact null mean and variance of W; accurate when p grows with n.
    """
    st = fit.stats
    ew = expected_w(st.n, st.p, st.g)
    sd = float(np.sqrt(_w_variance(st.n, st.p, st.g)))
    z = (fit.w - ew) / sd
    return TestResult(
        "CLT", z, "normal(0,1)", float(norm.sf(z)), {"mean": ew, "sd": sd}
    )


def skovgaard(fit: HomoscedasticFit) -> tuple[TestResult, TestResult]:
    """Higher-order adjusted statistics W* and W** (tags Sko1 and Sko2).

    The correction factor is assembled from three ingredients: the inner
    product of the score step with the statistic step, tr(cov^-1 between);
    the observed-information determinant ratio, which reduces to
    (p + g + 1)(log|cov0| - log|cov|); and the quadratic form of the
    statistic step in the null-information metric, written as its two-term
    expansion (the second term is analytically zero because the weighted
    mean deviations sum to zero, and is kept for fidelity to the closed
    form).  With W = 0 the factor is undefined and both tests report
    p-value 1 with a degeneracy flag.
    """
    st = fit.stats
    d = st.df
    w = fit.w
    ref = f"chi-square({d})"
    if w <= 1e-12:
        diag = {"degenerate": "zero likelihood ratio statistic"}
        return (
            TestResult("Sko1", 0.0, ref, 1.0, diag),
            TestResult("Sko2", 0.0, ref, 1.0, diag),
        )

    def prec_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        half = solve_triangular(chol, rhs, trans="T", lower=False)
        return solve_triangular(chol, half, lower=False)

    inner = float(np.trace(prec_solve(fit.cov_chol, st.between)))

    qf = 0.0
    u = np.zeros(st.p)
    for ni, m in zip(st.sizes, st.group_means):
        dev = m - st.grand_mean
        qf += ni * float(dev @ prec_solve(fit.cov0_chol, dev))
        u += ni * dev
    prec_u = prec_solve(fit.cov0_chol, u)
    prec_grand = prec_solve(fit.cov0_chol, st.grand_mean)
    qf += (
        float(st.grand_mean @ prec_grand) * float(u @ prec_u)
        + float(u @ prec_grand) ** 2
    ) / st.n

    logdet_ratio = (st.p + st.g + 1) * (fit.logdet_cov0 - fit.logdet_cov)
    log_gamma = (
        (d / 2.0) * np.log(qf)
        - (d / 2.0 - 1.0) * np.log(w)
        - np.log(inner)
        + 0.5 * logdet_ratio
    )

    w_star = w * (1.0 - log_gamma / w) ** 2
    w_twostar = w - 2.0 * log_gamma
    diag = {"log_gamma": float(log_gamma)}
    return (
        TestResult("Sko1", float(w_star), ref, float(chi2.sf(w_star, d)), diag),
        TestResult("Sko2", float(w_twostar), ref, float(chi2.sf(w_twostar, d)), diag),
    )


def directional_p(
    fit: HomoscedasticFit, quad: QuadratureSettings | None = None
) -> TestResult:
    """Exact directional test of mean equality.

    The p-value is the ratio of two line integrals of
    t^(d-1) |cov(t)|^m along the path from the null-expected statistic to
    the observed one, where cov(t) shrinks the null covariance by t^2 times
    the scaled between-group scatter and m = (n - p - g - 1)/2.  The path
    log-determinant is the sum of log(1 - t^2 nu) over the whitened
    between-scatter spectrum, so each integrand evaluation costs O(g).

    The statistic slot carries t_sup.  Degenerate geometries short-circuit:
    no between-group variation gives p = 1, and a path already at the
    positive-definiteness boundary gives p = 0.
    """
    ref = "line-integral ratio"
    if not np.isfinite(fit.t_sup):
        return TestResult(
            "DT", fit.t_sup, ref, 1.0, {"degenerate": "no between-group variation"}
        )
    if fit.t_sup <= 1.0:
        return TestResult(
            "DT",
            fit.t_sup,
            ref,
            0.0,
            {"degenerate": "observed point at the existence boundary"},
        )

    eigs = fit.line_eigs[fit.line_eigs > _DEGENERATE_EIG * fit.nu_max]
    m = fit.det_exponent

    def log_h(t: np.ndarray) -> np.ndarray:
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        vals = m * np.log1p(-np.square(tt)[:, None] * eigs[None, :]).sum(axis=1)
        return vals if np.ndim(t) else vals[0]

    res = directional_ratio(
        DirectionalIntegrand(log_h=log_h, df=fit.stats.df, t_sup=fit.t_sup), quad
    )
    return TestResult(
        "DT",
        fit.t_sup,
        ref,
        res.pvalue,
        {"err_estimate": res.err_estimate, "converged": res.converged},
    )


def hotelling(fit: HomoscedasticFit) -> TestResult:
    """Hotelling's T^2 test for two groups, via its exact F reference."""
    st = fit.stats
    if st.g != 2:
        raise DataError(f"Hotelling's test needs exactly 2 groups, got {st.g}")
    n, p = st.n, st.p
    if n - p - 1 < 1:
        raise SampleTooSmallError(f"Hotelling's test needs n >= p + 2, got n = {n}")
    diff = st.group_means[0] - st.group_means[1]
    half = solve_triangular(fit.cov_chol, diff, trans="T", lower=False)
    # diff' S^-1 diff with S = n cov_mle / (n - 2), the pooled covariance
    quad_form = float(half @ half) * (n - 2) / n
    n1, n2 = st.sizes
    t_squared = n1 * n2 / n * quad_form
    f_stat = (n - p - 1) / (p * (n - 2)) * t_squared
    return TestResult(
        "Hotelling",
        f_stat,
        f"F({p}, {n - p - 1})",
        float(f_dist.sf(f_stat, p, n - p - 1)),
        {"t_squared": t_squared},
    )
