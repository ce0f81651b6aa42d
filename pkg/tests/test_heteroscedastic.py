import numpy as np
import pytest

from dirmanova import (
    ConvergenceError,
    DataError,
    GroupedSample,
    NotPositiveDefiniteError,
    OptimizerSettings,
    SampleTooSmallError,
    behrens_fisher,
    directional_p,
    directional_p_hetero,
    fit_heteroscedastic,
    fit_homoscedastic,
    log_det_pd,
    lrt_hetero,
    profile_loglik,
    skovgaard_hetero,
    summarize,
)

# scalar instance: sizes (7, 11), means (1.0, 2.5), variance MLEs (0.8, 2.0),
# solved with an independent 1-d root finder and trapezoid integration
MU0_SCALAR = 1.5757698438815277
W_SCALAR = 6.338975543855218
Q_SCALAR = (0.2929807474929913, 0.29927859576474936)
T_SUP_SCALAR = 1.8279409884825808
LOG_GAMMA_SCALAR = 0.3399939295052484
W_STAR_SCALAR = 5.677223418884187
W_TWOSTAR_SCALAR = 5.658987684844721
DT_SCALAR = 0.014891494085756  # trapezoid with sqrt endpoint substitution, 4e6 nodes
BF_DOF_SCALAR = 15.957446808510639
BF_P_SCALAR = 0.019446718941951862

TIGHT = OptimizerSettings(grad_tol=1e-13)


def scalar_group(n, mean, var_mle, rng):
    z = rng.standard_normal(n)
    z = (z - z.mean()) / z.std()
    return (mean + np.sqrt(var_mle) * z)[:, None]


def scalar_stats():
    rng = np.random.default_rng(5)
    g1 = scalar_group(7, 1.0, 0.8, rng)
    g2 = scalar_group(11, 2.5, 2.0, rng)
    return summarize(GroupedSample(groups=(g1, g2)))


def random_stats(rng, p, g, n_extra=6, shift=0.0):
    groups = tuple(
        rng.standard_normal((p + 2 + int(rng.integers(1, n_extra)), p)) + shift
        for _ in range(g)
    )
    return summarize(GroupedSample(groups=groups))


def identical_groups_stats(p=3, n=8):
    rng = np.random.default_rng(42)
    block = rng.standard_normal((n, p))
    return summarize(GroupedSample(groups=(block, block.copy())))


class TestProfileLoglik:
    def test_gradient_zero_at_common_mean(self):
        st = identical_groups_stats()
        _, grad = profile_loglik(st.group_means[0], st)
        assert np.linalg.norm(grad) <= 1e-10

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            p = int(rng.integers(1, 21))
            st = random_stats(rng, p, int(rng.integers(2, 5)))
            mu = st.grand_mean + rng.standard_normal(p) * 0.3
            _, grad = profile_loglik(mu, st)
            fd = np.empty(p)
            h = 1e-6
            for j in range(p):
                e = np.zeros(p)
                e[j] = h
                up, _ = profile_loglik(mu + e, st)
                dn, _ = profile_loglik(mu - e, st)
                fd[j] = (up - dn) / (2 * h)
            scale = max(np.linalg.norm(grad), 1.0)
            assert np.linalg.norm(grad - fd) <= 1e-6 * scale

    def test_value_matches_direct_determinants(self):
        rng = np.random.default_rng(22)
        st = random_stats(rng, 4, 3)
        mu = st.grand_mean + 0.2
        value, _ = profile_loglik(mu, st)
        direct = 0.0
        for ni, mean, cov in zip(st.sizes, st.group_means, st.group_covs):
            delta = mean - mu
            direct -= 0.5 * ni * log_det_pd(cov + np.outer(delta, delta))
        assert value == pytest.approx(direct, rel=1e-12)

    def test_scalar_stationary_point(self):
        st = scalar_stats()
        _, grad = profile_loglik(np.array([MU0_SCALAR]), st)
        assert abs(grad[0]) <= 1e-10


class TestFit:
    def test_scalar_instance(self):
        fit = fit_heteroscedastic(scalar_stats(), TIGHT)
        assert fit.mu0[0] == pytest.approx(MU0_SCALAR, abs=1e-10)
        assert fit.w == pytest.approx(W_SCALAR, rel=1e-12)
        assert fit.maha_null == pytest.approx(np.array(Q_SCALAR), rel=1e-10)
        assert fit.t_sup == pytest.approx(T_SUP_SCALAR, rel=1e-12)
        assert fit.optimizer["converged"]

    def test_sample_too_small(self):
        rng = np.random.default_rng(23)
        groups = (rng.standard_normal((4, 3)), rng.standard_normal((9, 3)))
        with pytest.raises(SampleTooSmallError, match=r"groups \[0\]"):
            fit_heteroscedastic(summarize(GroupedSample(groups=groups)))

    def test_identical_groups(self):
        fit = fit_heteroscedastic(identical_groups_stats())
        assert np.isinf(fit.t_sup)
        assert fit.w <= 1e-10
        assert max(np.linalg.norm(d) for d in fit.deltas) <= 1e-7

    def test_first_order_condition(self):
        rng = np.random.default_rng(24)
        for _ in range(8):
            p = int(rng.integers(1, 10))
            st = random_stats(rng, p, int(rng.integers(2, 5)), shift=rng.normal())
            fit = fit_heteroscedastic(st)
            _, grad = profile_loglik(fit.mu0, st)
            scale = np.zeros(p)
            for ni, prec, mean in zip(st.sizes, fit.precisions, st.group_means):
                scale += ni * (prec @ mean)
            assert np.linalg.norm(grad) <= 1e-8 * (1.0 + np.linalg.norm(scale))

    def test_rank_one_determinant_identity(self):
        rng = np.random.default_rng(25)
        st = random_stats(rng, 5, 3, shift=0.4)
        fit = fit_heteroscedastic(st)
        for i in range(st.g):
            direct = log_det_pd(fit.null_covs[i])
            assert fit.logdet_null_covs[i] == pytest.approx(direct, abs=1e-10)

    def test_w_nonnegative_and_zero_iff_no_displacement(self):
        rng = np.random.default_rng(26)
        st = random_stats(rng, 3, 3, shift=1.0)
        fit = fit_heteroscedastic(st)
        assert fit.w > 0
        assert fit.w == pytest.approx(
            float(np.sum(np.array(st.sizes) * np.log1p(fit.maha_free))), rel=1e-14
        )

    def test_equal_covariances_mean_on_segment(self):
        rng = np.random.default_rng(27)
        base = rng.standard_normal((30, 3))
        other = base + np.array([1.0, -0.5, 0.25])  # same centered scatter
        st = summarize(GroupedSample(groups=(base, other)))
        fit = fit_heteroscedastic(st, TIGHT)
        a, b = st.group_means
        direction = b - a
        rel = fit.mu0 - a
        s = float(rel @ direction) / float(direction @ direction)
        assert 0.0 <= s <= 1.0
        off_line = rel - s * direction
        assert np.linalg.norm(off_line) <= 1e-8 * np.linalg.norm(direction)

    def test_nonconvergence_reports_best_iterate(self):
        rng = np.random.default_rng(28)
        st = random_stats(rng, 6, 3, shift=2.0)
        with pytest.raises(ConvergenceError) as exc:
            fit_heteroscedastic(st, OptimizerSettings(grad_tol=1e-30, max_iter=2))
        assert exc.value.best is not None
        assert np.isfinite(exc.value.grad_norm)


class TestLrt:
    def test_scalar_instance(self):
        fit = fit_heteroscedastic(scalar_stats(), TIGHT)
        res = lrt_hetero(fit)
        assert res.statistic == pytest.approx(W_SCALAR, rel=1e-12)
        assert res.pvalue == pytest.approx(0.011811307982041414, rel=1e-10)

    def test_identical_groups(self):
        res = lrt_hetero(fit_heteroscedastic(identical_groups_stats()))
        assert res.statistic == pytest.approx(0.0, abs=1e-10)
        assert res.pvalue == pytest.approx(1.0, abs=1e-9)


class TestSkovgaard:
    def test_scalar_instance(self):
        fit = fit_heteroscedastic(scalar_stats(), TIGHT)
        one, two = skovgaard_hetero(fit)
        assert one.diagnostics["log_gamma"] == pytest.approx(LOG_GAMMA_SCALAR, rel=1e-9)
        assert one.statistic == pytest.approx(W_STAR_SCALAR, rel=1e-10)
        assert two.statistic == pytest.approx(W_TWOSTAR_SCALAR, rel=1e-10)

    def test_degenerate(self):
        one, two = skovgaard_hetero(fit_heteroscedastic(identical_groups_stats()))
        assert one.pvalue == 1.0 and two.pvalue == 1.0
        assert "degenerate" in one.diagnostics


class TestDirectional:
    def test_scalar_instance(self):
        fit = fit_heteroscedastic(scalar_stats(), TIGHT)
        res = directional_p_hetero(fit)
        assert res.pvalue == pytest.approx(DT_SCALAR, abs=1e-8)
        assert res.diagnostics["truncated"]
        assert res.diagnostics["t_positive"] == pytest.approx(1.3010114328334783, rel=1e-8)

    def test_identical_groups(self):
        res = directional_p_hetero(fit_heteroscedastic(identical_groups_stats()))
        assert res.pvalue == 1.0 and "degenerate" in res.diagnostics

    def test_runs_on_moderate_dimension(self):
        rng = np.random.default_rng(29)
        groups = tuple(rng.standard_normal((40, 8)) for _ in range(2))
        fit = fit_heteroscedastic(summarize(GroupedSample(groups=groups)))
        res = directional_p_hetero(fit)
        assert 0.0 <= res.pvalue <= 1.0
        assert res.diagnostics["converged"]

    def test_close_to_homoscedastic_when_covariances_match(self):
        rng = np.random.default_rng(30)
        base = rng.standard_normal((120, 4))
        other = base + 0.05 * rng.standard_normal(4) / np.sqrt(120)
        st = summarize(GroupedSample(groups=(base, other)))
        hp = directional_p(fit_homoscedastic(st)).pvalue
        dp = directional_p_hetero(fit_heteroscedastic(st)).pvalue
        assert abs(hp - dp) <= 0.02


class TestAffineInvariance:
    def test_statistics_invariant(self):
        rng = np.random.default_rng(31)
        p = 3
        groups = tuple(
            rng.standard_normal((n, p)) + mu
            for n, mu in [(14, 0.0), (11, 0.4)]
        )
        sample = GroupedSample(groups=groups)
        mat = rng.standard_normal((p, p)) + 2.5 * np.eye(p)
        shift = rng.standard_normal(p) * 3
        moved = GroupedSample(groups=tuple(y @ mat.T + shift for y in sample.groups))

        st_a, st_b = summarize(sample), summarize(moved)
        fit_a = fit_heteroscedastic(st_a, TIGHT)
        fit_b = fit_heteroscedastic(st_b, TIGHT)
        assert lrt_hetero(fit_a).statistic == pytest.approx(
            lrt_hetero(fit_b).statistic, rel=1e-7
        )
        bf_a, bf_b = behrens_fisher(st_a), behrens_fisher(st_b)
        assert bf_a.diagnostics["t_star_squared"] == pytest.approx(
            bf_b.diagnostics["t_star_squared"], rel=1e-7
        )
        assert bf_a.diagnostics["dof"] == pytest.approx(
            bf_b.diagnostics["dof"], rel=1e-7
        )
        assert directional_p_hetero(fit_a).pvalue == pytest.approx(
            directional_p_hetero(fit_b).pvalue, rel=1e-7, abs=1e-9
        )


class TestBehrensFisher:
    def test_scalar_instance_matches_welch(self):
        st = scalar_stats()
        res = behrens_fisher(st)
        # scalar reduction: Welch-Satterthwaite degrees of freedom
        n1, n2 = st.sizes
        v1 = st.group_covs[0][0, 0] / (n1 - 1)
        v2 = st.group_covs[1][0, 0] / (n2 - 1)
        dof_welch = (v1 + v2) ** 2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1))
        assert res.diagnostics["dof"] == pytest.approx(dof_welch, rel=1e-12)
        assert res.diagnostics["dof"] == pytest.approx(BF_DOF_SCALAR, rel=1e-10)
        assert res.pvalue == pytest.approx(BF_P_SCALAR, rel=1e-10)

    def test_equal_means(self):
        res = behrens_fisher(identical_groups_stats())
        assert res.diagnostics["t_star_squared"] == pytest.approx(0.0, abs=1e-12)
        assert res.pvalue == pytest.approx(1.0, abs=1e-12)

    def test_needs_two_groups(self):
        rng = np.random.default_rng(32)
        st = random_stats(rng, 2, 3)
        with pytest.raises(DataError, match="2 groups"):
            behrens_fisher(st)

    def test_singular_pooled_scale(self):
        rng = np.random.default_rng(33)
        groups = []
        for ni in (6, 7):
            y = rng.standard_normal((ni, 3))
            y[:, 2] = 1.5
            groups.append(y)
        st = summarize(GroupedSample(groups=tuple(groups)))
        with pytest.raises(NotPositiveDefiniteError):
            behrens_fisher(st)
