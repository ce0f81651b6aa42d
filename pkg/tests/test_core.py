import numpy as np
import pytest

from dirmanova import (
    DataError,
    GroupedSample,
    NotPositiveDefiniteError,
    chol_factor,
    log_det_pd,
    max_eig_sym,
    summarize,
)


def sample_hand():
    return GroupedSample(groups=(np.array([[0.0], [2.0]]), np.array([[4.0], [6.0]])))


class TestGroupedSample:
    def test_shapes(self):
        s = sample_hand()
        assert s.g == 2 and s.p == 1 and s.n == 4 and s.sizes == (2, 2)

    def test_needs_two_groups(self):
        with pytest.raises(DataError, match="at least 2 groups"):
            GroupedSample(groups=(np.zeros((3, 2)),))

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="dimension mismatch"):
            GroupedSample(groups=(np.zeros((3, 2)), np.zeros((3, 3))))

    def test_group_too_small(self):
        with pytest.raises(DataError, match="at least 2"):
            GroupedSample(groups=(np.zeros((1, 2)), np.zeros((3, 2))))

    def test_non_finite(self):
        bad = np.array([[1.0, 2.0], [np.nan, 0.0]])
        with pytest.raises(DataError, match="non-finite"):
            GroupedSample(groups=(bad, np.zeros((2, 2))))


class TestSummarize:
    def test_hand_example(self):
        st = summarize(sample_hand())
        assert st.group_means[0] == pytest.approx([1.0])
        assert st.group_means[1] == pytest.approx([5.0])
        assert st.grand_mean == pytest.approx([3.0])
        assert st.between == pytest.approx(np.array([[16.0]]))
        assert st.within == pytest.approx(np.array([[4.0]]))
        assert st.df == 1

    def test_identical_groups_zero_between(self):
        block = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]])
        st = summarize(GroupedSample(groups=(block, block.copy(), block.copy())))
        assert np.all(st.between == 0.0)

    def test_pottery_shape_counts(self):
        rng = np.random.default_rng(0)
        groups = tuple(rng.standard_normal((ni, 5)) for ni in (5, 2, 5, 14))
        st = summarize(GroupedSample(groups=groups))
        assert st.n == 26 and st.p == 5 and st.g == 4
        assert st.df == 15

    def test_total_scatter_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            p = rng.integers(1, 8)
            groups = tuple(
                rng.standard_normal((int(rng.integers(3, 12)), p)) + rng.normal(scale=50)
                for _ in range(int(rng.integers(2, 5)))
            )
            sample = GroupedSample(groups=groups)
            st = summarize(sample)
            pooled = np.vstack(sample.groups)
            total = (pooled - st.grand_mean).T @ (pooled - st.grand_mean)
            scale = max(np.linalg.norm(total), 1.0)
            assert np.linalg.norm(st.between + st.within - total) <= 1e-10 * scale

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        groups = [rng.standard_normal((9, 4)), rng.standard_normal((7, 4))]
        st = summarize(GroupedSample(groups=tuple(groups)))
        shuffled = [g[rng.permutation(len(g))] for g in groups]
        st2 = summarize(GroupedSample(groups=tuple(shuffled)))
        for a, b in [
            (st.between, st2.between),
            (st.within, st2.within),
            (st.grand_mean, st2.grand_mean),
        ]:
            assert np.allclose(a, b, rtol=0, atol=1e-12 * max(1, np.abs(a).max()))

    def test_group_cov_mle(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal((11, 3))
        st = summarize(GroupedSample(groups=(y, rng.standard_normal((5, 3)))))
        expected = np.cov(y, rowvar=False, ddof=0)
        assert st.group_covs[0] == pytest.approx(expected)


class TestCholFactor:
    def test_identity(self):
        assert chol_factor(np.eye(4)) == pytest.approx(np.eye(4))

    def test_scalar(self):
        assert chol_factor(np.array([[5.0]])) == pytest.approx(np.array([[np.sqrt(5.0)]]))

    def test_two_by_two(self):
        r = chol_factor(np.array([[4.0, 2.0], [2.0, 3.0]]))
        assert r == pytest.approx(np.array([[2.0, 1.0], [0.0, np.sqrt(2.0)]]))

    def test_reconstruction_large(self):
        rng = np.random.default_rng(4)
        for p in (1, 7, 60, 300):
            a = rng.standard_normal((p, p + 4))
            m = a @ a.T
            r = chol_factor(m)
            assert np.triu(r) == pytest.approx(r)
            err = np.linalg.norm(r.T @ r - m)
            assert err <= 1e-12 * np.linalg.norm(m)

    def test_not_pd_reports_minor(self):
        with pytest.raises(NotPositiveDefiniteError) as exc:
            chol_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert exc.value.minor == 2
        with pytest.raises(NotPositiveDefiniteError) as exc:
            chol_factor(np.zeros((3, 3)))
        assert exc.value.minor == 1

    def test_not_square(self):
        with pytest.raises(DataError, match="square"):
            chol_factor(np.zeros((2, 3)))


class TestLogDet:
    def test_identity(self):
        assert log_det_pd(np.eye(5)) == 0.0

    def test_scalar(self):
        assert log_det_pd(np.array([[5.0]])) == pytest.approx(np.log(5.0), abs=1e-14)

    def test_diagonal(self):
        assert log_det_pd(np.diag([2.0, 3.0])) == pytest.approx(np.log(6.0), abs=1e-14)

    def test_matches_eigenvalues(self):
        rng = np.random.default_rng(5)
        for p in (2, 10, 40):
            a = rng.standard_normal((p, p + 2))
            m = a @ a.T
            expected = np.log(np.linalg.eigvalsh(m)).sum()
            assert log_det_pd(m) == pytest.approx(expected, rel=1e-9)

    def test_propagates_not_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            log_det_pd(np.diag([1.0, -1.0]))


class TestMaxEig:
    def test_diagonal(self):
        assert max_eig_sym(np.diag([1.0, 7.0, 3.0])) == pytest.approx(7.0)

    def test_scalar(self):
        assert max_eig_sym(np.array([[0.8]])) == pytest.approx(0.8)

    def test_rank_one(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal(9)
        top = max_eig_sym(np.outer(v, v))
        assert top == pytest.approx(v @ v, rel=1e-10)
