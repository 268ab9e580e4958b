import numpy as np
import pytest
from hypothesis import given, strategies as st

from svsl.distributions import Categorical, Gaussian, LinCondGaussian
from svsl.errors import DimensionMismatchError, NotPositiveDefiniteError

LOG_2PI = np.log(2.0 * np.pi)


def random_gaussian(rng, d):
    a = rng.normal(size=(d, d))
    return Gaussian.from_cov(rng.normal(size=d), a @ a.T + 0.5 * np.eye(d))


class TestGaussianLogDensity:
    def test_standard_normal_at_mode(self):
        g = Gaussian.from_cov([0.0], [[1.0]])
        assert g.log_density(np.zeros(1)) == pytest.approx(-0.5 * LOG_2PI, abs=1e-12)

    def test_standard_normal_2d(self):
        g = Gaussian.from_cov(np.zeros(2), np.eye(2))
        assert g.log_density(np.ones(2)) == pytest.approx(-LOG_2PI - 1.0, abs=1e-12)

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            g = random_gaussian(rng, 3)
            x = rng.normal(size=3)
            cov = g.cov
            diff = x - g.mean
            oracle = -0.5 * (
                3 * LOG_2PI + np.log(np.linalg.det(cov)) + diff @ np.linalg.inv(cov) @ diff
            )
            assert g.log_density(x) == pytest.approx(oracle, abs=1e-9)

    def test_dimension_mismatch(self):
        g = Gaussian.from_cov(np.zeros(2), np.eye(2))
        with pytest.raises(DimensionMismatchError):
            g.log_density(np.zeros(3))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        g = random_gaussian(rng, 2)
        pts = rng.normal(size=(5, 2))
        batch = g.log_density(pts)
        for i in range(5):
            assert batch[i] == pytest.approx(g.log_density(pts[i]), abs=1e-12)


class TestGaussianEntropy:
    def test_identity_2d(self):
        g = Gaussian.from_cov(np.zeros(2), np.eye(2))
        assert g.entropy() == pytest.approx(1.0 + LOG_2PI, abs=1e-12)

    def test_scalar_variance_4(self):
        g = Gaussian.from_cov([0.0], [[4.0]])
        assert g.entropy() == pytest.approx(0.5 * (1.0 + LOG_2PI + np.log(4.0)), abs=1e-12)

    def test_matches_determinant_oracle(self):
        rng = np.random.default_rng(11)
        g = random_gaussian(rng, 4)
        oracle = 0.5 * np.log((2.0 * np.pi * np.e) ** 4 * np.linalg.det(g.cov))
        assert g.entropy() == pytest.approx(oracle, abs=1e-9)

    def test_entropy_matches_mc_negative_log_density(self):
        rng = np.random.default_rng(5)
        g = random_gaussian(rng, 3)
        xs = g.sample(rng, size=100_000)
        vals = -g.log_density(xs)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - g.entropy()) < 3 * se


class TestGaussianKL:
    def test_identical_is_zero(self):
        g = Gaussian.from_cov(np.zeros(2), np.eye(2))
        assert g.kl(g) == pytest.approx(0.0, abs=1e-14)

    def test_unit_mean_shift(self):
        p = Gaussian.from_cov([1.0], [[1.0]])
        q = Gaussian.from_cov([0.0], [[1.0]])
        assert p.kl(q) == pytest.approx(0.5, abs=1e-12)

    def test_matches_grid_quadrature_1d(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            p = Gaussian.from_cov([rng.normal()], [[0.3 + rng.random()]])
            q = Gaussian.from_cov([rng.normal()], [[0.3 + rng.random()]])
            lo = min(p.mean[0], q.mean[0]) - 12 * max(p.chol[0, 0], q.chol[0, 0])
            hi = max(p.mean[0], q.mean[0]) + 12 * max(p.chol[0, 0], q.chol[0, 0])
            xs = np.linspace(lo, hi, 200_001)[:, None]
            lp = p.log_density(xs)
            integrand = np.exp(lp) * (lp - q.log_density(xs))
            oracle = np.trapezoid(integrand, xs[:, 0])
            assert p.kl(q) == pytest.approx(oracle, abs=1e-4)

    def test_nonnegative_and_self_small(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            d = int(rng.integers(1, 5))
            p, q = random_gaussian(rng, d), random_gaussian(rng, d)
            assert p.kl(q) >= 0.0
            assert p.kl(p) <= 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            Gaussian.from_cov([0.0], [[1.0]]).kl(Gaussian.from_cov(np.zeros(2), np.eye(2)))


class TestLinCondGaussian:
    def test_zero_gain_is_constant(self):
        lc = LinCondGaussian.from_cov(np.zeros((2, 3)), [1.0, -1.0], np.eye(2))
        for c in (np.zeros(3), np.ones(3), np.array([5.0, -2.0, 0.1])):
            np.testing.assert_allclose(lc.condition(c).mean, [1.0, -1.0])

    def test_identity_gain(self):
        lc = LinCondGaussian.from_cov(np.eye(2), np.zeros(2), np.eye(2))
        np.testing.assert_allclose(lc.condition(np.array([2.0, 3.0])).mean, [2.0, 3.0])

    def test_matches_matvec_oracle(self):
        rng = np.random.default_rng(19)
        gain = rng.normal(size=(3, 2))
        bias = rng.normal(size=3)
        lc = LinCondGaussian.from_cov(gain, bias, np.eye(3))
        c = rng.normal(size=2)
        np.testing.assert_allclose(lc.condition(c).mean, gain @ c + bias, atol=1e-14)

    def test_affine_midpoint(self):
        rng = np.random.default_rng(23)
        lc = LinCondGaussian.from_cov(rng.normal(size=(2, 2)), rng.normal(size=2), np.eye(2))
        c1, c2 = rng.normal(size=2), rng.normal(size=2)
        mid = lc.condition(0.5 * (c1 + c2)).mean
        avg = 0.5 * (lc.condition(c1).mean + lc.condition(c2).mean)
        np.testing.assert_allclose(mid, avg, atol=1e-12)

    def test_conditional_covariance_shared(self):
        lc = LinCondGaussian.from_cov(np.eye(2), np.zeros(2), 2.0 * np.eye(2))
        np.testing.assert_allclose(lc.condition(np.ones(2)).cov, 2.0 * np.eye(2))

    def test_dimension_mismatch(self):
        lc = LinCondGaussian.from_cov(np.eye(2), np.zeros(2), np.eye(2))
        with pytest.raises(DimensionMismatchError):
            lc.condition(np.zeros(3))


class TestCategorical:
    def test_uniform_entropy(self):
        assert Categorical.uniform(4).entropy() == pytest.approx(np.log(4.0), abs=1e-12)

    def test_one_hot_entropy(self):
        assert Categorical([1.0, 0.0, 0.0]).entropy() == 0.0

    def test_direct_summation_oracle(self):
        w = np.array([0.7, 0.3])
        oracle = -np.sum(w * np.log(w))
        assert Categorical(w).entropy() == pytest.approx(oracle, abs=1e-12)
        assert Categorical(w).entropy() == pytest.approx(0.6108643, abs=1e-7)

    def test_tiny_entries_clamped(self):
        c = Categorical([1.0 - 1e-16, 1e-16, 0.0])
        assert c.probs[1] == 0.0
        assert np.isfinite(c.entropy())

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            Categorical([0.5, -0.5, 1.0])

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=12))
    def test_entropy_bounds(self, raw):
        w = np.asarray(raw) / np.sum(raw)
        ent = Categorical(w).entropy()
        assert -1e-12 <= ent <= np.log(len(raw)) + 1e-12


class TestSampling:
    def test_degenerate_gaussian_sample_near_mean(self):
        g = Gaussian(np.array([3.0, -1.0]), 1e-12 * np.eye(2))
        x = g.sample(np.random.default_rng(0))
        np.testing.assert_allclose(x, g.mean, atol=1e-9)

    def test_one_hot_categorical(self):
        c = Categorical([0.0, 1.0, 0.0])
        rng = np.random.default_rng(1)
        assert all(c.sample(rng) == 1 for _ in range(50))

    def test_law_of_large_numbers(self):
        g = Gaussian.from_cov([0.0], [[1.0]])
        xs = g.sample(np.random.default_rng(2), size=100_000)[:, 0]
        assert abs(xs.mean()) < 4.0 / np.sqrt(100_000)
        assert abs(xs.var() - 1.0) < 0.05

    def test_bit_identical_given_seed(self):
        g = Gaussian.from_cov(np.zeros(3), np.diag([1.0, 2.0, 0.5]))
        a = g.sample(np.random.default_rng(42), size=10)
        b = g.sample(np.random.default_rng(42), size=10)
        assert np.array_equal(a, b)
        c = Categorical([0.3, 0.7])
        assert np.array_equal(
            c.sample(np.random.default_rng(9), size=100),
            c.sample(np.random.default_rng(9), size=100),
        )


class TestValidation:
    def test_non_positive_definite_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            Gaussian.from_cov(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_negative_diagonal_factor_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            Gaussian(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_asymmetric_cov_symmetrized(self):
        cov = np.array([[1.0, 0.1 + 1e-12], [0.1, 1.0]])
        g = Gaussian.from_cov(np.zeros(2), cov)
        np.testing.assert_allclose(g.cov, g.cov.T)
