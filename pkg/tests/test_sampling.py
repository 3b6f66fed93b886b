import numpy as np
import pytest
from scipy import stats

from carlevel.errors import NumericalError, ValidationError
from carlevel.graph import PrecisionMatrix, build_leroux_precision, path_graph
from carlevel.sampling import (BandedPrecisionFamily, CholeskyFactor, RngStream,
                               sample_gmrf, sample_inverse_gamma, sample_normal,
                               sample_uniform, slice_sample)
from carlevel.graph import laplacian
from tests.test_graph import dense_leroux, random_graph


class TestRngStream:
    def test_same_key_bit_identical(self):
        a = RngStream(123, 4).generator.standard_normal(100)
        b = RngStream(123, 4).generator.standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(123, 0).generator.standard_normal(100)
        b = RngStream(123, 1).generator.standard_normal(100)
        assert not np.array_equal(a, b)

    def test_large_seed_ok(self):
        RngStream(2**63 + 17, 2**40).generator.standard_normal()


class TestScalarSamplers:
    def test_normal_degenerate_sd(self):
        assert sample_normal(RngStream(0), 3.5, 0.0) == 3.5

    def test_normal_negative_sd_rejected(self):
        with pytest.raises(ValidationError):
            sample_normal(RngStream(0), 0.0, -1.0)

    def test_normal_moments(self):
        rng = RngStream(1)
        draws = rng.generator.standard_normal(1_000_000)
        assert abs(draws.mean()) < 0.005

    def test_uniform_moments(self):
        rng = RngStream(2)
        draws = rng.generator.uniform(0, 1, 1_000_000)
        assert abs(draws.var() - 1.0 / 12.0) < 0.002

    def test_uniform_invalid_bounds(self):
        with pytest.raises(ValidationError):
            sample_uniform(RngStream(0), 1.0, 1.0)

    def test_inverse_gamma_mean(self):
        rng = RngStream(3)
        draws = np.array([sample_inverse_gamma(rng, 3.0, 2.0) for _ in range(200_000)])
        # mean = b/(a-1) = 1
        assert abs(draws.mean() - 1.0) < 0.02

    def test_inverse_gamma_default_prior_positive(self):
        rng = RngStream(4)
        draws = [sample_inverse_gamma(rng, 1.0, 0.01) for _ in range(5000)]
        assert all(d > 0 for d in draws)

    def test_inverse_gamma_reciprocal_is_gamma(self):
        rng = RngStream(5)
        n = 200_000
        recip = 1.0 / np.array([sample_inverse_gamma(rng, 2.5, 3.0) for _ in range(n)])
        # Gamma(shape=2.5, rate=3): mean 2.5/3, var 2.5/9
        assert abs(recip.mean() - 2.5 / 3.0) < 0.01
        assert abs(recip.var() - 2.5 / 9.0) < 0.01

    def test_inverse_gamma_bad_params(self):
        with pytest.raises(ValidationError):
            sample_inverse_gamma(RngStream(0), 0.0, 1.0)
        with pytest.raises(ValidationError):
            sample_inverse_gamma(RngStream(0), 1.0, -1.0)


class TestCholeskyFactor:
    def test_factor_reconstructs_permuted_precision(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            K = int(rng.integers(2, 12))
            g = random_graph(rng, K)
            rho = float(rng.uniform(0, 0.99))
            Q = build_leroux_precision(g, rho, 1.3)
            f = CholeskyFactor.from_precision(Q)
            L = f.lower_matrix()
            Qp = Q.dense()[np.ix_(f.permutation, f.permutation)]
            rel = np.linalg.norm(L @ L.T - Qp) / np.linalg.norm(Qp)
            assert rel < 1e-8

    def test_logdet_matches_dense(self):
        rng = np.random.default_rng(12)
        g = random_graph(rng, 8)
        Q = build_leroux_precision(g, 0.7, 2.0)
        f = CholeskyFactor.from_precision(Q)
        sign, logdet = np.linalg.slogdet(Q.dense())
        assert sign > 0
        assert np.isclose(f.log_determinant(), logdet, atol=1e-9)

    def test_solve(self):
        rng = np.random.default_rng(13)
        g = random_graph(rng, 7)
        Q = build_leroux_precision(g, 0.5, 1.0)
        f = CholeskyFactor.from_precision(Q)
        b = rng.normal(size=7)
        assert np.allclose(Q.dense() @ f.solve(b), b)

    def test_non_pd_refused(self):
        from scipy import sparse
        singular = PrecisionMatrix(2, sparse.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]])),
                                   is_strictly_positive_definite=True)
        with pytest.raises(NumericalError):
            CholeskyFactor.from_precision(singular)

    def test_flagged_non_pd_refused_without_factoring(self):
        from scipy import sparse
        flagged = PrecisionMatrix(2, sparse.csr_matrix(np.eye(2)),
                                  is_strictly_positive_definite=False)
        with pytest.raises(NumericalError):
            CholeskyFactor.from_precision(flagged)


class TestBandedPrecisionFamily:
    def test_logdet_over_rho_grid(self):
        rng = np.random.default_rng(14)
        for _ in range(5):
            g = random_graph(rng, 9)
            fam = BandedPrecisionFamily(laplacian(g).matrix)
            for rho in (0.0, 0.25, 0.9, 0.999):
                dense = dense_leroux(g, rho, 1.0)
                _, expected = np.linalg.slogdet(dense)
                assert np.isclose(fam.log_determinant(rho), expected, atol=1e-9)


class TestSampleGmrf:
    def test_identity_precision_standard_normal(self):
        rng = RngStream(20)
        Q = build_leroux_precision(path_graph(5), 0.0, 1.0)
        f = CholeskyFactor.from_precision(Q)
        draws = np.array([sample_gmrf(rng, f, np.zeros(5)) for _ in range(100_000)])
        assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.02)
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)

    def test_diagonal_exact_distribution(self):
        from scipy import sparse
        rng = RngStream(21)
        Q = PrecisionMatrix(1, sparse.csr_matrix(np.array([[4.0]])))
        f = CholeskyFactor.from_precision(Q)
        draws = np.array([sample_gmrf(rng, f, np.array([8.0]))[0] for _ in range(100_000)])
        # N(Q^{-1} b, Q^{-1}) = N(2, 0.25)
        assert abs(draws.mean() - 2.0) < 0.01
        assert abs(draws.var() - 0.25) < 0.005

    def test_path5_leroux_covariance_calibration(self):
        rng = RngStream(22)
        g = path_graph(5)
        Q = build_leroux_precision(g, 0.6, 2.0)
        f = CholeskyFactor.from_precision(Q)
        draws = np.array([sample_gmrf(rng, f, np.zeros(5)) for _ in range(100_000)])
        emp = np.cov(draws.T)
        target = np.linalg.inv(dense_leroux(g, 0.6, 2.0))
        rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
        assert rel < 0.05

    def test_marginal_variances_random_graphs(self):
        rng_graphs = np.random.default_rng(23)
        for trial in range(4):
            K = int(rng_graphs.integers(2, 9))
            g = random_graph(rng_graphs, K)
            rho = float(rng_graphs.uniform(0, 0.95))
            Q = build_leroux_precision(g, rho, 1.0)
            f = CholeskyFactor.from_precision(Q)
            rng = RngStream(100 + trial)
            draws = np.array([sample_gmrf(rng, f, np.zeros(K)) for _ in range(40_000)])
            target = np.diag(np.linalg.inv(dense_leroux(g, rho, 1.0)))
            assert np.all(np.abs(draws.var(axis=0) / target - 1.0) < 0.06)

    def test_dimension_mismatch(self):
        Q = build_leroux_precision(path_graph(3), 0.0, 1.0)
        with pytest.raises(ValidationError):
            sample_gmrf(RngStream(0), Q, np.zeros(4))


class TestSliceSample:
    def test_uniform_target_ks(self):
        rng = RngStream(30)
        x = 0.5
        samples = np.empty(100_000)
        for i in range(samples.size):
            x = slice_sample(rng, lambda v: 0.0, x, 0.0, 1.0)
            samples[i] = x
        stat, pvalue = stats.kstest(samples, "uniform")
        assert pvalue > 0.01

    def test_peaked_target_stays_in_mode_region(self):
        rng = RngStream(31)
        peak = lambda v: -0.5 * ((v - 0.5) / 0.001) ** 2
        x = 0.5
        for _ in range(500):
            x = slice_sample(rng, peak, x, 0.0, 1.0)
            assert abs(x - 0.5) < 0.01

    def test_truncated_normal_matches_rejection_oracle(self):
        mu, sd = 0.3, 0.4
        logf = lambda v: -0.5 * ((v - mu) / sd) ** 2
        rng = RngStream(32)
        x = 0.5
        n = 100_000
        samples = np.empty(n)
        for i in range(n):
            x = slice_sample(rng, logf, x, 0.0, 1.0)
            samples[i] = x
        # independent rejection sampler for the same truncated normal
        oracle_rng = np.random.default_rng(99)
        pool = oracle_rng.normal(mu, sd, size=4 * n)
        oracle = pool[(pool > 0.0) & (pool < 1.0)][:n]
        assert abs(samples.mean() - oracle.mean()) < 0.02 * max(1.0, abs(oracle.mean()))
        assert abs(samples.var() - oracle.var()) < 0.02 * oracle.var()

    def test_result_strictly_inside(self):
        rng = RngStream(33)
        for _ in range(200):
            x = slice_sample(rng, lambda v: 0.0, 0.5, 0.0, 1.0)
            assert 0.0 < x < 1.0

    def test_nan_density_raises(self):
        with pytest.raises(NumericalError):
            slice_sample(RngStream(0), lambda v: float("nan"), 0.5, 0.0, 1.0)

    def test_current_outside_bounds_raises(self):
        with pytest.raises(ValidationError):
            slice_sample(RngStream(0), lambda v: 0.0, 1.5, 0.0, 1.0)

    def test_detailed_balance_three_targets(self):
        # long-run moments against quadrature for three analytic targets
        targets = [
            ("uniform", lambda v: 0.0),
            ("trunc_normal", lambda v: -0.5 * ((v - 0.7) / 0.2) ** 2),
            ("beta22", lambda v: np.log(v) + np.log1p(-v)),
        ]
        grid = np.linspace(1e-6, 1 - 1e-6, 20_001)
        for idx, (name, logf) in enumerate(targets):
            dens = np.exp([logf(v) for v in grid])
            dens /= np.trapezoid(dens, grid)
            m1 = np.trapezoid(grid * dens, grid)
            m2 = np.trapezoid(grid**2 * dens, grid)
            rng = RngStream(40 + idx)
            x = 0.5
            n = 100_000
            total = 0.0
            total2 = 0.0
            for _ in range(n):
                x = slice_sample(rng, logf, x, 0.0, 1.0)
                total += x
                total2 += x * x
            assert abs(total / n - m1) < 0.01, name
            assert abs(total2 / n - m2) < 0.01, name
