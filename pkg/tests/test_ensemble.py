"""Kernel and ensemble container tests."""

import math

import numpy as np
import pytest

from mlsvgd.ensemble import (ParticleEnsemble, RbfKernel, init_ensemble,
                             kernel_eval, kernel_grad1, load_ensemble,
                             save_ensemble)


class TestKernelEval:
    def test_zero_distance_is_one(self):
        k = RbfKernel(0.37)
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.standard_normal(3)
            assert kernel_eval(k, a, a) == 1.0

    def test_direct_arithmetic(self):
        k = RbfKernel(0.5)
        val = kernel_eval(k, np.array([0.0]), np.array([1.0]))
        assert val == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_matches_scalar_reevaluation(self):
        """Vector path agrees with an independent scalar evaluation."""
        k = RbfKernel(0.713)
        rng = np.random.default_rng(42)
        for _ in range(50):
            a, b = rng.standard_normal(2), rng.standard_normal(2)
            d2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
            expected = math.exp(-d2 / (2.0 * 0.713))
            assert kernel_eval(k, a, b) == pytest.approx(expected, rel=1e-14)

    def test_symmetry_exact(self):
        k = RbfKernel(1.3)
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b = rng.standard_normal(4), rng.standard_normal(4)
            assert kernel_eval(k, a, b) == kernel_eval(k, b, a)

    def test_bounds(self):
        k = RbfKernel(2.0)
        rng = np.random.default_rng(3)
        vals = [kernel_eval(k, rng.standard_normal(5), rng.standard_normal(5))
                for _ in range(200)]
        assert all(0.0 < v <= 1.0 for v in vals)

    def test_dimension_mismatch(self):
        k = RbfKernel(1.0)
        with pytest.raises(ValueError):
            kernel_eval(k, np.zeros(2), np.zeros(3))

    def test_nonpositive_bandwidth_rejected(self):
        with pytest.raises(ValueError):
            RbfKernel(0.0)


class TestKernelGrad:
    def test_zero_at_peak(self):
        k = RbfKernel(0.9)
        a = np.array([1.0, -2.0])
        assert np.all(kernel_grad1(k, a, a) == 0.0)

    def test_direct_arithmetic(self):
        k = RbfKernel(1.0)
        g = kernel_grad1(k, np.array([1.0]), np.array([0.0]))
        assert g[0] == pytest.approx(-math.exp(-0.5), rel=1e-14)

    def test_antisymmetry(self):
        k = RbfKernel(0.31)
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b = rng.standard_normal(3), rng.standard_normal(3)
            np.testing.assert_array_equal(kernel_grad1(k, a, b),
                                          -kernel_grad1(k, b, a))

    @pytest.mark.parametrize("dim", [1, 2, 9, 16])
    def test_finite_difference_agreement(self, dim):
        """Analytic gradient vs central differences, rel error <= 1e-6."""
        k = RbfKernel(0.8)
        rng = np.random.default_rng(dim)
        h = 1e-6
        for _ in range(50):
            a = rng.standard_normal(dim)
            b = a + 0.5 * rng.standard_normal(dim)
            g = kernel_grad1(k, a, b)
            fd = np.empty(dim)
            for c in range(dim):
                e = np.zeros(dim)
                e[c] = h
                fd[c] = (kernel_eval(k, a + e, b) - kernel_eval(k, a - e, b)) / (2 * h)
            denom = max(np.linalg.norm(g), 1e-12)
            assert np.linalg.norm(g - fd) / denom <= 1e-6


class TestInitEnsemble:
    def test_degenerate_covariance_collapses_to_mean(self):
        ens = init_ensemble(50, [3.0, -1.0], [1e-30, 1e-30], seed=5)
        np.testing.assert_allclose(ens.particles,
                                   np.tile([3.0, -1.0], (50, 1)), atol=1e-12)

    def test_benchmark_initial_ensemble_shape(self):
        ens = init_ensemble(1000, [1.0, 1.0], [1e-4, 1e-4], seed=1)
        assert ens.count == 1000 and ens.dim == 2
        assert abs(ens.particles.mean(axis=0) - 1.0).max() < 4 * math.sqrt(1e-4 / 1000) * 3

    def test_clt_sample_moments(self):
        """Componentwise sample-mean error within 4 sqrt(var/N)."""
        n = 100_000
        mean = np.array([2.0, -3.0])
        var = np.array([4.0, 0.25])
        ens = init_ensemble(n, mean, var, seed=99)
        err = np.abs(ens.particles.mean(axis=0) - mean)
        assert np.all(err <= 4.0 * np.sqrt(var / n))
        sample_var = ens.particles.var(axis=0, ddof=1)
        assert np.all(np.abs(sample_var - var) <= 4.0 * var * math.sqrt(2.0 / n))

    def test_seed_reproducibility_bit_identical(self):
        a = init_ensemble(200, [0.0], [1.0], seed=77)
        b = init_ensemble(200, [0.0], [1.0], seed=77)
        np.testing.assert_array_equal(a.particles, b.particles)

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError):
            init_ensemble(10, [0.0], [0.0], seed=1)

    def test_invariants(self):
        with pytest.raises(ValueError):
            ParticleEnsemble(np.array([[np.nan, 1.0]]))
        with pytest.raises(ValueError):
            ParticleEnsemble(np.empty((0, 2)))


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        ens = init_ensemble(25, [1.0, 2.0, 3.0], [0.1, 0.2, 0.3], seed=4)
        ens.level_index = 2
        ens.iteration = 123
        path = tmp_path / "ens.csv"
        save_ensemble(ens, path)
        header = path.read_text().splitlines()[0]
        assert header == "theta_1,theta_2,theta_3"
        loaded = load_ensemble(path)
        np.testing.assert_allclose(loaded.particles, ens.particles, rtol=1e-15)
        assert loaded.level_index == 2
        assert loaded.iteration == 123
        assert loaded.seed == 4
