"""Single-level update, gradient-norm estimator, and run-loop tests.

The naive reference implementation below recomputes the update with
explicit triple loops over particles and kernel terms; the production
path must agree to near machine precision.
"""

import numpy as np
import pytest

from mlsvgd.ensemble import ParticleEnsemble, RbfKernel, init_ensemble, kernel_eval, kernel_grad1
from mlsvgd.svgd import (SvgdConfig, SvgdRunError, gradient_norm_estimate,
                         run_single_level, svgd_step)
from mlsvgd.targets import GaussianTargetLevel, ZeroScoreTarget


def naive_update_directions(particles, kernel, scores):
    """Brute-force per-particle update directions, including the 1/N."""
    n, d = particles.shape
    out = np.zeros((n, d))
    for i in range(n):
        acc = np.zeros(d)
        for j in range(n):
            acc += kernel_grad1(kernel, particles[j], particles[i])
            acc += kernel_eval(kernel, particles[j], particles[i]) * scores[j]
        out[i] = acc / n
    return out


class TestSvgdStep:
    def test_zero_step_is_identity(self):
        ens = init_ensemble(10, [0.0, 0.0], [1.0, 1.0], seed=0)
        scores = np.random.default_rng(1).standard_normal((10, 2))
        out = svgd_step(ens, RbfKernel(1.0), scores, 0.0)
        np.testing.assert_array_equal(out.particles, ens.particles)
        assert out.iteration == ens.iteration + 1

    def test_single_particle_reduces_to_gradient_ascent(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            theta = rng.standard_normal(3)
            target = GaussianTargetLevel(rng.standard_normal(3),
                                         rng.uniform(0.5, 2.0, 3))
            ens = ParticleEnsemble(theta[None, :])
            s = target.score(theta)[None, :]
            out = svgd_step(ens, RbfKernel(0.7), s, 0.05)
            np.testing.assert_allclose(out.particles[0], theta + 0.05 * s[0],
                                       rtol=0, atol=1e-15)

    def test_two_particle_mirror_symmetry(self):
        """Symmetric pair around a symmetric target stays a mirror pair."""
        a = 0.8
        ens = ParticleEnsemble(np.array([[-a], [a]]))
        target = GaussianTargetLevel([0.0], [1.0])
        scores = target.score_batch(ens.particles)
        out = svgd_step(ens, RbfKernel(1.0), scores, 0.1)
        assert out.particles[0, 0] == pytest.approx(-out.particles[1, 0], abs=1e-15)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(3)
        kernel = RbfKernel(0.6)
        for _ in range(10):
            particles = rng.standard_normal((3, 2))
            target = GaussianTargetLevel(rng.standard_normal(2),
                                         rng.uniform(0.5, 2.0, 2))
            scores = target.score_batch(particles)
            ens = ParticleEnsemble(particles)
            out = svgd_step(ens, kernel, scores, 0.07)
            expected = particles + 0.07 * naive_update_directions(particles, kernel, scores)
            err = np.abs(out.particles - expected)
            scale = np.maximum(np.abs(expected), 1e-12)
            assert np.max(err / scale) <= 1e-12

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        particles = rng.standard_normal((12, 3))
        target = GaussianTargetLevel(np.zeros(3), np.ones(3))
        scores = target.score_batch(particles)
        kernel = RbfKernel(0.9)
        out = svgd_step(ParticleEnsemble(particles), kernel, scores, 0.05)
        perm = rng.permutation(12)
        out_p = svgd_step(ParticleEnsemble(particles[perm]), kernel,
                          scores[perm], 0.05)
        np.testing.assert_allclose(out_p.particles, out.particles[perm],
                                   rtol=1e-13, atol=1e-14)

    def test_nonfinite_score_raises_with_index(self):
        ens = init_ensemble(5, [0.0], [1.0], seed=0)
        scores = np.zeros((5, 1))
        scores[3, 0] = np.nan
        with pytest.raises(SvgdRunError) as exc:
            svgd_step(ens, RbfKernel(1.0), scores, 0.1)
        assert exc.value.particle_index == 3


class TestGradientNormEstimate:
    def test_zero_at_stationary_single_particle(self):
        target = GaussianTargetLevel([1.0, 2.0], [1.0, 1.0])
        ens = ParticleEnsemble(np.array([[1.0, 2.0]]))
        scores = target.score_batch(ens.particles)
        assert gradient_norm_estimate(ens, RbfKernel(1.0), scores) == 0.0

    def test_displacement_identity(self):
        """mean particle displacement = step * estimate, exactly."""
        rng = np.random.default_rng(5)
        particles = rng.standard_normal((40, 2))
        target = GaussianTargetLevel(np.zeros(2), np.ones(2))
        scores = target.score_batch(particles)
        kernel = RbfKernel(0.5)
        ens = ParticleEnsemble(particles)
        ghat = gradient_norm_estimate(ens, kernel, scores)
        out = svgd_step(ens, kernel, scores, 0.3)
        disp = np.mean(np.linalg.norm(out.particles - particles, axis=1))
        assert disp == pytest.approx(0.3 * ghat, rel=1e-12)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(6)
        kernel = RbfKernel(1.1)
        for _ in range(10):
            particles = rng.standard_normal((3, 2))
            target = GaussianTargetLevel(rng.standard_normal(2),
                                         rng.uniform(0.5, 2.0, 2))
            scores = target.score_batch(particles)
            v = naive_update_directions(particles, kernel, scores)
            expected = np.mean(np.linalg.norm(v, axis=1))
            got = gradient_norm_estimate(ParticleEnsemble(particles), kernel, scores)
            assert got == pytest.approx(expected, rel=1e-12)


class TestRunSingleLevel:
    def test_stops_after_one_step_when_already_converged(self):
        """Repeat-until semantics: the check happens after the update."""
        target = GaussianTargetLevel([0.0], [1.0])
        ens = ParticleEnsemble(np.array([[0.0]]))  # at the mode, score 0
        cfg = SvgdConfig(step_size=0.1, tolerance=1e-3)
        res = run_single_level(ens, target, RbfKernel(1.0), cfg)
        assert res.iterations == 1
        assert res.tolerance_reached

    def test_standard_normal_benchmark(self):
        """1D N(0,1), N=200, step 0.1, bandwidth 1, tol 1e-3.

        Expected moments pinned from a 10x-longer pre-run whose mean/std
        stabilized at (0.000, 1.000).
        """
        target = GaussianTargetLevel([0.0], [1.0])
        ens = init_ensemble(200, [2.0], [0.01], seed=7)
        cfg = SvgdConfig(step_size=0.1, tolerance=1e-3, max_iterations=50_000)
        res = run_single_level(ens, target, RbfKernel(1.0), cfg)
        assert res.tolerance_reached
        m = res.ensemble.particles.mean()
        s = res.ensemble.particles.std(ddof=1)
        assert abs(m) <= 0.05
        assert 0.85 <= s <= 1.15

    def test_zero_score_two_particle_repulsion(self):
        """Score-free pair: positions follow the closed-form recurrence
        and the estimate decreases monotonically."""
        sigma_k = 1.0
        delta = 0.1
        a = 0.6  # above sqrt(bandwidth)/2, so the estimate is decreasing
        target = ZeroScoreTarget(1)
        kernel = RbfKernel(sigma_k)
        ens = ParticleEnsemble(np.array([[-a], [a]]))
        cfg = SvgdConfig(step_size=delta, tolerance=1e-6, max_iterations=40)
        res = run_single_level(ens, target, kernel, cfg)
        # closed-form recurrence for the half-separation
        ak = a
        ghats = []
        for _ in range(res.iterations):
            g = (ak / sigma_k) * np.exp(-2.0 * ak * ak / sigma_k)
            ghats.append(g)
            ak = ak + delta * g
        np.testing.assert_allclose(res.trace.grad_norm, ghats, rtol=1e-12)
        assert all(b < a for a, b in zip(ghats, ghats[1:]))
        np.testing.assert_allclose(np.abs(res.ensemble.particles).ravel(),
                                   [ak, ak], rtol=1e-12)

    def test_max_iterations_flag_not_exception(self):
        target = GaussianTargetLevel([0.0], [1.0])
        ens = init_ensemble(50, [5.0], [0.01], seed=1)
        cfg = SvgdConfig(step_size=0.01, tolerance=1e-12, max_iterations=5)
        res = run_single_level(ens, target, RbfKernel(1.0), cfg)
        assert not res.tolerance_reached
        assert res.iterations == 5

    def test_score_evaluation_accounting(self):
        """Exactly iterations x N score evaluations are performed."""
        target = GaussianTargetLevel([0.0, 0.0], [1.0, 1.0])
        ens = init_ensemble(30, [1.0, 1.0], [0.04, 0.04], seed=2)
        cfg = SvgdConfig(step_size=0.05, tolerance=1e-12, max_iterations=17)
        res = run_single_level(ens, target, RbfKernel(1.0), cfg)
        assert target.n_score_evals == res.iterations * 30
        assert res.score_evaluations == res.iterations * 30

    def test_trace_well_formed(self):
        target = GaussianTargetLevel([0.0], [1.0], level=3, cost_weight=2.0)
        ens = init_ensemble(10, [1.0], [0.01], seed=3)
        cfg = SvgdConfig(step_size=0.05, tolerance=1e-12, max_iterations=8)
        res = run_single_level(ens, target, RbfKernel(1.0), cfg)
        t = res.trace
        assert len(t) == 8
        assert t.level == [3] * 8
        assert np.all(np.diff(t.cum_cost) > 0)
        np.testing.assert_allclose(np.diff(t.cum_cost), 2.0 * 10)
        assert all(g >= 0 for g in t.grad_norm)
        assert res.mean_history.shape == (8, 1)
