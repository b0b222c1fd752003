"""Acceptance suite: one test per benchmark criterion, each printing a
pass/fail line with the measured values.

The two heavy benchmark criteria (7 and 8) verify artifact directories
produced by the CLI harness (`mlsvgd run <config>`), so a completed
benchmark run can be re-checked quickly.  The beam benchmark (criterion 8)
runs at its specified scale in a few hours on a small machine.  The
diffusion-reaction benchmark at its specified tolerance (criterion 7) is
far heavier; see that test's message and the repository notes for the
measured iteration-count analysis, and the desk-scale companion test for
the same speedup demonstration at an attainable tolerance.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from mlsvgd.beam import (StiffnessField, cantilever_uniform_load_deflection,
                         make_beam_grid, solve_beam)
from mlsvgd.diffusion import make_dr_grid, solve_dr
from mlsvgd.divergences import (GaussianDist, hellinger_gaussian, kl_gaussian,
                                kl_triangle_remainder)
from mlsvgd.dram import DramConfig, dram_sample, reference_mean
from mlsvgd.ensemble import ParticleEnsemble, RbfKernel, init_ensemble, kernel_eval, kernel_grad1
from mlsvgd.harness import ExperimentConfig, run_rate_fit, summarize
from mlsvgd.svgd import SvgdConfig, run_single_level, svgd_step, gradient_norm_estimate
from mlsvgd.targets import GaussianTargetLevel

ARTIFACTS = Path(os.environ.get("MLSVGD_ARTIFACTS", Path(__file__).parent.parent / "artifacts"))


def _random_spd_gaussian(rng, dim):
    a = rng.standard_normal((dim, dim))
    return GaussianDist(rng.standard_normal(dim), a @ a.T + 0.1 * dim * np.eye(dim))


class TestCriterion1KernelGradient:
    def test_kernel_gradient_finite_differences(self):
        t0 = time.perf_counter()
        h = 1e-6
        worst = 0.0
        for dim in (1, 2, 9, 16):
            rng = np.random.default_rng(1000 + dim)
            kernel = RbfKernel(0.9)
            for _ in range(250):  # 250 x 4 dims = 1000 pairs
                a = rng.standard_normal(dim)
                b = a + 0.4 * rng.standard_normal(dim)
                g = kernel_grad1(kernel, a, b)
                fd = np.empty(dim)
                for c in range(dim):
                    e = np.zeros(dim)
                    e[c] = h
                    fd[c] = (kernel_eval(kernel, a + e, b)
                             - kernel_eval(kernel, a - e, b)) / (2 * h)
                rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12)
                worst = max(worst, rel)
        elapsed = time.perf_counter() - t0
        ok = worst <= 1e-6
        record_criterion(1, ok, f"1000 pairs d in {{1,2,9,16}}, worst rel err "
                                f"{worst:.2e} (<= 1e-6), {elapsed:.2f}s")
        assert ok


class TestCriterion2BruteForceEquivalence:
    def test_step_and_estimate_match_naive_triple_loop(self):
        from test_svgd import naive_update_directions

        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 6))
            d = int(rng.integers(1, 4))
            particles = rng.standard_normal((n, d))
            scores = rng.standard_normal((n, d))
            kernel = RbfKernel(float(rng.uniform(0.3, 2.0)))
            step = float(rng.uniform(0.01, 0.3))
            ens = ParticleEnsemble(particles)
            out = svgd_step(ens, kernel, scores, step)
            v = naive_update_directions(particles, kernel, scores)
            expected = particles + step * v
            rel = np.max(np.abs(out.particles - expected)
                         / np.maximum(np.abs(expected), 1e-12))
            ghat = gradient_norm_estimate(ens, kernel, scores)
            gref = float(np.mean(np.linalg.norm(v, axis=1)))
            rel_g = abs(ghat - gref) / max(gref, 1e-300)
            worst = max(worst, rel, rel_g)
        elapsed = time.perf_counter() - t0
        ok = worst <= 1e-12
        record_criterion(2, ok, f"100 instances, worst rel err {worst:.2e} "
                                f"(<= 1e-12), {elapsed:.2f}s")
        assert ok


class TestCriterion3SingleParticleReduction:
    def test_single_particle_is_exact_gradient_ascent(self):
        rng = np.random.default_rng(3)
        ok = True
        for _ in range(20):
            mean = rng.standard_normal(2)
            var = rng.uniform(0.5, 2.0, 2)
            target = GaussianTargetLevel(mean, var)
            theta_svgd = rng.standard_normal(2)
            theta_ref = theta_svgd.copy()
            ens = ParticleEnsemble(theta_svgd[None, :])
            kernel = RbfKernel(0.8)
            for _ in range(100):
                s = target.score(ens.particles[0])
                ens = svgd_step(ens, kernel, s[None, :], 0.05)
                theta_ref = theta_ref + 0.05 * target.score(theta_ref)
            ok = ok and np.array_equal(ens.particles[0], theta_ref)
        record_criterion(3, ok, "20 targets x 100 steps, trajectories "
                                "bitwise equal to explicit gradient ascent")
        assert ok


class TestCriterion4GaussianSampling:
    def test_standard_normal_moments(self):
        t0 = time.perf_counter()
        target = GaussianTargetLevel([0.0], [1.0])
        ens = init_ensemble(200, [2.0], [0.01], seed=7)
        cfg = SvgdConfig(step_size=0.1, tolerance=1e-3, max_iterations=50_000)
        res = run_single_level(ens, target, RbfKernel(1.0), cfg)
        m = float(res.ensemble.particles.mean())
        s = float(res.ensemble.particles.std(ddof=1))
        elapsed = time.perf_counter() - t0
        ok = res.tolerance_reached and abs(m) <= 0.05 and 0.85 <= s <= 1.15
        record_criterion(4, ok, f"mean {m:+.4f} (|m|<=0.05), std {s:.4f} "
                                f"(in [0.85,1.15]), {res.iterations} its, {elapsed:.1f}s")
        assert ok


class TestCriterion5DivergenceIdentities:
    def test_hellinger_kl_bound_1000_pairs(self):
        rng = np.random.default_rng(50)
        ok = True
        margin = np.inf
        for _ in range(1000):
            p = _random_spd_gaussian(rng, 2)
            q = _random_spd_gaussian(rng, 2)
            h2 = hellinger_gaussian(p, q) ** 2
            kl = kl_gaussian(p, q)
            margin = min(margin, kl - 2 * h2)
            ok = ok and (2 * h2 <= kl + 1e-12)
        record_criterion(5, ok, f"(a) 2 hellinger^2 <= KL on 1000 pairs, "
                                f"min slack {margin:.3e}")
        assert ok

    def test_triangle_identity_100_triples(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(60)
        worst_z = 0.0
        for trial in range(100):
            r0, r1, r2 = (_random_spd_gaussian(rng, 1) for _ in range(3))
            lhs, rem, se = kl_triangle_remainder(r0, r1, r2, 20_000,
                                                 seed=5000 + trial)
            worst_z = max(worst_z, abs(lhs - rem) / se)
        elapsed = time.perf_counter() - t0
        ok = worst_z <= 3.0
        record_criterion(5, ok, f"(b) KL decomposition on 100 triples, worst "
                                f"|z| {worst_z:.2f} (<= 3 std errors), {elapsed:.1f}s")
        assert ok


class TestCriterion6ForwardSolverOracles:
    def test_diffusion_eigenfunction_convergence_order(self):
        errs = []
        for level in (1, 2, 3):
            grid = make_dr_grid(level)
            u = solve_dr(grid, np.array([0.0, 0.0]), disable_reaction=True)
            x = np.arange(1, grid.m + 1) * grid.h
            s = np.sin(2 * np.pi * x)
            exact = 100.0 * np.outer(s, s) / (8.0 * np.pi**2)
            errs.append(np.max(np.abs(u - exact)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        ok = bool(np.all(np.abs(orders - 2.0) <= 0.3))
        record_criterion(6, ok, f"(a) diffusion eigenfunction orders "
                                f"{np.round(orders, 3).tolist()} (2 +- 0.3)")
        assert ok

    def test_beam_cantilever_convergence_order(self):
        errs = []
        for level in (1, 2, 4):
            grid = make_beam_grid(level)
            u = solve_beam(grid, StiffnessField(np.full(3, 2.0)))
            exact = cantilever_uniform_load_deflection(grid.nodes, 2.0)
            errs.append(np.max(np.abs(u - exact)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        ok = bool(np.all(np.abs(orders - 2.0) <= 0.3))
        record_criterion(6, ok, f"(b) beam closed-form orders "
                                f"{np.round(orders, 3).tolist()} (2 +- 0.3)")
        assert ok


def _load_summary(dirname: str):
    d = ARTIFACTS / dirname
    if not (d / "summary.json").exists():
        if (d / "config.json").exists():
            return summarize(d)
        return None
    return json.loads((d / "summary.json").read_text())


class TestCriterion7DiffusionReactionSpeedup:
    """Benchmark at the specified tolerance 1e-4 with 10 replicates.

    Verifies a completed artifact directory (artifacts/dr-full).  On this
    2-core machine the specified configuration needs roughly 3e4 update
    iterations per run (measured gradient-norm decay: 2.9e-4 after 1.2e4
    level-1 iterations, decaying ~0.4% per 100 iterations), i.e. tens of
    hours per single-level replicate; the run was therefore not completed
    here.  The desk-scale companion test demonstrates the same speedup
    ordering at tolerance 2e-3 from the dr-desk artifacts.
    """

    def test_full_scale_artifacts(self):
        summary = _load_summary("dr-full")
        if summary is None:
            detail = ("artifacts/dr-full absent: full-scale benchmark "
                      "(tol 1e-4, N=1000, 10 replicates) needs ~10 days on "
                      "this hardware; see decisions ledger and the desk-scale "
                      "companion test")
            record_criterion(7, False, detail)
            pytest.fail(detail)
        config = ExperimentConfig.from_json(ARTIFACTS / "dr-full" / "config.json")
        assert config.tolerance == 1e-4 and config.n_particles == 1000
        assert len(config.seeds) == 10
        sp = summary["speedups"]["ml-1-2-3"]["model_cost_speedup_mean"]
        ml_cost = summary["matched_error_costs"]["ml-1-2-3"].get("0.003")
        sl_cost = summary["matched_error_costs"]["sl-3"].get("0.003")
        ok = sp >= 3.0 and ml_cost is not None and sl_cost is not None \
            and sl_cost / ml_cost >= 5.0
        record_criterion(7, ok, f"model-cost speedup {sp:.2f} (>= 3); "
                                f"matched-error-3e-3 costs ml={ml_cost} sl={sl_cost}")
        assert ok

    def test_desk_scale_companion(self):
        """Same problem, schedules, and particle count at tolerance 2e-3:
        the speedup ordering the benchmark demonstrates, at a scale that
        completes on this machine."""
        summary = _load_summary("dr-desk")
        if summary is None:
            pytest.fail("artifacts/dr-desk missing; run: mlsvgd run "
                        "<dr-desk config> (see README)")
        sp = summary["speedups"]["ml-1-2-3"]
        flagged = sum(s["flagged_runs"] for s in summary["schedules"].values())
        ok = sp["model_cost_speedup_min"] >= 3.0 and flagged == 0
        record_criterion(7, ok, f"[desk 2e-3] model-cost speedup mean "
                                f"{sp['model_cost_speedup_mean']:.2f} min "
                                f"{sp['model_cost_speedup_min']:.2f} (>= 3), "
                                f"{sp['n_pairs']} replicates, flagged {flagged}")
        assert ok


class TestCriterion8BeamSpeedup:
    def test_beam_benchmark_artifacts(self):
        summary = _load_summary("beam-full")
        if summary is None:
            detail = "artifacts/beam-full absent: run `mlsvgd run <beam config>` first"
            record_criterion(8, False, detail)
            pytest.fail(detail)
        config = ExperimentConfig.from_json(ARTIFACTS / "beam-full" / "config.json")
        assert config.tolerance == 5e-3 and config.n_particles == 500
        assert config.beam_dim == 9
        sp6 = summary["speedups"]["ml-1-2-3-4-5-6"]["model_cost_speedup_mean"]
        sp3 = summary["speedups"]["ml-1-3-6"]["model_cost_speedup_mean"]
        c6 = summary["schedules"]["ml-1-2-3-4-5-6"]["cost_mean"]
        c3 = summary["schedules"]["ml-1-3-6"]["cost_mean"]
        ratio = max(c6, c3) / min(c6, c3)
        flagged = sum(s["flagged_runs"] for s in summary["schedules"].values())
        ok = sp6 >= 3.0 and sp3 >= 3.0 and ratio <= 1.5 and flagged == 0
        record_criterion(8, ok, f"speedups {{1..6}}:{sp6:.2f} {{1,3,6}}:{sp3:.2f} "
                                f"(>= 3); schedule cost ratio {ratio:.2f} "
                                f"(<= 1.5); flagged {flagged}")
        assert ok


class TestCriterion9SpikeThenDecay:
    def test_every_multilevel_dr_run_spikes_and_recovers(self):
        base = ARTIFACTS / "dr-desk"
        if not base.exists():
            pytest.fail("artifacts/dr-desk missing (produced by the dr "
                        "benchmark run); cannot check level-switch traces")
        config = ExperimentConfig.from_json(base / "config.json")
        checked = 0
        spikes_seen = 0
        all_segments_converged = True
        for rundir in sorted((base / "runs").iterdir()):
            report = json.loads((rundir / "report.json").read_text())
            if len(report["schedule"]) < 2:
                continue
            checked += 1
            all_segments_converged &= all(report["tolerance_reached"])
            from mlsvgd.svgd import IterationTrace
            trace = IterationTrace.read_csv(rundir / "trace.csv")
            ghat = trace[:, 2]
            iters = trace[:, 0].astype(int)
            run_spiked = False
            for switch_iter in report["level_switch_iterations"]:
                pos = int(np.searchsorted(iters, switch_iter + 1))
                if pos < len(ghat) and ghat[pos] > ghat[pos - 1]:
                    run_spiked = True
                    # and the new segment decays back under tolerance
                    seg_end = pos
                    while seg_end + 1 < len(ghat) and trace[seg_end + 1, 1] == trace[pos, 1]:
                        seg_end += 1
                    if ghat[seg_end] > config.tolerance:
                        run_spiked = False
            spikes_seen += run_spiked
        ok = checked > 0 and all_segments_converged and spikes_seen == checked
        record_criterion(9, ok, f"{checked} multilevel runs, all segments "
                                f"end under tolerance: {all_segments_converged}; "
                                f"runs with a switch spike that decays: {spikes_seen}/{checked}")
        assert ok


class TestCriterion10RateFits:
    def test_planted_synthetic_exponents(self, tmp_path):
        from mlsvgd.harness import default_config
        config = default_config("gaussian-hierarchy", output_dir=str(tmp_path))
        payload = run_rate_fit(config)
        ok = (abs(payload["alpha_hat"] - 2.0) <= 1e-6 * 2.0
              and abs(payload["gamma_hat"] - 2.0) <= 1e-6 * 2.0)
        record_criterion(10, ok, f"planted hierarchy: alpha {payload['alpha_hat']:.8f}, "
                                 f"gamma {payload['gamma_hat']:.8f} (2 +- 2e-6)")
        assert ok

    def test_diffusion_reaction_hierarchy_decay(self, tmp_path):
        from mlsvgd.harness import default_config
        t0 = time.perf_counter()
        d = default_config("diffusion-reaction", output_dir=str(tmp_path)).to_dict()
        config = ExperimentConfig.from_dict(d)
        payload = run_rate_fit(config, n_mc=1200)
        elapsed = time.perf_counter() - t0
        ok = payload["alpha_hat"] > 0 and payload["alpha_r2"] >= 0.9
        record_criterion(10, ok, f"dr hierarchy: alpha {payload['alpha_hat']:.3f} "
                                 f"(> 0), R^2 {payload['alpha_r2']:.3f} (>= 0.9), "
                                 f"KLs {np.format_float_scientific(payload['kl_values'][0], 2)}"
                                 f"..{np.format_float_scientific(payload['kl_values'][-1], 2)}, "
                                 f"{elapsed:.0f}s")
        assert ok


class TestCriterion11DramSanity:
    def test_standard_gaussian_reference(self):
        t0 = time.perf_counter()
        target = GaussianTargetLevel([0.0, 0.0], [1.0, 1.0])
        cfg = DramConfig(dim=2, seed=0, start=(0.0, 0.0))
        chain = dram_sample(target, cfg)
        chain2 = dram_sample(target, cfg)
        deterministic = np.array_equal(chain.samples, chain2.samples)
        mu = reference_mean(chain)
        cov = np.cov(chain.samples.T, ddof=1)
        frob = float(np.linalg.norm(cov - np.eye(2)))
        elapsed = time.perf_counter() - t0
        ok = bool(np.abs(mu).max() <= 0.05 and frob <= 0.1 and deterministic)
        record_criterion(11, ok, f"|mean| {np.abs(mu).max():.4f} (<= 0.05), "
                                 f"cov Frobenius {frob:.4f} (<= 0.1), "
                                 f"deterministic {deterministic}, {elapsed:.1f}s")
        assert ok
