"""Tests for the tilted-projection solver and the bound optimizer."""

import math

import numpy as np
import pytest

from bruteforce import brute_force_min, random_instance, simplex_lattice
from pacnav.bounds import DiscretePrior, c_pac, c_qpac, kl_divergence, regularizer_R
from pacnav.repopt import (
    RepInstance,
    RepParams,
    i_project,
    optimize_pac,
    optimize_qpac,
    prop2_intervals,
    solve_rep_fixed,
)


class TestIProject:
    def test_target_at_prior_mean(self):
        p, kl, theta = i_project([0.0, 1.0], DiscretePrior.uniform(2), 0.5)
        np.testing.assert_allclose(p.p, [0.5, 0.5], atol=1e-10)
        assert kl == pytest.approx(0.0, abs=1e-12)
        assert theta == pytest.approx(0.0, abs=1e-9)

    def test_closed_form_two_point(self):
        p, kl, theta = i_project([0.0, 1.0], DiscretePrior.uniform(2), 0.25)
        np.testing.assert_allclose(p.p, [0.75, 0.25], atol=1e-9)
        assert theta == pytest.approx(math.log(3), abs=1e-8)
        assert kl == pytest.approx(0.130812035941137, abs=1e-9)

    def test_boundary_point_mass(self):
        p, kl, theta = i_project([0.0, 1.0], DiscretePrior.uniform(2), 0.0)
        np.testing.assert_allclose(p.p, [1.0, 0.0])
        assert kl == pytest.approx(math.log(2), rel=1e-12)
        assert theta == math.inf

    def test_boundary_ties_share_prior_mass(self):
        p0 = DiscretePrior(np.array([0.1, 0.3, 0.6]))
        p, _, theta = i_project([0.2, 0.2, 0.9], p0, 0.2)
        np.testing.assert_allclose(p.p, [0.25, 0.75, 0.0], atol=1e-12)
        assert theta == math.inf

    def test_constant_costs_return_prior(self):
        p0 = DiscretePrior(np.array([0.2, 0.8]))
        p, kl, theta = i_project([0.4, 0.4], p0, 0.4)
        np.testing.assert_allclose(p.p, p0.p0)
        assert kl == 0.0 and theta == 0.0

    def test_infeasible_target(self):
        with pytest.raises(ValueError):
            i_project([0.2, 0.6], DiscretePrior.uniform(2), 0.7)
        with pytest.raises(ValueError):
            i_project([0.2, 0.6], DiscretePrior.uniform(2), 0.1)

    def test_constraint_met_to_tolerance(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            m = rng.integers(2, 6)
            C = rng.uniform(size=m)
            p0 = DiscretePrior(rng.dirichlet(np.ones(m)))
            lo, hi = C.min(), C.max()
            target = rng.uniform(lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo))
            p, _, _ = i_project(C, p0, target)
            assert abs(float(p.p @ C) - target) <= 1e-10

    def test_minimality_against_simplex_grid(self):
        # Gibbs-family optimality: at every grid point's achieved cost, the
        # projection's KL must undercut that grid point.  (Comparing at a
        # fixed target with a cost slack would be unsound: a grid point
        # whose cost sits slightly nearer the prior mean may legitimately
        # have lower KL than the exact-constraint minimizer.)
        rng = np.random.default_rng(11)
        for _ in range(15):
            m = int(rng.integers(2, 5))
            C = rng.uniform(size=m)
            p0v = rng.dirichlet(np.ones(m) * 3.0)
            p0 = DiscretePrior(p0v)
            lo, hi = C.min(), C.max()
            if hi - lo < 0.05:
                continue
            target = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
            grid = simplex_lattice(m, 0.01)
            near = grid[np.abs(grid @ C - target) <= 0.005]
            for q in near:
                _, kl_at_cost, _ = i_project(C, p0, float(q @ C))
                with np.errstate(divide="ignore", invalid="ignore"):
                    kl_q = float(np.where(q > 0, q * np.log(q / p0v), 0.0).sum())
                assert kl_at_cost <= kl_q + 1e-6

    def test_minimality_at_exactly_representable_targets(self):
        # On a two-point instance the 0.01 lattice hits the constraint
        # exactly, so the fixed-target comparison is sound there.
        C = np.array([0.0, 1.0])
        p0 = DiscretePrior(np.array([0.3, 0.7]))
        for target in (0.2, 0.47, 0.8):
            p, kl, _ = i_project(C, p0, target)
            grid = simplex_lattice(2, 0.01)
            near = grid[np.abs(grid @ C - target) < 1e-12]
            assert len(near) >= 1
            for q in near:
                with np.errstate(divide="ignore", invalid="ignore"):
                    kl_q = float(np.where(q > 0, q * np.log(q / p0.p0), 0.0).sum())
                assert kl <= kl_q + 1e-6

    def test_tilt_monotonicity(self):
        rng = np.random.default_rng(12)
        C = rng.uniform(size=4)
        p0 = DiscretePrior.uniform(4)
        thetas = np.linspace(-40.0, 40.0, 81)
        means = []
        for th in thetas:
            logw = np.log(p0.p0) - th * C
            w = np.exp(logw - logw.max())
            means.append(float(w @ C / w.sum()))
        assert all(a > b for a, b in zip(means, means[1:]))


class TestSolveRepFixed:
    def _instance(self, seed=13, m=3):
        rng = np.random.default_rng(seed)
        return RepInstance(rng.uniform(size=m), DiscretePrior.uniform(m),
                           int(rng.integers(100, 3000)), 0.05)

    def test_boundary_lambda_matches_quadratic_bound(self):
        rng = np.random.default_rng(14)
        for seed in range(20):
            inst = self._instance(seed + 100, m=int(rng.integers(2, 5)))
            c_hat = float(rng.uniform(inst.c_min, inst.c_max))
            _, kl, _ = i_project(inst.C, inst.p0, c_hat)
            r = regularizer_R(kl, inst.N, inst.delta)
            lam = math.sqrt(c_hat * r + r * r)
            tau = solve_rep_fixed(inst, RepParams(c_hat, lam))
            assert tau == pytest.approx(c_qpac(c_hat, r), abs=1e-8)

    def test_below_boundary_is_infeasible(self):
        inst = self._instance()
        c_hat = 0.5 * (inst.c_min + inst.c_max)
        _, kl, _ = i_project(inst.C, inst.p0, c_hat)
        r = regularizer_R(kl, inst.N, inst.delta)
        lam = 0.9 * math.sqrt(c_hat * r + r * r)
        assert solve_rep_fixed(inst, RepParams(c_hat, lam)) == math.inf

    def test_plug_in_evaluation(self):
        inst = RepInstance(np.array([0.0, 1.0]), DiscretePrior.uniform(2), 1000, 0.01)
        r0 = regularizer_R(0.0, 1000, 0.01)
        tau = solve_rep_fixed(inst, RepParams(0.5, 1.0))
        assert tau == pytest.approx(0.5 + 2.0 * r0 + 2.0, abs=1e-12)


class TestProp2Intervals:
    def test_constant_costs_degenerate_c_interval(self):
        inst = RepInstance(np.full(3, 0.4), DiscretePrior.uniform(3), 500, 0.1)
        r0 = regularizer_R(0.0, 500, 0.1)
        (c_lo, c_hi), _ = prop2_intervals(inst, c_qpac(0.4, r0))
        assert c_lo == c_hi == 0.4

    def test_two_point_formulas(self):
        inst = RepInstance(np.array([0.0, 1.0]), DiscretePrior.uniform(2), 1000, 0.01)
        r0 = regularizer_R(0.0, 1000, 0.01)
        gamma = c_qpac(0.5, r0)
        (c_lo, c_hi), (lam_lo, lam_hi) = prop2_intervals(inst, gamma)
        assert (c_lo, c_hi) == (0.0, 1.0)
        assert lam_lo == pytest.approx(r0, abs=1e-15)
        assert lam_hi == pytest.approx(gamma / 2.0 - r0, abs=1e-15)

    def test_gamma_precondition(self):
        inst = RepInstance(np.array([0.2, 0.8]), DiscretePrior.uniform(2), 100, 0.1)
        with pytest.raises(ValueError):
            prop2_intervals(inst, 0.0)

    def test_contains_brute_force_optimum(self):
        rng = np.random.default_rng(15)
        for _ in range(25):
            C, p0v, n_envs, delta = random_instance(rng)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            tau_b, p_b, c_hat_b, r_b = brute_force_min(C, p0v, n_envs, delta, "qpac")
            r0 = regularizer_R(0.0, n_envs, delta)
            gamma = c_qpac(float(C @ p0v), r0)
            (c_lo, c_hi), (lam_lo, lam_hi) = prop2_intervals(inst, gamma)
            lam_star = math.sqrt(c_hat_b * r_b + r_b * r_b)
            assert c_lo - 1e-12 <= c_hat_b <= c_hi + 1e-12
            assert lam_lo - 1e-12 <= lam_star <= lam_hi + 1e-12


class TestOptimizeQpac:
    def test_single_policy(self):
        inst = RepInstance(np.array([0.3]), DiscretePrior.uniform(1), 200, 0.05)
        sol = optimize_qpac(inst)
        r0 = regularizer_R(0.0, 200, 0.05)
        np.testing.assert_allclose(sol.p_star.p, [1.0])
        assert sol.tau_star == pytest.approx(c_qpac(0.3, r0), abs=1e-12)

    def test_two_point_matches_fine_line_search(self):
        inst = RepInstance(np.array([0.0, 1.0]), DiscretePrior.uniform(2), 1000, 0.01)
        sol = optimize_qpac(inst, K=1001)
        best = math.inf
        for p1 in np.arange(0.0, 1.0 + 1e-12, 1e-4):
            p = np.array([p1, 1.0 - p1])
            kl = kl_divergence(p, inst.p0)
            r = regularizer_R(kl, 1000, 0.01)
            best = min(best, c_qpac(float(p @ inst.C), r))
        assert sol.tau_star == pytest.approx(best, abs=1e-3)

    def test_never_worse_than_prior(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            C, p0v, n_envs, delta = random_instance(rng)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            r0 = regularizer_R(0.0, n_envs, delta)
            prior_tau = c_qpac(float(C @ p0v), r0)
            sol = optimize_qpac(inst, K=60)
            assert sol.tau_star <= prior_tau + 1e-15

    def test_solution_consistency_invariant(self):
        # tau_star must re-derive from its own posterior via the bound.
        rng = np.random.default_rng(17)
        for _ in range(25):
            C, p0v, n_envs, delta = random_instance(rng)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            sol = optimize_qpac(inst, K=80)
            kl = kl_divergence(sol.p_star, inst.p0)
            r = regularizer_R(kl, n_envs, delta)
            assert sol.tau_star == pytest.approx(
                c_qpac(float(sol.p_star.p @ C), r), abs=1e-8)

    def test_degenerate_constant_costs(self):
        inst = RepInstance(np.full(5, 0.25), DiscretePrior.uniform(5), 300, 0.1)
        sol = optimize_qpac(inst)
        np.testing.assert_allclose(sol.p_star.p, 0.2)
        assert sol.theta_star == 0.0

    def test_bisection_mode_agrees_with_closed_form(self):
        rng = np.random.default_rng(18)
        for _ in range(8):
            C, p0v, n_envs, delta = random_instance(rng, m=3)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            a = optimize_qpac(inst, K=60)
            b = optimize_qpac(inst, K=60, lambda_search="bisection")
            assert b.tau_star == pytest.approx(a.tau_star, abs=1e-6)

    def test_rejects_small_grid(self):
        inst = RepInstance(np.array([0.1, 0.9]), DiscretePrior.uniform(2), 100, 0.1)
        with pytest.raises(ValueError):
            optimize_qpac(inst, K=1)

    def test_matches_brute_force_small_instances(self):
        rng = np.random.default_rng(19)
        for _ in range(15):
            C, p0v, n_envs, delta = random_instance(rng)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            tau_b, *_ = brute_force_min(C, p0v, n_envs, delta, "qpac")
            sol = optimize_qpac(inst)
            assert sol.tau_star <= tau_b + 1e-3
            assert sol.tau_star >= tau_b - 1e-3


class TestOptimizePac:
    def test_single_policy(self):
        inst = RepInstance(np.array([0.3]), DiscretePrior.uniform(1), 200, 0.05)
        sol = optimize_pac(inst)
        r0 = regularizer_R(0.0, 200, 0.05)
        assert sol.tau_star == pytest.approx(c_pac(0.3, r0), abs=1e-12)
        assert sol.objective == "pac"

    def test_zero_cost_instance_keeps_prior(self):
        inst = RepInstance(np.zeros(4), DiscretePrior.uniform(4), 500, 0.05)
        sol = optimize_pac(inst)
        r0 = regularizer_R(0.0, 500, 0.05)
        np.testing.assert_allclose(sol.p_star.p, 0.25)
        assert sol.tau_star == pytest.approx(math.sqrt(r0), abs=1e-12)

    def test_two_point_matches_fine_line_search(self):
        inst = RepInstance(np.array([0.0, 1.0]), DiscretePrior.uniform(2), 1000, 0.01)
        sol = optimize_pac(inst, K=1001)
        best = math.inf
        for p1 in np.arange(0.0, 1.0 + 1e-12, 1e-4):
            p = np.array([p1, 1.0 - p1])
            kl = kl_divergence(p, inst.p0)
            r = regularizer_R(kl, 1000, 0.01)
            best = min(best, c_pac(float(p @ inst.C), r))
        assert sol.tau_star == pytest.approx(best, abs=1e-3)

    def test_never_worse_than_prior(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            C, p0v, n_envs, delta = random_instance(rng)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            r0 = regularizer_R(0.0, n_envs, delta)
            sol = optimize_pac(inst, K=60)
            assert sol.tau_star <= c_pac(float(C @ p0v), r0) + 1e-15


class TestEpigraphEquivalence:
    def test_parametric_family_reaches_direct_minimum(self):
        # Sweeping (C_hat, lambda-at-boundary) through the feasibility
        # program must match brute-force minimization of the quadratic
        # bound itself.
        rng = np.random.default_rng(21)
        for _ in range(10):
            C, p0v, n_envs, delta = random_instance(rng)
            inst = RepInstance(C, DiscretePrior(p0v), n_envs, delta)
            tau_direct, *_ = brute_force_min(C, p0v, n_envs, delta, "qpac")
            taus = []
            for c_hat in np.linspace(inst.c_min, inst.c_max, 200):
                _, kl, _ = i_project(C, inst.p0, float(c_hat))
                r = regularizer_R(kl, n_envs, delta)
                lam = math.sqrt(float(c_hat) * r + r * r)
                taus.append(solve_rep_fixed(inst, RepParams(float(c_hat), lam)))
            r0 = regularizer_R(0.0, n_envs, delta)
            taus.append(c_qpac(float(C @ p0v), r0))
            assert min(taus) == pytest.approx(tau_direct, abs=1e-3)

    def test_closed_form_lambda_identity(self):
        rng = np.random.default_rng(22)
        for _ in range(5000):
            c_hat, r = rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.5)
            lhs = c_hat + 2.0 * r + 2.0 * math.sqrt(c_hat * r + r * r)
            assert abs(lhs - c_qpac(c_hat, r)) < 1e-10
