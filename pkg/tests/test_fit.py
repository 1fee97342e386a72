import math
import warnings

import numpy as np
import pytest

from snpdensity.errors import (
    DegenerateEnsembleError,
    InfeasibleBranchError,
    SingularGradientError,
)
from snpdensity.fit import (
    FitConfig,
    convex_relaxed_fit,
    fit_snp,
    mle_gradient,
    mle_objective,
    nonlinear_fit,
    relaxed_objective,
    whiten_samples,
)
from snpdensity.indexset import build_index_set


def bimodal_samples(rng, n):
    """Two tight clusters; after whitening both sit near |z| = 1."""
    x = rng.normal(0.0, 0.3, (n, 1))
    x[: n // 2] -= 2.0
    x[n // 2 :] += 2.0
    return x


def skewed_samples(rng, n, d):
    """Non-Gaussian cloud: mixed exponential and normal coordinates."""
    x = rng.standard_normal((n, d))
    x[:, 0] = rng.exponential(size=n)
    if d > 1:
        x[:, 1] += 0.5 * x[:, 0] ** 2
    return x


def central_difference(f, theta, h=1e-6):
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


class TestWhitening:
    def test_identity_example(self):
        w, wt = whiten_samples([[-1.0], [1.0]])
        np.testing.assert_array_equal(wt.mean, [0.0])
        np.testing.assert_array_equal(wt.factor, [[1.0]])
        np.testing.assert_array_equal(w, [[-1.0], [1.0]])

    def test_moments(self, rng):
        x = rng.standard_normal((500, 3)) @ np.array([[2, 0, 0], [1, 1, 0], [0.5, -1, 3.0]]) + 4
        z, wt = whiten_samples(x)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
        np.testing.assert_allclose(z.T @ z / len(z), np.eye(3), atol=1e-8)
        np.testing.assert_allclose(wt.unwhiten(z), x, atol=1e-10)
        assert np.allclose(wt.factor, np.tril(wt.factor))

    def test_weighted_moments(self, rng):
        x = rng.standard_normal((300, 2)) * [1.0, 4.0]
        w = rng.uniform(size=300)
        w /= w.sum()
        z, _ = whiten_samples(x, w)
        np.testing.assert_allclose(w @ z, 0.0, atol=1e-10)
        np.testing.assert_allclose((z * w[:, None]).T @ z, np.eye(2), atol=1e-8)

    def test_errors(self):
        with pytest.raises(ValueError):
            whiten_samples([[0.0, 1.0], [1.0, 2.0]])
        with pytest.raises(DegenerateEnsembleError):
            whiten_samples([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])


class TestObjective:
    def test_zero_theta(self, rng):
        idx = build_index_set(2, 4)
        assert mle_objective(np.zeros(len(idx)), rng.standard_normal((30, 2)), None, idx) == 0.0

    def test_example(self):
        idx = build_index_set(1, 2)
        assert mle_objective([0.5], [[0.0]], None, idx) == pytest.approx(1.7917595, abs=1e-7)

    def test_permutation_invariant(self, rng):
        idx = build_index_set(2, 4)
        z = rng.standard_normal((40, 2))
        w = rng.uniform(size=40)
        w /= w.sum()
        theta = 0.1 * rng.standard_normal(len(idx))
        perm = rng.permutation(40)
        assert mle_objective(theta, z[perm], w[perm], idx) == pytest.approx(
            mle_objective(theta, z, w, idx), rel=1e-13
        )

    def test_guard_keeps_finite(self):
        idx = build_index_set(1, 2)
        assert np.isfinite(mle_objective([-1.0], [[0.0]], None, idx))


class TestGradient:
    def test_at_zero(self, rng):
        idx = build_index_set(1, 2)
        np.testing.assert_array_equal(mle_gradient([0.0], [[0.0]], None, idx), [2.0])
        idx = build_index_set(2, 3)
        z = rng.standard_normal((25, 2))
        from snpdensity.hermite import hermite_eval

        basis = np.array([[hermite_eval(a, p[0]) * hermite_eval(b, p[1]) for a, b in idx] for p in z])
        np.testing.assert_allclose(
            mle_gradient(np.zeros(len(idx)), z, None, idx), -2 * basis.mean(axis=0), rtol=1e-12
        )

    def test_finite_differences(self, rng):
        for _ in range(20):
            d = int(rng.integers(1, 4))
            idx = build_index_set(d, int(rng.integers(2, 6)))
            z = rng.standard_normal((50, d))
            theta = 0.05 * rng.standard_normal(len(idx))
            g = mle_gradient(theta, z, None, idx)
            fd = central_difference(lambda t: mle_objective(t, z, None, idx), theta)
            assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5

    def test_singular(self):
        idx = build_index_set(1, 2)
        with pytest.raises(SingularGradientError) as info:
            mle_gradient([1.0], [[1.5], [0.0]], None, idx)
        assert info.value.sample_index == 1


class TestRelaxation:
    def test_midpoint_convexity(self, rng):
        idx = build_index_set(2, 4)
        z = rng.standard_normal((60, 2))
        f = lambda t: relaxed_objective(t, z, None, idx)
        checked = 0
        while checked < 100:
            a, b = 0.05 * rng.standard_normal((2, len(idx)))
            if not (np.isfinite(f(a)) and np.isfinite(f(b))):
                continue
            t = rng.uniform()
            assert f(t * a + (1 - t) * b) <= t * f(a) + (1 - t) * f(b) + 1e-9
            checked += 1

    def test_bound_direction(self, rng):
        q = build_index_set(3, 6).weights.astype(float)
        for _ in range(100):
            theta = rng.standard_normal(q.size) * rng.uniform(0, 2)
            s = theta @ (q * theta)
            assert s >= math.log1p(s)

    def test_positive_from_standard_normal(self, rng):
        z = rng.standard_normal((100_000, 1))
        sol = convex_relaxed_fit(z, None, build_index_set(1, 4), "positive")
        assert np.linalg.norm(sol.theta) < 0.05

    def test_negative_infeasible(self):
        # H_2(+-1) = 0, so the polynomial equals 1 at those samples for any theta
        z = np.array([[-1.0], [1.0], [0.0]])
        with pytest.raises(InfeasibleBranchError):
            convex_relaxed_fit(z, None, build_index_set(1, 2), "negative")

    def test_negative_feasible_iterates(self, rng):
        idx = build_index_set(1, 4)
        z, _ = whiten_samples(bimodal_samples(rng, 200))
        sol = convex_relaxed_fit(z, None, idx, "negative")
        assert np.isfinite(sol.objective)
        assert relaxed_objective(sol.theta, z, None, idx, "negative") == sol.objective

    def test_optimality(self, rng):
        idx = build_index_set(2, 3)
        z = skewed_samples(rng, 400, 2)
        z, _ = whiten_samples(z)
        sol = convex_relaxed_fit(z, None, idx, "positive")
        f = lambda t: relaxed_objective(t, z, None, idx)
        for _ in range(20):
            assert f(sol.theta + 1e-3 * rng.standard_normal(len(idx))) >= sol.objective - 1e-12


class TestNonlinear:
    def setup_problem(self, rng):
        idx = build_index_set(2, 4)
        z, _ = whiten_samples(skewed_samples(rng, 400, 2))
        return idx, z

    def test_descent_history(self, rng):
        idx, z = self.setup_problem(rng)
        start = convex_relaxed_fit(z, None, idx).theta
        sol = nonlinear_fit(z, None, idx, start)
        assert sol.objective <= mle_objective(start, z, None, idx) + 1e-9
        assert np.all(np.diff(sol.history) <= 0)

    def test_stationary_start_unchanged(self, rng):
        idx, z = self.setup_problem(rng)
        sol = nonlinear_fit(z, None, idx, convex_relaxed_fit(z, None, idx).theta)
        gnorm = np.linalg.norm(mle_gradient(sol.theta, z, None, idx))
        again = nonlinear_fit(z, None, idx, sol.theta,
                              FitConfig(order=4, nonlinear_tolerance=2 * gnorm + 1e-12))
        assert again.iterations == 0
        np.testing.assert_array_equal(again.theta, sol.theta)

    def test_rejects_nonfinite_start(self, rng):
        idx, z = self.setup_problem(rng)
        with pytest.raises(ValueError):
            nonlinear_fit(z, None, idx, np.full(len(idx), np.nan))


class TestFitSnp:
    def test_standard_normal(self, rng):
        density, report = fit_snp(rng.standard_normal((100_000, 1)), FitConfig(order=4))
        assert density.pdf_whitened(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.02)
        assert np.linalg.norm(report.theta) < 0.05
        assert report.chosen_branch == "positive"

    def test_report_invariants(self, rng):
        _, report = fit_snp(bimodal_samples(rng, 300), FitConfig(order=4))
        assert report.nonlinear_objective_pos <= report.initial_objective_pos + 1e-9
        assert report.convex_objective_neg is not None
        assert report.nonlinear_objective_neg <= report.initial_objective_neg + 1e-9
        best = min(report.nonlinear_objective_pos, report.nonlinear_objective_neg)
        chosen = getattr(report, f"nonlinear_objective_{report.chosen_branch[:3]}")
        assert chosen == best
        assert set(report.iterations) == {
            "convex_positive", "nonlinear_positive", "convex_negative", "nonlinear_negative"
        }

    def test_beats_gaussian(self, rng):
        density, report = fit_snp(skewed_samples(rng, 2000, 1), FitConfig(order=6))
        assert report.nonlinear_objective_pos < 0.0

    def test_deterministic(self, rng):
        x = skewed_samples(rng, 200, 2)
        a, _ = fit_snp(x, FitConfig(order=5))
        b, _ = fit_snp(x.copy(), FitConfig(order=5))
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_infeasible_negative_reported(self):
        density, report = fit_snp(np.array([[-1.0], [1.0]]), FitConfig(order=2))
        assert report.convex_objective_neg is None
        assert report.chosen_branch == "positive"
        assert any("infeasible" in w for w in report.warnings)

    def test_positive_only(self, rng):
        _, report = fit_snp(skewed_samples(rng, 100, 1), FitConfig(order=4, branch_policy="positive_only"))
        assert report.nonlinear_objective_neg is None

    def test_underdetermined_warns(self, rng):
        with pytest.warns(RuntimeWarning):
            _, report = fit_snp(skewed_samples(rng, 20, 3), FitConfig(order=4, max_iterations=50))
        assert report.warnings

    def test_identical_samples(self):
        with pytest.raises(DegenerateEnsembleError):
            fit_snp(np.ones((10, 2)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FitConfig(order=1)
        with pytest.raises(ValueError):
            FitConfig(nonlinear_tolerance=0.0)
        with pytest.raises(ValueError):
            FitConfig(branch_policy="neither")
