"""Monte Carlo maximum-likelihood fitting of SNP coefficients.

Pipeline: whiten the samples, solve the sign-restricted convex relaxation
of the likelihood for each branch, refine each relaxed solution on the
exact objective with L-BFGS, and keep the better branch.
"""
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog

from . import _kernels
from .density import SnpDensity, WhiteningTransform
from .errors import (
    DegenerateEnsembleError,
    InfeasibleBranchError,
    NonFiniteObjectiveError,
    SingularGradientError,
)
from .indexset import build_index_set

log = logging.getLogger(__name__)

BRANCHES = ("positive", "negative")
_SIGN = {"positive": 1.0, "negative": -1.0}

#: Scalings tried by the negative-branch feasibility probe before the LP fallback.
PROBE_SCALINGS = 20
RANK_TOLERANCE = 1e-12
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FitConfig:
    order: int = 6
    guard_epsilon: float = 1e-12
    convex_tolerance: float = 1e-8
    nonlinear_tolerance: float = 1e-9
    max_iterations: int = 500
    branch_policy: str = "both"
    memory: int = 10

    def __post_init__(self):
        if self.order < 2:
            raise ValueError(f"order must be >= 2, got {self.order}")
        for name in ("guard_epsilon", "convex_tolerance", "nonlinear_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.branch_policy not in ("both", "positive_only"):
            raise ValueError(
                f"branch_policy must be 'both' or 'positive_only', got {self.branch_policy!r}"
            )


@dataclass
class FitReport:
    """Per-branch objectives and iteration counts of one :func:`fit_snp` call.

    ``convex_objective_*`` is the relaxed objective at the relaxed optimum,
    ``initial_objective_*`` the exact objective there (the refinement's start)
    and ``nonlinear_objective_*`` the exact objective after refinement.
    Negative-branch entries are ``None`` when that branch was skipped or
    infeasible.
    """

    convex_objective_pos: float
    nonlinear_objective_pos: float
    initial_objective_pos: float
    chosen_branch: str
    theta: np.ndarray
    iterations: dict = field(default_factory=dict)
    convex_objective_neg: float | None = None
    nonlinear_objective_neg: float | None = None
    initial_objective_neg: float | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "convex_objective_pos": self.convex_objective_pos,
            "convex_objective_neg": self.convex_objective_neg,
            "nonlinear_objective_pos": self.nonlinear_objective_pos,
            "nonlinear_objective_neg": self.nonlinear_objective_neg,
            "initial_objective_pos": self.initial_objective_pos,
            "initial_objective_neg": self.initial_objective_neg,
            "chosen_branch": self.chosen_branch,
            "iterations": dict(self.iterations),
            "theta": [float(t) for t in self.theta],
            "warnings": list(self.warnings),
        }


class RelaxedSolution(NamedTuple):
    theta: np.ndarray
    objective: float
    iterations: int


class NonlinearSolution(NamedTuple):
    theta: np.ndarray
    objective: float
    iterations: int
    history: list


def _normalized_weights(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ValueError(f"expected {n} weights, got {w.shape[0]}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def whiten_samples(samples, weights=None):
    """Whiten samples with their weighted mean and population covariance.

    Returns
    -------
    whitened : ndarray, shape (N, d)
    transform : WhiteningTransform
        Lower-triangular Cholesky factor of the covariance.

    Raises
    ------
    DegenerateEnsembleError
        If the covariance is not positive definite.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n <= d:
        raise ValueError(f"need more samples than dimensions (N={n}, d={d})")
    w = _normalized_weights(weights, n)
    mean = w @ x
    centered = x - mean
    cov = (centered * w[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateEnsembleError(
            "sample covariance is not positive definite"
        ) from exc
    # rounding can let a rank-deficient covariance factor with a tiny pivot
    if not np.all(np.diag(factor) ** 2 > RANK_TOLERANCE * np.diag(cov)):
        raise DegenerateEnsembleError("sample covariance is singular")
    transform = WhiteningTransform.from_factor(mean, factor)
    return transform.whiten(x), transform


def _basis(whitened, index_set):
    z = np.asarray(whitened, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[1] != index_set.dimension:
        raise ValueError(
            f"samples have {z.shape[1]} columns, index set expects {index_set.dimension}"
        )
    return _kernels.basis_matrix(z, index_set.indices)


class _Likelihood:
    """Exact and relaxed objectives over a fixed design matrix."""

    def __init__(self, basis, weights, qdiag, guard):
        self.basis = basis
        self.weights = weights
        self.qdiag = qdiag
        self.guard = guard

    def objective(self, theta):
        u = 1.0 + self.basis @ theta
        s = 1.0 + np.dot(self.qdiag * theta, theta)
        return float(
            -2.0 * np.dot(self.weights, np.log(np.maximum(np.abs(u), self.guard)))
            + np.log(s)
        )

    def gradient(self, theta, u=None):
        if u is None:
            u = 1.0 + self.basis @ theta
        bad = np.flatnonzero(np.abs(u) <= self.guard)
        if bad.size:
            raise SingularGradientError(int(bad[0]), float(u[bad[0]]))
        s = 1.0 + np.dot(self.qdiag * theta, theta)
        return -2.0 * (self.weights / u) @ self.basis + 2.0 * self.qdiag * theta / s

    def value_and_gradient(self, theta):
        u = 1.0 + self.basis @ theta
        if np.any(np.abs(u) <= self.guard):
            return np.inf, None
        s = 1.0 + np.dot(self.qdiag * theta, theta)
        f = -2.0 * np.dot(self.weights, np.log(np.abs(u))) + np.log(s)
        g = -2.0 * (self.weights / u) @ self.basis + 2.0 * self.qdiag * theta / s
        return float(f), g

    def relaxed(self, theta, sign):
        """Relaxed objective; ``inf`` outside the open feasible set."""
        su = sign * (1.0 + self.basis @ theta)
        if np.any(su <= 0.0):
            return np.inf
        return float(-2.0 * np.dot(self.weights, np.log(su)) + np.dot(self.qdiag * theta, theta))


def _likelihood(whitened, weights, index_set, guard_epsilon):
    basis = _basis(whitened, index_set)
    w = _normalized_weights(weights, basis.shape[0])
    return _Likelihood(basis, w, index_set.weights.astype(np.float64), guard_epsilon)


def mle_objective(theta, whitened, weights, index_set, guard_epsilon=1e-12):
    """Negative MC log-likelihood without the constant ``sum w log phi(z)``.

    ``-sum_i 2 w_i log max(|1 + theta^T H(z_i)|, eps) + log(1 + theta^T Q theta)``
    """
    theta = np.asarray(theta, dtype=np.float64)
    return _likelihood(whitened, weights, index_set, guard_epsilon).objective(theta)


def mle_gradient(theta, whitened, weights, index_set, guard_epsilon=1e-12):
    """Analytic gradient of :func:`mle_objective`.

    Raises
    ------
    SingularGradientError
        When a sample lies within ``guard_epsilon`` of the polynomial's zero set.
    """
    theta = np.asarray(theta, dtype=np.float64)
    return _likelihood(whitened, weights, index_set, guard_epsilon).gradient(theta)


def relaxed_objective(theta, whitened, weights, index_set, branch="positive"):
    """Convex surrogate ``-sum 2 w log(sign * P(z_i)) + theta^T Q theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    lik = _likelihood(whitened, weights, index_set, 1e-12)
    return lik.relaxed(theta, _SIGN[branch])


def _negative_start(lik):
    basis = lik.basis
    h1 = basis[0]
    norm2 = float(np.dot(h1, h1))
    if norm2 > 0.0:
        base = -2.0 * h1 / norm2
        for k in range(PROBE_SCALINGS):
            theta = base * 2.0**k
            if np.all(1.0 + basis @ theta < 0.0):
                return theta
    # Phase-I LP: maximize the margin t with 1 + h_i^T theta <= -t.
    n, m = basis.shape
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([basis, np.ones((n, 1))])
    b_ub = -np.ones(n)
    bounds = [(-1e4, 1e4)] * m + [(None, 1.0)]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status == 0 and res.x[-1] > 1e-9:
        theta = res.x[:m]
        if np.all(1.0 + basis @ theta < 0.0):
            return theta
    raise InfeasibleBranchError(
        "no coefficient vector makes the polynomial negative at every sample"
    )


def _solve_relaxed(lik, sign, theta0, tol, max_iter):
    """Damped Newton on the relaxed objective from a strictly feasible start."""
    basis, w, q = lik.basis, lik.weights, lik.qdiag
    theta = np.array(theta0, dtype=np.float64)
    f = lik.relaxed(theta, sign)
    iterations = 0
    for _ in range(max_iter):
        u = 1.0 + basis @ theta
        grad = -2.0 * (w / u) @ basis + 2.0 * q * theta
        if np.linalg.norm(grad) <= tol:
            break
        hess = (basis * (2.0 * w / u**2)[:, None]).T @ basis
        hess[np.diag_indices_from(hess)] += 2.0 * q
        try:
            step = -cho_solve(cho_factor(hess), grad)
        except LinAlgError:
            step = -grad
        slope = float(np.dot(grad, step))
        if slope >= 0.0:
            step, slope = -grad, -float(np.dot(grad, grad))
        # stay inside the open feasible set, then Armijo
        du = basis @ step
        t = 1.0
        moving = sign * du < 0
        if np.any(moving):
            t = min(1.0, 0.99 * float(np.min(-(sign * u[moving]) / (sign * du[moving]))))
        accepted = False
        for _ in range(60):
            f_new = lik.relaxed(theta + t * step, sign)
            if f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        theta = theta + t * step
        iterations += 1
        converged = f - f_new <= 1e-15 * max(1.0, abs(f))
        f = f_new
        if converged:
            break
    return RelaxedSolution(theta, float(f), iterations)


def convex_relaxed_fit(whitened, weights, index_set, branch="positive", config=None):
    """Minimize the convex relaxation on one sign branch.

    The positive branch starts from ``theta = 0``; the negative branch needs
    a probe (then an LP) to find a point with ``P(z_i) < 0`` for all samples.

    Raises
    ------
    InfeasibleBranchError
        If no strictly feasible negative-branch start exists.
    """
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
    config = config or FitConfig(order=index_set.order)
    lik = _likelihood(whitened, weights, index_set, config.guard_epsilon)
    return _relaxed_branch(lik, branch, config)


def _relaxed_branch(lik, branch, config):
    sign = _SIGN[branch]
    if branch == "positive":
        start = np.zeros(lik.basis.shape[1])
    else:
        start = _negative_start(lik)
    return _solve_relaxed(lik, sign, start, config.convex_tolerance, config.max_iterations)


def _two_loop(grad, s_hist, y_hist):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def _lbfgs(lik, theta0, tol, max_iter, memory):
    theta = np.array(theta0, dtype=np.float64)
    f, g = lik.value_and_gradient(theta)
    if g is None or not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjectiveError(
            "initial point is on the polynomial's zero set or gives a non-finite objective"
        )
    history = [f]
    s_hist, y_hist = deque(maxlen=memory), deque(maxlen=memory)
    iterations = 0
    while iterations < max_iter and np.linalg.norm(g) > tol:
        direction = _two_loop(g, s_hist, y_hist)
        slope = float(np.dot(g, direction))
        if not slope < 0.0:
            s_hist.clear()
            y_hist.clear()
            direction = -g
            slope = -float(np.dot(g, g))
        t = 1.0 if s_hist else min(1.0, 1.0 / np.linalg.norm(g))
        accepted = False
        for _ in range(60):
            candidate = theta + t * direction
            f_new, g_new = lik.value_and_gradient(candidate)
            if g_new is not None and np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteObjectiveError(f"non-finite gradient at iteration {iterations}")
        s = candidate - theta
        y = g_new - g
        if np.dot(s, y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        stalled = f_new >= f
        theta, f, g = candidate, f_new, g_new
        history.append(f)
        iterations += 1
        if stalled:
            # rounding floor: Armijo accepted a step with no decrease
            break
    return NonlinearSolution(theta, float(f), iterations, history)


def nonlinear_fit(whitened, weights, index_set, initial_theta, config=None):
    """Refine ``initial_theta`` on the exact objective with L-BFGS.

    Every accepted step satisfies the Armijo condition, so the returned
    objective never exceeds the starting one.
    """
    config = config or FitConfig(order=index_set.order)
    theta0 = np.asarray(initial_theta, dtype=np.float64)
    if not np.all(np.isfinite(theta0)):
        raise ValueError("initial_theta must be finite")
    lik = _likelihood(whitened, weights, index_set, config.guard_epsilon)
    return _lbfgs(
        lik, theta0, config.nonlinear_tolerance, config.max_iterations, config.memory
    )


def fit_snp(samples, config=None, weights=None):
    """Fit an SNP density to raw samples.

    Parameters
    ----------
    samples : array_like, shape (N, d)
    config : FitConfig, optional
    weights : array_like, shape (N,), optional
        Defaults to uniform ``1/N``.

    Returns
    -------
    density : SnpDensity
        Carries the whitening transform of ``samples``.
    report : FitReport
    """
    config = config or FitConfig()
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] > 1 and np.all(x == x[0]):
        raise DegenerateEnsembleError("all samples are identical")
    whitened, transform = whiten_samples(x, weights)
    index_set = build_index_set(x.shape[1], config.order)
    lik = _likelihood(whitened, weights, index_set, config.guard_epsilon)
    notes = []
    if x.shape[0] < len(index_set):
        msg = (
            f"N_s={x.shape[0]} is below the coefficient count M={len(index_set)}; "
            "the fit is underdetermined"
        )
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    results = {}
    iterations = {}
    branches = BRANCHES if config.branch_policy == "both" else ("positive",)
    for branch in branches:
        try:
            relaxed = _relaxed_branch(lik, branch, config)
        except InfeasibleBranchError as exc:
            notes.append(f"{branch} branch infeasible: {exc}")
            log.info("%s branch infeasible: %s", branch, exc)
            continue
        refined = _lbfgs(
            lik,
            relaxed.theta,
            config.nonlinear_tolerance,
            config.max_iterations,
            config.memory,
        )
        results[branch] = (relaxed, lik.objective(relaxed.theta), refined)
        iterations[f"convex_{branch}"] = relaxed.iterations
        iterations[f"nonlinear_{branch}"] = refined.iterations

    chosen = "positive"
    if "negative" in results:
        if results["negative"][2].objective < results["positive"][2].objective - TIE_TOLERANCE:
            chosen = "negative"
    theta = results[chosen][2].theta
    pos = results["positive"]
    neg = results.get("negative")
    report = FitReport(
        convex_objective_pos=pos[0].objective,
        nonlinear_objective_pos=pos[2].objective,
        initial_objective_pos=pos[1],
        convex_objective_neg=None if neg is None else neg[0].objective,
        nonlinear_objective_neg=None if neg is None else neg[2].objective,
        initial_objective_neg=None if neg is None else neg[1],
        chosen_branch=chosen,
        theta=theta.copy(),
        iterations=iterations,
        warnings=notes,
    )
    return SnpDensity(index_set, theta, transform), report
