"""Monte Carlo ensembles: Gaussian sampling, RK4 propagation, box counting.

A vector field is either a :class:`LorenzParams` (integrated by the compiled
kernel when available) or a callable ``f(states) -> derivatives`` that
accepts arrays of shape ``(..., d)``.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import DivergenceError, EnsembleParseError

DEFAULT_STEP = 0.01


@dataclass(frozen=True)
class LorenzParams:
    s: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __call__(self, state):
        return lorenz_rhs(state, self)


def lorenz_rhs(state, params=None):
    """``(s (y - x), x (rho - z) - y, x y - beta z)``; vectorized over leading axes."""
    p = params or LorenzParams()
    state = np.asarray(state, dtype=np.float64)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([p.s * (y - x), x * (p.rho - z) - y, x * y - p.beta * z], axis=-1)


@dataclass(frozen=True)
class GaussianInitial:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.covariance, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"covariance shape {cov.shape} does not match mean")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-14 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_factor", factor)

    @property
    def factor(self):
        return self._factor

    @property
    def dimension(self):
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class SampleEnsemble:
    """Weighted point cloud at time ``time``.

    Attributes
    ----------
    points : ndarray, shape (N, d)
    weights : ndarray, shape (N,)
        Nonnegative, summing to one.
    seed : int or None
        Seed the initial draw came from.
    time : float
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)
    seed: int | None = None
    time: float = 0.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(self.weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"{w.shape[0]} weights for {n} points")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dimension(self):
        return self.points.shape[1]

    @property
    def uniform(self):
        return bool(np.all(self.weights == self.weights[0]))


def _step_plan(T, h):
    """Number of RK4 steps and length of the last one, landing exactly on T."""
    if T < 0:
        raise ValueError(f"duration must be nonnegative, got {T}")
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    if T == 0:
        return 0, 0.0
    n = max(1, math.ceil(T / h - 1e-9))
    return n, T - (n - 1) * h


def _rk4_numpy(state, rhs, h, n_steps, last_step):
    x = np.array(state, dtype=np.float64)
    bad_step = np.full(x.shape[:-1], -1, dtype=np.int64)
    for k in range(n_steps):
        dt = h if k < n_steps - 1 else last_step
        half = 0.5 * dt
        k1 = rhs(x)
        k2 = rhs(x + half * k1)
        k3 = rhs(x + half * k2)
        k4 = rhs(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.all(np.isfinite(x), axis=-1) & (bad_step < 0)
        if np.any(bad):
            bad_step[bad] = k
    return x, bad_step


def _integrate(points, system, T, h):
    n_steps, last = _step_plan(T, h)
    if n_steps == 0:
        return np.array(points, dtype=np.float64), np.full(len(points), -1)
    if isinstance(system, LorenzParams):
        return _kernels.lorenz_rk4(
            points, system.s, system.rho, system.beta, h, n_steps, last
        )
    # overflow is reported through DivergenceError, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_numpy(points, system, h, n_steps, last)


def _step_time(step, T, h):
    n_steps, _ = _step_plan(T, h)
    return T if step == n_steps - 1 else (step + 1) * h


def propagate(state, system=None, T=0.0, h=DEFAULT_STEP):
    """Classical RK4 from ``t = 0`` to ``t = T`` with step ``h``.

    The final step is shortened so the integration ends exactly at ``T``.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite.
    """
    system = system or LorenzParams()
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    out, bad = _integrate(state[None, :], system, T, h)
    if bad[0] >= 0:
        raise DivergenceError([(0, _step_time(int(bad[0]), T, h))])
    return out[0]


def propagate_ensemble(ensemble, system=None, T=0.0, h=DEFAULT_STEP):
    """Propagate every point; weights and seed are carried through."""
    system = system or LorenzParams()
    out, bad = _integrate(ensemble.points, system, T, h)
    failed = np.flatnonzero(bad >= 0)
    if failed.size:
        raise DivergenceError([(int(i), _step_time(int(bad[i]), T, h)) for i in failed])
    return replace(ensemble, points=out, time=ensemble.time + T)


def _generator(seed):
    # Philox is counter based, so any sub-stream can be reproduced independently
    return np.random.Generator(np.random.Philox(seed))


def sample_gaussian(init, n, seed):
    """Draw ``n`` i.i.d. samples of ``N(mean, covariance)``."""
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    normals = _generator(seed).standard_normal((n, init.dimension))
    points = init.mean + normals @ init.factor.T
    return SampleEnsemble(points, None, seed=seed, time=0.0)


def _box_mask(points, lower, upper, coords):
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    coords = list(range(points.shape[1])) if coords is None else [int(c) for c in coords]
    if not (len(coords) == lower.shape[0] == upper.shape[0]):
        raise ValueError("coords, lower and upper must have the same length")
    if any(c < 0 or c >= points.shape[1] for c in coords):
        raise ValueError(f"coordinates {coords} out of range")
    if np.any(lower > upper):
        raise ValueError(f"inverted box bounds: lower={lower}, upper={upper}")
    sel = points[:, coords]
    return np.all((sel >= lower) & (sel <= upper), axis=1)


def mc_box_probability(ensemble, lower, upper, coords=None, points=None):
    """Weight of the points inside the closed box ``[lower, upper]``.

    ``points`` overrides the ensemble's points (for example whitened copies)
    while keeping its weights.
    """
    pts = ensemble.points if points is None else np.asarray(points, dtype=np.float64)
    inside = _box_mask(pts, lower, upper, coords)
    if ensemble.uniform:
        return np.count_nonzero(inside) / len(ensemble)
    return float(ensemble.weights[inside].sum())


def write_ensemble(ensemble, path, include_weights=None):
    """Write ``ensemble`` as CSV with ``# t=`` and ``# seed=`` comment rows."""
    if include_weights is None:
        include_weights = not ensemble.uniform
    d = ensemble.dimension
    header = [f"x{j}" for j in range(d)] + (["weight"] if include_weights else [])
    with open(path, "w") as fh:
        fh.write(f"# t={ensemble.time!r}\n")
        fh.write(f"# seed={'' if ensemble.seed is None else ensemble.seed}\n")
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(ensemble.points):
            fields = [repr(float(v)) for v in row]
            if include_weights:
                fields.append(repr(float(ensemble.weights[i])))
            fh.write(",".join(fields) + "\n")


def read_ensemble(path):
    """Parse a file written by :func:`write_ensemble`.

    Raises
    ------
    EnsembleParseError
        With the offending line number and, for short rows, the missing column.
    """
    meta = {"t": 0.0, "seed": None}
    header = None
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                key, value = key.strip(), value.strip()
                try:
                    if key == "t":
                        meta["t"] = float(value)
                    elif key == "seed":
                        meta["seed"] = int(value) if value else None
                except ValueError as exc:
                    raise EnsembleParseError(f"line {lineno}: bad {key!r} value {value!r}") from exc
                continue
            fields = [f.strip() for f in line.split(",")]
            if header is None:
                header = fields
                if not header or header[0] != "x0":
                    raise EnsembleParseError(f"line {lineno}: expected a header starting with 'x0'")
                continue
            if len(fields) < len(header):
                missing = header[len(fields)]
                raise EnsembleParseError(f"line {lineno}: missing column {missing!r}")
            if len(fields) > len(header):
                raise EnsembleParseError(
                    f"line {lineno}: {len(fields)} fields but header has {len(header)}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise EnsembleParseError(f"line {lineno}: {exc}") from exc
    if header is None or not rows:
        raise EnsembleParseError(f"{path}: no data rows")
    data = np.array(rows)
    has_weights = header[-1] == "weight"
    points = data[:, :-1] if has_weights else data
    weights = data[:, -1] if has_weights else None
    return SampleEnsemble(points, weights, seed=meta["seed"], time=meta["t"])
