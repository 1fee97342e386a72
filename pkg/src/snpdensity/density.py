"""Seminonparametric (Gallant-Nychka) densities.

A density over whitened coordinates ``z`` has the form

    p(z) = phi_d(z) P(z)^2 / S,    P(z) = 1 + sum_alpha c_alpha H_alpha(z),

with ``S = 1 + sum_alpha alpha! c_alpha^2``.  Marginals, the CDF and box
probabilities are all available in closed form.
"""
import itertools
import json
from math import factorial, prod
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .errors import DimensionError, UnsupportedGeometryError
from .hermite import crossed_lower_integrals, gaussian_lower_integrals, norm_cdf
from .indexset import MultiIndexSet, index_set_from_list

#: Whitened coordinates beyond this magnitude are treated as infinite.
CDF_CLAMP = 40.0

FORMAT_TAG = "snpdensity/1"

_LOG_2PI = np.log(2.0 * np.pi)

# bound on n * M * M doubles per chunk of CDF evaluation
_CDF_CHUNK_ELEMENTS = 4_000_000


def _as_points(z, d):
    """Coerce ``z`` to an ``(n, d)`` array; also report whether it was one point."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim == 0:
        if d != 1:
            raise DimensionError(f"scalar input for a {d}-dimensional density")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] == d:
            return arr.reshape(1, d), True
        if d == 1:
            return arr.reshape(-1, 1), False
        raise DimensionError(f"expected {d} coordinates, got {arr.shape[0]}")
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr, False
    raise DimensionError(f"expected points of shape (n, {d}), got {arr.shape}")


def _unwrap(values, single):
    return float(values[0]) if single else values


def _std_normal_pdf_nd(points):
    d = points.shape[1]
    return np.exp(-0.5 * np.einsum("ij,ij->i", points, points) - 0.5 * d * _LOG_2PI)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """Affine map ``z = L^{-1} (x - mean)`` with ``Sigma = L L^T``.

    Attributes
    ----------
    mean : ndarray, shape (d,)
    factor : ndarray, shape (d, d)
        Lower-triangular ``L``.
    inverse_factor : ndarray, shape (d, d)
    log_abs_det_inverse : float
        ``log |det L^{-1}|``, the Jacobian of the whitening map.
    """

    mean: np.ndarray
    factor: np.ndarray
    inverse_factor: np.ndarray
    log_abs_det_inverse: float

    @classmethod
    def from_factor(cls, mean, factor):
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        factor = np.array(factor, dtype=np.float64)
        d = mean.shape[0]
        if factor.shape != (d, d):
            raise DimensionError(f"factor must be {d}x{d}, got {factor.shape}")
        if np.any(np.triu(factor, 1) != 0.0):
            raise ValueError("whitening factor must be lower triangular")
        diag = np.diag(factor)
        if np.any(diag <= 0.0) or not np.all(np.isfinite(factor)):
            raise ValueError("whitening factor needs a positive, finite diagonal")
        inverse = solve_triangular(factor, np.eye(d), lower=True)
        for arr in (mean, factor, inverse):
            arr.setflags(write=False)
        return cls(mean, factor, inverse, float(-np.sum(np.log(diag))))

    @classmethod
    def identity(cls, d):
        return cls.from_factor(np.zeros(d), np.eye(d))

    @property
    def dimension(self):
        return self.mean.shape[0]

    @property
    def is_diagonal(self):
        return not np.any(np.tril(self.factor, -1))

    def whiten(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.inverse_factor.T

    def unwhiten(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z @ self.factor.T + self.mean


@dataclass(frozen=True, eq=False)
class SnpDensity:
    """Fitted SNP density.

    Attributes
    ----------
    index_set : MultiIndexSet
    theta : ndarray, shape (M,)
        Coefficients aligned with ``index_set.indices``.
    whitening : WhiteningTransform or None
        Map from raw to whitened coordinates; needed for raw-space evaluation.
    """

    index_set: MultiIndexSet
    theta: np.ndarray = field(repr=False)
    whitening: WhiteningTransform | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != len(self.index_set):
            raise DimensionError(
                f"theta has {theta.shape[0]} entries, index set has {len(self.index_set)}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.whitening is not None and self.whitening.dimension != self.dimension:
            raise DimensionError("whitening dimension differs from the index set")

    @property
    def dimension(self):
        return self.index_set.dimension

    @property
    def order(self):
        return self.index_set.order

    @cached_property
    def normalization(self):
        """``S = 1 + theta^T Q theta``."""
        return float(1.0 + np.dot(self.index_set.weights * self.theta, self.theta))

    def basis(self, z):
        """Design matrix ``H_alpha(z_i)`` of shape ``(n, M)``."""
        points, _ = _as_points(z, self.dimension)
        return _kernels.basis_matrix(points, self.index_set.indices)

    def polynomial_value(self, z):
        """``P(z) = 1 + theta^T H(z)``."""
        points, single = _as_points(z, self.dimension)
        values = 1.0 + _kernels.basis_matrix(points, self.index_set.indices) @ self.theta
        return _unwrap(values, single)

    def pdf_whitened(self, z):
        points, single = _as_points(z, self.dimension)
        poly = 1.0 + _kernels.basis_matrix(points, self.index_set.indices) @ self.theta
        return _unwrap(_std_normal_pdf_nd(points) * poly**2 / self.normalization, single)

    def logpdf_whitened(self, z):
        points, single = _as_points(z, self.dimension)
        poly = 1.0 + _kernels.basis_matrix(points, self.index_set.indices) @ self.theta
        d = self.dimension
        with np.errstate(divide="ignore"):
            out = (
                -0.5 * np.einsum("ij,ij->i", points, points)
                - 0.5 * d * _LOG_2PI
                + 2.0 * np.log(np.abs(poly))
                - np.log(self.normalization)
            )
        return _unwrap(out, single)

    def _require_whitening(self):
        if self.whitening is None:
            raise ValueError("density has no whitening transform; use pdf_whitened")
        return self.whitening

    def pdf(self, x):
        """Density in raw coordinates (change of variables through the whitening)."""
        w = self._require_whitening()
        points, single = _as_points(x, self.dimension)
        values = self.pdf_whitened(w.whiten(points)) * np.exp(w.log_abs_det_inverse)
        return _unwrap(np.atleast_1d(values), single)

    def logpdf(self, x):
        w = self._require_whitening()
        points, single = _as_points(x, self.dimension)
        values = np.atleast_1d(self.logpdf_whitened(w.whiten(points)))
        return _unwrap(values + w.log_abs_det_inverse, single)

    def marginal(self, keep):
        """Analytic marginal over the coordinates in ``keep`` (0-based)."""
        return SnpMarginal(self, keep)

    def cdf_whitened(self, z):
        """Analytic CDF ``F(z) = (I0 + I1 + I2) / S`` in whitened coordinates."""
        points, single = _as_points(z, self.dimension)
        points = np.clip(points, -CDF_CLAMP, CDF_CLAMP)
        m = len(self.index_set)
        chunk = max(1, _CDF_CHUNK_ELEMENTS // max(1, m * m))
        out = np.empty(points.shape[0])
        for start in range(0, points.shape[0], chunk):
            out[start : start + chunk] = self._cdf_block(points[start : start + chunk])
        return _unwrap(out, single)

    def _cdf_block(self, points):
        alphas = self.index_set.indices
        theta = self.theta
        K = self.order
        n = points.shape[0]
        i0 = np.prod(norm_cdf(points), axis=1)
        g_prod = np.ones((n, alphas.shape[0]))
        j_prod = np.ones((n, alphas.shape[0], alphas.shape[0]))
        for i in range(self.dimension):
            a = alphas[:, i]
            g_prod *= gaussian_lower_integrals(K, points[:, i])[:, a]
            # one (K+1)x(K+1) table of J values per point and coordinate
            j_table = crossed_lower_integrals(K, points[:, i])
            j_prod *= j_table[:, a[:, None], a[None, :]]
        i1 = 2.0 * (g_prod @ theta)
        i2 = np.einsum("nab,a,b->n", j_prod, theta, theta)
        return (i0 + i1 + i2) / self.normalization

    def cdf(self, x):
        """CDF at raw coordinates; needs a diagonal whitening factor."""
        w = self._require_whitening()
        if not w.is_diagonal:
            raise UnsupportedGeometryError(
                "raw-coordinate CDF needs a diagonal whitening factor"
            )
        points, single = _as_points(x, self.dimension)
        return _unwrap(np.atleast_1d(self.cdf_whitened(w.whiten(points))), single)

    def box_probability(self, lower, upper, coords=None, space="whitened"):
        """Probability of an axis-aligned box by inclusion-exclusion over CDF corners.

        Parameters
        ----------
        lower, upper : sequence of float, length m
            Box bounds on the selected coordinates.
        coords : sequence of int, optional
            0-based coordinates the bounds refer to; defaults to all.  The
            remaining coordinates are integrated out.
        space : {"whitened", "raw"}
            Raw boxes are allowed only for a diagonal whitening factor, where
            they stay axis aligned.
        """
        d = self.dimension
        coords = tuple(range(d)) if coords is None else tuple(int(c) for c in coords)
        lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if not (len(coords) == lower.shape[0] == upper.shape[0]) or not coords:
            raise DimensionError("coords, lower and upper must have the same nonzero length")
        if len(set(coords)) != len(coords):
            raise ValueError(f"duplicate coordinates in {coords}")
        if any(c < 0 or c >= d for c in coords):
            raise ValueError(f"coordinates {coords} out of range for d={d}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lower > upper):
            raise ValueError(f"inverted box bounds: lower={lower}, upper={upper}")
        if space == "raw":
            w = self._require_whitening()
            if not w.is_diagonal:
                raise UnsupportedGeometryError(
                    "a raw axis-aligned box maps to a parallelepiped in whitened space "
                    "unless the whitening factor is diagonal"
                )
            idx = list(coords)
            scale = np.diag(w.factor)[idx]
            lower = (lower - w.mean[idx]) / scale
            upper = (upper - w.mean[idx]) / scale
        elif space != "whitened":
            raise ValueError(f"space must be 'whitened' or 'raw', got {space!r}")
        if np.any(lower == upper):
            return 0.0
        m = len(coords)
        corners = np.full((2**m, d), CDF_CLAMP)
        signs = np.empty(2**m)
        for row, choice in enumerate(itertools.product((1, 0), repeat=m)):
            # choice 1 = upper bound, 0 = lower bound
            for j, c in enumerate(coords):
                corners[row, c] = upper[j] if choice[j] else lower[j]
            signs[row] = (-1.0) ** (m - sum(choice))
        return float(np.dot(signs, self.cdf_whitened(corners)))

    def to_dict(self):
        w = self.whitening
        return {
            "format": FORMAT_TAG,
            "dimension": self.dimension,
            "order": self.order,
            "indices": self.index_set.indices.tolist(),
            "theta": self.theta.tolist(),
            "whitening": None
            if w is None
            else {"mean": w.mean.tolist(), "factor": w.factor.reshape(-1).tolist()},
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, data, tol=1e-9):
        d, K = int(data["dimension"]), int(data["order"])
        index_set = index_set_from_list(d, K, data["indices"])
        whitening = None
        if data.get("whitening") is not None:
            wd = data["whitening"]
            whitening = WhiteningTransform.from_factor(
                wd["mean"], np.asarray(wd["factor"], dtype=np.float64).reshape(d, d)
            )
        density = cls(index_set, np.asarray(data["theta"], dtype=np.float64), whitening)
        stored = float(data["normalization"])
        if abs(stored - density.normalization) > tol:
            raise ValueError(
                f"stored normalization {stored!r} disagrees with recomputed "
                f"{density.normalization!r}"
            )
        return density


class SnpMarginal:
    """Marginal of an :class:`SnpDensity` over a subset of whitened coordinates.

    Integrating ``phi(z) P(z)^2`` over the dropped coordinates leaves, by
    Hermite orthogonality,

        p_U(z_U) = phi(z_U)/S [1 + 2 sum_{alpha_-U = 0} c_alpha H_alpha_U
                   + sum_{alpha_-U = beta_-U} c_alpha c_beta alpha_-U! H_alpha_U H_beta_U].

    The double sum only couples indices that agree on the dropped
    coordinates, so it is evaluated one group of such indices at a time.
    """

    def __init__(self, density, keep):
        d = density.dimension
        keep = tuple(sorted({int(k) for k in keep}))
        if not keep:
            raise ValueError("keep set must be nonempty")
        if keep[0] < 0 or keep[-1] >= d:
            raise ValueError(f"keep set {keep} out of range for d={d}")
        self.density = density
        self.keep = keep
        self.dropped = tuple(j for j in range(d) if j not in keep)
        alphas = density.index_set.indices
        self._kept_alphas = np.ascontiguousarray(alphas[:, list(keep)])
        dropped_alphas = alphas[:, list(self.dropped)]
        groups, inverse = np.unique(dropped_alphas, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self._membership = np.zeros((alphas.shape[0], groups.shape[0]))
        self._membership[np.arange(alphas.shape[0]), inverse] = 1.0
        self._group_weights = np.array(
            [float(prod(factorial(int(a)) for a in g)) for g in groups]
        )
        self._linear_mask = ~np.any(dropped_alphas, axis=1)

    @property
    def dimension(self):
        return len(self.keep)

    def pdf(self, z):
        points, single = _as_points(z, self.dimension)
        h = _kernels.basis_matrix(points, self._kept_alphas)
        weighted = h * self.density.theta
        linear = 2.0 * weighted[:, self._linear_mask].sum(axis=1)
        grouped = weighted @ self._membership
        quadratic = (grouped**2) @ self._group_weights
        values = (
            _std_normal_pdf_nd(points)
            * (1.0 + linear + quadratic)
            / self.density.normalization
        )
        return _unwrap(values, single)

    def _embed(self, points):
        full = np.full((points.shape[0], self.density.dimension), CDF_CLAMP)
        full[:, list(self.keep)] = points
        return full

    def cdf(self, z):
        """Marginal CDF: the joint CDF with dropped coordinates sent to +inf."""
        points, single = _as_points(z, self.dimension)
        return _unwrap(np.atleast_1d(self.density.cdf_whitened(self._embed(points))), single)

    def box_probability(self, lower, upper):
        return self.density.box_probability(lower, upper, coords=self.keep)


def save_density(density, path):
    with open(path, "w") as fh:
        json.dump(density.to_dict(), fh, indent=1)
        fh.write("\n")


def load_density(path):
    with open(path) as fh:
        return SnpDensity.from_dict(json.load(fh))
