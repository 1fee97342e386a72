"""Probabilists' Hermite polynomials and their Gaussian-weighted lower integrals.

``H_n`` is orthogonal under the standard normal density ``phi`` with
``E[H_m H_n] = n! delta_mn``.  The lower integrals

    G_n(x)    = int_{-inf}^x phi(t) H_n(t) dt
    J_pq(x)   = int_{-inf}^x phi(t) H_p(t) H_q(t) dt

have closed forms and are the building blocks of the analytic SNP CDF.
"""
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import erfc

from . import _kernels

#: Largest order accepted by the product linearization (exact int64 coefficients).
MAX_LINEARIZATION_ORDER = 16

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_cdf(x):
    """Standard normal CDF via the complementary error function."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * erfc(-x / np.sqrt(2.0))


def hermite_eval(n, z):
    """Evaluate ``H_n(z)`` by the three-term recurrence.

    Works elementwise on arrays; a scalar ``z`` gives a float.

    >>> hermite_eval(4, 2.0)
    -5.0
    """
    if n < 0:
        raise ValueError(f"Hermite order must be nonnegative, got {n}")
    z = np.asarray(z, dtype=np.float64)
    prev = np.ones_like(z)
    if n == 0:
        return prev[()] if prev.ndim == 0 else prev
    cur = z.copy()
    for k in range(1, n):
        prev, cur = cur, z * cur - k * prev
    return cur[()] if cur.ndim == 0 else cur


def hermite_eval_all(max_order, z):
    """All orders ``H_0(z) .. H_K(z)``.

    Returns an array whose last axis has length ``max_order + 1``; a scalar
    ``z`` yields a 1-D table.
    """
    if max_order < 0:
        raise ValueError(f"max_order must be nonnegative, got {max_order}")
    z = np.asarray(z, dtype=np.float64)
    table = _kernels.hermite_table(z.ravel(), int(max_order))
    return table.reshape(z.shape + (max_order + 1,))


def gaussian_lower_integral(n, x):
    """``G_n(x)``: ``Phi(x)`` for ``n == 0`` and ``-H_{n-1}(x) phi(x)`` otherwise."""
    if n < 0:
        raise ValueError(f"order must be nonnegative, got {n}")
    x = np.asarray(x, dtype=np.float64)
    if n == 0:
        out = norm_cdf(x)
    else:
        pdf = norm_pdf(x)
        # phi underflows to exactly 0 well before H_{n-1} overflows
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.where(pdf == 0.0, 0.0, -hermite_eval(n - 1, x) * pdf)
    return out[()] if out.ndim == 0 else out


def gaussian_lower_integrals(max_order, x):
    """Table of ``G_0(x) .. G_K(x)`` along a new trailing axis."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape + (max_order + 1,))
    out[..., 0] = norm_cdf(x)
    if max_order >= 1:
        pdf = norm_pdf(x)[..., None]
        with np.errstate(invalid="ignore", over="ignore"):
            h = hermite_eval_all(max_order - 1, x)
            out[..., 1:] = np.where(pdf == 0.0, 0.0, -h * pdf)
    return out


def hermite_product_linearization(i, j):
    """Expand ``H_i H_j`` in the Hermite basis.

    Returns ``[(order, coefficient), ...]`` for
    ``k = 0 .. min(i, j)`` with ``order = i + j - 2k`` and integer
    coefficient ``k! C(i, k) C(j, k)``.

    >>> hermite_product_linearization(2, 2)
    [(4, 1), (2, 4), (0, 2)]
    """
    if i < 0 or j < 0:
        raise ValueError("orders must be nonnegative")
    if max(i, j) > MAX_LINEARIZATION_ORDER:
        raise ValueError(
            f"orders above {MAX_LINEARIZATION_ORDER} are not supported (got {i}, {j})"
        )
    return [
        (i + j - 2 * k, factorial(k) * comb(i, k) * comb(j, k))
        for k in range(min(i, j) + 1)
    ]


@lru_cache(maxsize=None)
def linearization_tensor(max_order):
    """Dense ``L[p, q, n]`` with ``H_p H_q = sum_n L[p, q, n] H_n`` for ``p, q <= K``.

    The array is read-only and shared between callers.
    """
    size = max_order + 1
    lin = np.zeros((size, size, 2 * max_order + 1))
    for p in range(size):
        for q in range(size):
            for order, coef in hermite_product_linearization(p, q):
                lin[p, q, order] = coef
    lin.setflags(write=False)
    return lin


def crossed_lower_integral(p, q, x):
    """``J_{p,q}(x) = sum_k k! C(p,k) C(q,k) G_{p+q-2k}(x)``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    for order, coef in hermite_product_linearization(p, q):
        out = out + coef * gaussian_lower_integral(order, x)
    return out[()] if out.ndim == 0 else out


def crossed_lower_integrals(max_order, x):
    """Table ``J[..., p, q]`` of ``J_{p,q}(x)`` for ``0 <= p, q <= K``."""
    g = gaussian_lower_integrals(2 * max_order, x)
    return np.einsum("pqn,...n->...pq", linearization_tensor(max_order), g)
