"""Numpy implementations of the hot kernels.

Signatures and floating-point operation order mirror ``_ckernels.pyx`` so
both backends agree to rounding.
"""
import numpy as np


def hermite_table(z, max_order):
    """Probabilists' Hermite values ``H_0..H_K`` at every entry of ``z``.

    Returns an array of shape ``(len(z), max_order + 1)``.
    """
    z = np.ascontiguousarray(z, dtype=np.float64).ravel()
    out = np.empty((z.shape[0], max_order + 1))
    out[:, 0] = 1.0
    if max_order >= 1:
        out[:, 1] = z
    for n in range(1, max_order):
        out[:, n + 1] = z * out[:, n] - n * out[:, n - 1]
    return out


def basis_matrix(points, alphas):
    """Tensor Hermite basis ``prod_j H_{alpha_j}(z_j)`` for each point and index.

    Parameters
    ----------
    points : ndarray, shape (N, d)
    alphas : ndarray of int64, shape (M, d)

    Returns
    -------
    ndarray, shape (N, M)
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.int64)
    n, d = points.shape
    m = alphas.shape[0]
    max_order = int(alphas.max()) if alphas.size else 0
    out = np.ones((n, m))
    for j in range(d):
        table = hermite_table(points[:, j], max_order)
        out *= table[:, alphas[:, j]]
    return out


def _lorenz(x, y, z, s, rho, beta):
    return s * (y - x), x * (rho - z) - y, x * y - beta * z


def lorenz_rk4(points, s, rho, beta, h, n_steps, last_step):
    """Fixed-step RK4 for the Lorenz field over a whole ensemble.

    The first ``n_steps - 1`` steps have length ``h`` and the final one has
    length ``last_step``.

    Returns
    -------
    out : ndarray, shape (N, 3)
    bad_step : ndarray of int64, shape (N,)
        Index of the first step after which the state was non-finite, or -1.
    """
    state = np.array(points, dtype=np.float64, order="C", copy=True)
    x, y, z = state[:, 0].copy(), state[:, 1].copy(), state[:, 2].copy()
    bad_step = np.full(state.shape[0], -1, dtype=np.int64)
    for k in range(n_steps):
        dt = h if k < n_steps - 1 else last_step
        half = 0.5 * dt
        sixth = dt / 6.0
        ax, ay, az = _lorenz(x, y, z, s, rho, beta)
        bx, by, bz = _lorenz(x + half * ax, y + half * ay, z + half * az, s, rho, beta)
        cx, cy, cz = _lorenz(x + half * bx, y + half * by, z + half * bz, s, rho, beta)
        ex, ey, ez = _lorenz(x + dt * cx, y + dt * cy, z + dt * cz, s, rho, beta)
        x = x + sixth * (ax + 2.0 * bx + 2.0 * cx + ex)
        y = y + sixth * (ay + 2.0 * by + 2.0 * cy + ey)
        z = z + sixth * (az + 2.0 * bz + 2.0 * cz + ez)
        bad = ~(np.isfinite(x) & np.isfinite(y) & np.isfinite(z)) & (bad_step < 0)
        if bad.any():
            bad_step[bad] = k
    state[:, 0], state[:, 1], state[:, 2] = x, y, z
    return state, bad_step
