# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite

cnp.import_array()


def hermite_table(z, int max_order):
    cdef const double[::1] zz = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t n = zz.shape[0]
    out_arr = np.empty((n, max_order + 1))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    cdef int k
    cdef double zi
    with nogil:
        for i in range(n):
            zi = zz[i]
            out[i, 0] = 1.0
            if max_order >= 1:
                out[i, 1] = zi
            for k in range(1, max_order):
                out[i, k + 1] = zi * out[i, k] - k * out[i, k - 1]
    return out_arr


def basis_matrix(points, alphas):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const long long[:, ::1] al = np.ascontiguousarray(alphas, dtype=np.int64)
    cdef Py_ssize_t n = pts.shape[0], d = pts.shape[1], m = al.shape[0]
    cdef int max_order = int(np.max(alphas)) if m > 0 else 0
    out_arr = np.empty((n, m))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] table = np.empty((d, max_order + 1))
    cdef Py_ssize_t i, j, a
    cdef int k
    cdef double zj, acc
    with nogil:
        for i in range(n):
            for j in range(d):
                zj = pts[i, j]
                table[j, 0] = 1.0
                if max_order >= 1:
                    table[j, 1] = zj
                for k in range(1, max_order):
                    table[j, k + 1] = zj * table[j, k] - k * table[j, k - 1]
            for a in range(m):
                acc = 1.0
                for j in range(d):
                    acc = acc * table[j, al[a, j]]
                out[i, a] = acc
    return out_arr


def lorenz_rk4(points, double s, double rho, double beta, double h,
               int n_steps, double last_step):
    out_arr = np.array(points, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] st = out_arr
    cdef Py_ssize_t n = st.shape[0]
    bad_arr = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] bad = bad_arr
    cdef Py_ssize_t i
    cdef int k
    cdef double x, y, z, dt, half, sixth
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz, ex, ey, ez, px, py, pz
    with nogil:
        for i in range(n):
            x = st[i, 0]
            y = st[i, 1]
            z = st[i, 2]
            for k in range(n_steps):
                dt = h if k < n_steps - 1 else last_step
                half = 0.5 * dt
                sixth = dt / 6.0
                ax = s * (y - x)
                ay = x * (rho - z) - y
                az = x * y - beta * z
                px = x + half * ax
                py = y + half * ay
                pz = z + half * az
                bx = s * (py - px)
                by = px * (rho - pz) - py
                bz = px * py - beta * pz
                px = x + half * bx
                py = y + half * by
                pz = z + half * bz
                cx = s * (py - px)
                cy = px * (rho - pz) - py
                cz = px * py - beta * pz
                px = x + dt * cx
                py = y + dt * cy
                pz = z + dt * cz
                ex = s * (py - px)
                ey = px * (rho - pz) - py
                ez = px * py - beta * pz
                x = x + sixth * (ax + 2.0 * bx + 2.0 * cx + ex)
                y = y + sixth * (ay + 2.0 * by + 2.0 * cy + ey)
                z = z + sixth * (az + 2.0 * bz + 2.0 * cz + ez)
                if bad[i] < 0 and not (isfinite(x) and isfinite(y) and isfinite(z)):
                    bad[i] = k
            st[i, 0] = x
            st[i, 1] = y
            st[i, 2] = z
    return out_arr, bad_arr
