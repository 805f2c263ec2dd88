# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: ADMM iterations and the hit-and-run chain.

Semantics match ``_kernels_py`` exactly; only the arithmetic order differs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY

cnp.import_array()

DEF RUNNING = 0
DEF SOLVED = 1
DEF PRIMAL_INFEASIBLE = 2
DEF DUAL_INFEASIBLE = 3
DEF UNBOUNDED_CHORD = 4
DEF BIG = 1e20


cdef inline double _ninf(double[::1] v, Py_ssize_t n) nogil:
    cdef double r = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if fabs(v[i]) > r:
            r = fabs(v[i])
    return r


cdef void _matvec(double[:, ::1] M, double[::1] v, double[::1] out,
                  Py_ssize_t rows, Py_ssize_t cols) nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += M[i, j] * v[j]
        out[i] = acc


cdef void _matTvec(double[:, ::1] M, double[::1] v, double[::1] out,
                   Py_ssize_t rows, Py_ssize_t cols) nogil:
    cdef Py_ssize_t i, j
    for j in range(cols):
        out[j] = 0.0
    for i in range(rows):
        for j in range(cols):
            out[j] += M[i, j] * v[i]


def admm_loop(double[:, ::1] Kinv, double[:, ::1] P, double[:, ::1] A,
              double[::1] q, double[::1] l, double[::1] u, double[::1] rho,
              double sigma, double alpha, double[::1] x, double[::1] z,
              double[::1] y, int max_iter, double eps_abs, double eps_rel,
              double eps_inf, int check_every):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = z.shape[0]
    cdef Py_ssize_t i
    cdef int it = 0
    cdef int status = RUNNING
    cdef double[::1] x_prev = np.empty(n)
    cdef double[::1] y_prev = np.empty(m)
    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] tmp_m = np.empty(m)
    cdef double[::1] tmp_n = np.empty(n)
    cdef double[::1] xt = np.empty(n)
    cdef double[::1] zt = np.empty(m)
    cdef double[::1] Ax = np.empty(m)
    cdef double[::1] Px = np.empty(n)
    cdef double[::1] Aty = np.empty(n)
    cdef double[::1] dvec_n = np.empty(n)
    cdef double[::1] dvec_m = np.empty(m)
    cdef double zr, zn, r_prim, r_dual, e_prim, e_dual, a, b, c
    cdef double ndy, ndx, tol, s
    cdef bint ok

    with nogil:
        for it in range(1, max_iter + 1):
            for i in range(n):
                x_prev[i] = x[i]
            for i in range(m):
                y_prev[i] = y[i]
                tmp_m[i] = rho[i] * z[i] - y[i]
            _matTvec(A, tmp_m, tmp_n, m, n)
            for i in range(n):
                rhs[i] = sigma * x[i] - q[i] + tmp_n[i]
            _matvec(Kinv, rhs, xt, n, n)
            _matvec(A, xt, zt, m, n)
            for i in range(n):
                x[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
            for i in range(m):
                zr = alpha * zt[i] + (1.0 - alpha) * z[i]
                zn = zr + y[i] / rho[i]
                if zn < l[i]:
                    zn = l[i]
                if zn > u[i]:
                    zn = u[i]
                y[i] = y[i] + rho[i] * (zr - zn)
                z[i] = zn

            if it % check_every != 0 and it != max_iter:
                continue

            _matvec(A, x, Ax, m, n)
            _matvec(P, x, Px, n, n)
            _matTvec(A, y, Aty, m, n)
            r_prim = 0.0
            for i in range(m):
                if fabs(Ax[i] - z[i]) > r_prim:
                    r_prim = fabs(Ax[i] - z[i])
            r_dual = 0.0
            for i in range(n):
                if fabs(Px[i] + q[i] + Aty[i]) > r_dual:
                    r_dual = fabs(Px[i] + q[i] + Aty[i])
            a = _ninf(Ax, m)
            b = _ninf(z, m)
            e_prim = eps_abs + eps_rel * (a if a > b else b)
            a = _ninf(Px, n)
            b = _ninf(Aty, n)
            c = _ninf(q, n)
            if b > a:
                a = b
            if c > a:
                a = c
            e_dual = eps_abs + eps_rel * a
            if r_prim <= e_prim and r_dual <= e_dual:
                status = SOLVED
                break

            # primal infeasibility certificate
            ndy = 0.0
            for i in range(m):
                dvec_m[i] = y[i] - y_prev[i]
                if fabs(dvec_m[i]) > ndy:
                    ndy = fabs(dvec_m[i])
            if m > 0 and ndy > 1e-30:
                ok = True
                s = 0.0
                for i in range(m):
                    if dvec_m[i] > 0.0:
                        if u[i] >= BIG:
                            if dvec_m[i] > eps_inf * ndy:
                                ok = False
                        else:
                            s += u[i] * dvec_m[i]
                    elif dvec_m[i] < 0.0:
                        if l[i] <= -BIG:
                            if dvec_m[i] < -eps_inf * ndy:
                                ok = False
                        else:
                            s += l[i] * dvec_m[i]
                if ok:
                    _matTvec(A, dvec_m, tmp_n, m, n)
                    if _ninf(tmp_n, n) <= eps_inf * ndy and s <= -eps_inf * ndy:
                        status = PRIMAL_INFEASIBLE
                        break

            # dual infeasibility certificate
            ndx = 0.0
            for i in range(n):
                dvec_n[i] = x[i] - x_prev[i]
                if fabs(dvec_n[i]) > ndx:
                    ndx = fabs(dvec_n[i])
            if ndx > 1e-30:
                tol = eps_inf * ndx
                _matvec(P, dvec_n, tmp_n, n, n)
                s = 0.0
                for i in range(n):
                    s += q[i] * dvec_n[i]
                if _ninf(tmp_n, n) <= tol and s <= -tol:
                    _matvec(A, dvec_n, tmp_m, m, n)
                    ok = True
                    for i in range(m):
                        if u[i] < BIG and tmp_m[i] > tol:
                            ok = False
                            break
                        if l[i] > -BIG and tmp_m[i] < -tol:
                            ok = False
                            break
                    if ok:
                        status = DUAL_INFEASIBLE
                        break
    return it, status


def hit_and_run(double[:, ::1] H, double[::1] h, double[::1] x0,
                int n_samples, int burn_in, int thin,
                double[:, ::1] directions, double[::1] uniforms):
    cdef Py_ssize_t m = H.shape[0]
    cdef Py_ssize_t dim = x0.shape[0]
    cdef Py_ssize_t steps = burn_in + n_samples * thin
    cdef cnp.ndarray[cnp.double_t, ndim=2] out_arr = np.empty((n_samples, dim))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] x = np.array(x0, dtype=float)
    cdef double[::1] slack = np.empty(m)
    cdef double[::1] Hd = np.empty(m)
    cdef double[::1] d = np.empty(dim)
    cdef Py_ssize_t t, i, j, k = 0
    cdef double nrm, lo, hi, step, r, acc
    cdef int status = SOLVED

    with nogil:
        for t in range(steps):
            nrm = 0.0
            for j in range(dim):
                d[j] = directions[t, j]
                nrm += d[j] * d[j]
            nrm = sqrt(nrm)
            for j in range(dim):
                d[j] = d[j] / nrm
            _matvec(H, d, Hd, m, dim)
            if t % 50 == 0:
                for i in range(m):
                    acc = 0.0
                    for j in range(dim):
                        acc += H[i, j] * x[j]
                    slack[i] = h[i] - acc
            lo = -INFINITY
            hi = INFINITY
            for i in range(m):
                if Hd[i] > 1e-14:
                    r = slack[i] / Hd[i]
                    if r < hi:
                        hi = r
                elif Hd[i] < -1e-14:
                    r = slack[i] / Hd[i]
                    if r > lo:
                        lo = r
            if hi == INFINITY or lo == -INFINITY:
                status = UNBOUNDED_CHORD
                break
            if hi < lo:
                step = 0.0
            else:
                step = lo + uniforms[t] * (hi - lo)
            for j in range(dim):
                x[j] += step * d[j]
            for i in range(m):
                slack[i] -= step * Hd[i]
            if t >= burn_in and (t - burn_in + 1) % thin == 0:
                for j in range(dim):
                    out[k, j] = x[j]
                k += 1
    if status != SOLVED:
        return out_arr[:k], status
    return out_arr, status
