# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent kernels.

Same functions and semantics as ``covdet._kernels_py``; see that module for
the array conventions.
"""
import numpy as np

cimport cython
from libc.math cimport fabs, log1p, sqrt, copysign
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport dgeev

from covdet._kernels_py import NumericalFailure

cdef double EPS = np.finfo(float).eps
cdef double IMAG_TOL = 1e-8


cdef int _stats(double complex[:, :, ::1] inv, double complex[:, :, ::1] sig_hat,
                double complex[::1] s, double[::1] g, double complex[:, ::1] y,
                double[::1] xi, double[::1] zeta) nogil:
    cdef Py_ssize_t B = inv.shape[0]
    cdef Py_ssize_t L = inv.shape[1]
    cdef Py_ssize_t j, l, m
    cdef double complex acc, q, r, t
    for j in range(B):
        q = 0.0
        for l in range(L):
            acc = 0.0
            for m in range(L):
                acc = acc + inv[j, l, m] * s[m]
            y[j, l] = acc
            q = q + s[l].conjugate() * acc
        r = 0.0
        for l in range(L):
            acc = 0.0
            for m in range(L):
                acc = acc + sig_hat[j, l, m] * y[j, m]
            r = r + y[j, l].conjugate() * acc
        if fabs(q.imag) > IMAG_TOL * fabs(q.real) or fabs(r.imag) > IMAG_TOL * fabs(r.real):
            return -1
        xi[j] = g[j] * q.real
        zeta[j] = g[j] * r.real
    return 0


cdef int _update(double complex[:, :, ::1] inv, double complex[:, ::1] y, double[::1] g,
                 double[::1] xi, double d) nogil:
    cdef Py_ssize_t B = inv.shape[0]
    cdef Py_ssize_t L = inv.shape[1]
    cdef Py_ssize_t j, l, m
    cdef double den, coef
    cdef double complex yl
    if d == 0.0:
        return 0
    for j in range(B):
        if 1.0 + d * xi[j] <= 0.0:
            return -1
    for j in range(B):
        den = 1.0 + d * xi[j]
        coef = d * g[j] / den
        for l in range(L):
            yl = coef * y[j, l]
            for m in range(L):
                inv[j, l, m] = inv[j, l, m] - yl * y[j, m].conjugate()
    return 0


def coord_stats(double complex[:, :, ::1] inv, double complex[:, :, ::1] sig_hat,
                double complex[::1] s, double[::1] g, double complex[:, ::1] y,
                double[::1] xi, double[::1] zeta):
    if _stats(inv, sig_hat, s, g, y, xi, zeta) != 0:
        raise NumericalFailure("imaginary residue in quadratic form; inverse cache corrupted")


def rank_one_update(double complex[:, :, ::1] inv, double complex[:, ::1] y, double[::1] g,
                    double[::1] xi, double d):
    if _update(inv, y, g, xi, d) != 0:
        raise NumericalFailure("Sherman-Morrison denominator is not positive; infeasible step")


cdef inline double _log1p_minus_x(double x) nogil:
    cdef double x2
    if fabs(x) < 1e-3:
        x2 = x * x
        return x2 * (-0.5 + x * (1.0 / 3.0 + x * (-0.25 + x * 0.2)))
    return log1p(x) - x


cdef inline void _subvalue(double d, double* xi, double* zeta, int B, double* val, double* mag) nogil:
    cdef int j
    cdef double x, t1, t2
    val[0] = 0.0
    mag[0] = 0.0
    for j in range(B):
        x = d * xi[j]
        t1 = log1p(x)
        t2 = d * zeta[j] / (1.0 + x)
        val[0] += t1 - t2
        mag[0] += fabs(t1) + fabs(t2)


cdef inline void _phi_derivs(double d, double* xi, double* zeta, int B, double* f1, double* f2) nogil:
    cdef int j
    cdef double w
    f1[0] = 0.0
    f2[0] = 0.0
    for j in range(B):
        w = 1.0 + d * xi[j]
        f1[0] += (xi[j] * w - zeta[j]) / (w * w)
        f2[0] += (-xi[j] * xi[j] * w + 2.0 * xi[j] * zeta[j]) / (w * w * w)


cdef struct Picker:
    int have
    double best_d
    double best_v
    double best_abs


cdef inline void _offer(Picker* p, double d, double v, double mag) nogil:
    # candidates may arrive in any order: keep the lowest value, breaking
    # rounding-level ties toward the smallest |d|
    cdef double tol
    if not p.have:
        p.have = 1
        p.best_d = d
        p.best_v = v
        p.best_abs = fabs(d)
        return
    tol = 8.0 * EPS * (mag + fabs(p.best_v))
    if fabs(d) < p.best_abs:
        if v <= p.best_v + tol:
            p.best_d = d
            p.best_v = v
            p.best_abs = fabs(d)
    else:
        if v < p.best_v - tol:
            p.best_d = d
            p.best_v = v
            p.best_abs = fabs(d)


cdef class _Work:
    cdef int B
    cdef int n
    cdef double* poly
    cdef double* term
    cdef double* tmp
    cdef double* m2
    cdef double* comp
    cdef double* wr
    cdef double* wi
    cdef double* work
    cdef int lwork

    def __cinit__(self, int B):
        self.B = B
        self.n = 2 * B
        self.lwork = 8 * self.n + 16
        self.poly = <double*> malloc(self.n * sizeof(double))
        self.term = <double*> malloc(self.n * sizeof(double))
        self.tmp = <double*> malloc(self.n * sizeof(double))
        self.m2 = <double*> malloc(B * sizeof(double))
        self.comp = <double*> malloc(self.n * self.n * sizeof(double))
        self.wr = <double*> malloc(self.n * sizeof(double))
        self.wi = <double*> malloc(self.n * sizeof(double))
        self.work = <double*> malloc(self.lwork * sizeof(double))

    def __dealloc__(self):
        free(self.poly); free(self.term); free(self.tmp); free(self.m2)
        free(self.comp); free(self.wr); free(self.wi); free(self.work)


cdef double _solve_exact(_Work w, double* xi, double* zeta, double a):
    cdef int B = w.B
    cdef int j, k, t, u, deg, n, info, one = 1, ldv = 1
    cdef double lo = -a, hi = 1.0 - a
    cdef double mk, scale, lead, d, dn, f1, f2, g1, g2, v, mag
    cdef double dummy = 0.0
    cdef char jobn = b'N'
    cdef Picker p
    p.have = 0
    for k in range(B):
        mk = xi[k] if xi[k] > 1.0 else 1.0
        w.m2[k] = mk * mk
    for t in range(2 * B):
        w.poly[t] = 0.0
    for j in range(B):
        w.term[0] = (xi[j] - zeta[j]) / w.m2[j]
        w.term[1] = xi[j] * xi[j] / w.m2[j]
        deg = 1
        for k in range(B):
            if k == j:
                continue
            for t in range(deg + 3):
                w.tmp[t] = 0.0
            for t in range(deg + 1):
                w.tmp[t] += w.term[t] / w.m2[k]
                w.tmp[t + 1] += w.term[t] * 2.0 * xi[k] / w.m2[k]
                w.tmp[t + 2] += w.term[t] * xi[k] * xi[k] / w.m2[k]
            deg += 2
            for t in range(deg + 1):
                w.term[t] = w.tmp[t]
        for t in range(deg + 1):
            w.poly[t] += w.term[t]
    scale = 0.0
    for t in range(2 * B):
        if fabs(w.poly[t]) > scale:
            scale = fabs(w.poly[t])

    _subvalue(lo, xi, zeta, B, &v, &mag); _offer(&p, lo, v, mag)
    _subvalue(hi, xi, zeta, B, &v, &mag); _offer(&p, hi, v, mag)
    _offer(&p, 0.0, 0.0, 0.0)
    if scale == 0.0:
        return p.best_d
    n = 2 * B - 1
    while n > 0 and fabs(w.poly[n]) <= 1e-14 * scale:
        n -= 1
    if n < 1:
        return p.best_d
    lead = w.poly[n]
    for t in range(n * n):
        w.comp[t] = 0.0
    for t in range(n - 1):
        w.comp[(t + 1) + t * n] = 1.0
    for t in range(n):
        w.comp[t + (n - 1) * n] = -w.poly[t] / lead
    dgeev(&jobn, &jobn, &n, w.comp, &n, w.wr, w.wi, &dummy, &ldv, &dummy, &ldv, w.work, &w.lwork, &info)
    if info != 0:
        return p.best_d
    for u in range(n):
        if fabs(w.wi[u]) >= 1e-8 * (1.0 + fabs(w.wr[u])):
            continue
        d = w.wr[u]
        if d < lo - 1e-9 or d > hi + 1e-9:
            continue
        if d < lo:
            d = lo
        if d > hi:
            d = hi
        for t in range(3):
            _phi_derivs(d, xi, zeta, B, &f1, &f2)
            if f2 == 0.0:
                break
            dn = d - f1 / f2
            if dn < lo:
                dn = lo
            if dn > hi:
                dn = hi
            _phi_derivs(dn, xi, zeta, B, &g1, &g2)
            if fabs(g1) < fabs(f1):
                d = dn
            else:
                break
        _subvalue(d, xi, zeta, B, &v, &mag)
        _offer(&p, d, v, mag)
    return p.best_d


def solve_exact(double[::1] xi, double[::1] zeta, double a):
    cdef _Work w = _Work(xi.shape[0])
    return _solve_exact(w, &xi[0], &zeta[0], a)


cdef double _init_mu(double* xi, double* zeta, int B, int b, double floor) nogil:
    cdef int j
    cdef double tot = 0.0
    for j in range(B):
        if j != b:
            tot += xi[j] * (2.0 * zeta[j] - xi[j])
    return tot if tot > 0.0 else floor


def init_mu(double[::1] xi, double[::1] zeta, int b, double mu0_floor):
    return _init_mu(&xi[0], &zeta[0], xi.shape[0], b, mu0_floor)


cdef inline double _cubic(double d, double xi, double zeta, double c, double mu) nogil:
    cdef double w = 1.0 + d * xi
    return w * w * (c + mu * d) + xi * w - zeta


cdef inline double _surrogate(double d, double xi, double zeta, double c, double mu, double* mag) nogil:
    cdef double x = d * xi
    cdef double t1 = log1p(x)
    cdef double t2 = d * zeta / (1.0 + x)
    cdef double t3 = c * d
    cdef double t4 = 0.5 * mu * d * d
    mag[0] = fabs(t1) + fabs(t2) + fabs(t3) + fabs(t4)
    return t1 - t2 + t3 + t4


cdef double _safe_root(double left, double right, double fl, double xi, double zeta, double c, double mu,
                       double sc, double A, double Bq, double Cq) nogil:
    cdef double x = 0.5 * (left + right)
    cdef double fx, dfx, xn, ax
    cdef int it
    for it in range(100):
        fx = _cubic(x, xi, zeta, c, mu) / sc
        if fx == 0.0:
            return x
        if (fx > 0.0) == (fl > 0.0):
            left = x
            fl = fx
        else:
            right = x
        dfx = (3.0 * A * x + 2.0 * Bq) * x + Cq
        if dfx != 0.0:
            xn = x - fx / dfx
        else:
            xn = 0.5 * (left + right)
        if not (left < xn < right):
            xn = 0.5 * (left + right)
        ax = fabs(x) if fabs(x) > 1.0 else 1.0
        if fabs(xn - x) <= 2.0 * EPS * ax or right - left <= 4.0 * EPS * ax:
            return xn
        x = xn
    return x


cdef int _cubic_roots(double lo, double hi, double xi, double zeta, double c, double mu, double* out) nogil:
    cdef double sc = (xi if xi > 1.0 else 1.0)
    sc = sc * sc
    cdef double A = xi * xi * mu / sc
    cdef double Bq = (2.0 * xi * mu + xi * xi * c) / sc
    cdef double Cq = (mu + 2.0 * xi * c + xi * xi) / sc
    cdef double qa = 3.0 * A, qb = 2.0 * Bq, qc = Cq
    cdef double knots[4]
    cdef double cr[2]
    cdef int ncr = 0, nk, i, nroots = 0
    cdef double disc, sq, t, tmp, fl, fr
    if qa != 0.0:
        disc = qb * qb - 4.0 * qa * qc
        if disc > 0.0:
            sq = sqrt(disc)
            t = -0.5 * (qb + copysign(sq, qb))
            cr[ncr] = t / qa
            ncr += 1
            if t != 0.0:
                cr[ncr] = qc / t
                ncr += 1
    elif qb != 0.0:
        cr[ncr] = -qc / qb
        ncr += 1
    if ncr == 2 and cr[0] > cr[1]:
        tmp = cr[0]; cr[0] = cr[1]; cr[1] = tmp
    nk = 0
    knots[nk] = lo
    nk += 1
    for i in range(ncr):
        if lo < cr[i] < hi:
            knots[nk] = cr[i]
            nk += 1
    knots[nk] = hi
    nk += 1
    for i in range(nk - 1):
        fl = _cubic(knots[i], xi, zeta, c, mu) / sc
        fr = _cubic(knots[i + 1], xi, zeta, c, mu) / sc
        if fl == 0.0:
            out[nroots] = knots[i]
            nroots += 1
            continue
        if fr == 0.0:
            out[nroots] = knots[i + 1]
            nroots += 1
            continue
        if (fl > 0.0) == (fr > 0.0):
            continue
        out[nroots] = _safe_root(knots[i], knots[i + 1], fl, xi, zeta, c, mu, sc, A, Bq, Cq)
        nroots += 1
    return nroots


cdef int _decrease_ok(double d, double* xi, double* zeta, int B, int b, double mu) nogil:
    cdef int j
    cdef double lhs = 0.0, mag = 0.0, x, t1, t2, rhs
    if d == 0.0:
        return 1
    for j in range(B):
        if j == b:
            continue
        x = d * xi[j]
        t1 = _log1p_minus_x(x)
        t2 = d * zeta[j] * x / (1.0 + x)
        lhs += t1 + t2
        mag += fabs(t1) + fabs(t2) + fabs(x) * EPS
    rhs = 0.5 * mu * d * d
    return lhs <= rhs + 8.0 * EPS * (mag + rhs)


cdef int _solve_inexact(double* xi, double* zeta, int B, int b, double a, double mu0, double beta,
                        int max_backtracks, double* d_out, double* mu_out) nogil:
    cdef double lo = -a, hi = 1.0 - a
    cdef double xb = xi[b], zb = zeta[b]
    cdef double c = 0.0, mu = mu0, v, mag
    cdef double roots[6]
    cdef int j, it, nr, r
    cdef Picker p
    for j in range(B):
        if j != b:
            c += xi[j] - zeta[j]
    for it in range(max_backtracks + 1):
        p.have = 0
        v = _surrogate(lo, xb, zb, c, mu, &mag); _offer(&p, lo, v, mag)
        v = _surrogate(hi, xb, zb, c, mu, &mag); _offer(&p, hi, v, mag)
        _offer(&p, 0.0, 0.0, 0.0)
        nr = _cubic_roots(lo, hi, xb, zb, c, mu, roots)
        for r in range(nr):
            v = _surrogate(roots[r], xb, zb, c, mu, &mag)
            _offer(&p, roots[r], v, mag)
        if _decrease_ok(p.best_d, xi, zeta, B, b, mu):
            d_out[0] = p.best_d
            mu_out[0] = mu
            return it
        mu *= beta
    return -1


def solve_inexact(double[::1] xi, double[::1] zeta, int b, double a, double mu0, double beta, int max_backtracks):
    cdef double d, mu
    cdef int it = _solve_inexact(&xi[0], &zeta[0], xi.shape[0], b, a, mu0, beta, max_backtracks, &d, &mu)
    if it < 0:
        raise NumericalFailure("sufficient decrease not reached within the backtracking cap")
    return d, mu, it


def sweep(double complex[:, :, ::1] inv, double complex[:, :, ::1] sig_hat,
          double complex[:, ::1] St, double[:, ::1] Gt, long[::1] cell, double[::1] a,
          long[::1] order, bint exact, double mu0_floor, double beta, int max_backtracks):
    cdef Py_ssize_t B = inv.shape[0]
    cdef Py_ssize_t L = inv.shape[1]
    cdef Py_ssize_t k, i
    cdef int moved = 0, rc
    cdef double ai, d, mu0, mu, anew
    cdef double complex[:, ::1] y = np.empty((B, L), dtype=complex)
    cdef double[::1] xi = np.empty(B)
    cdef double[::1] zeta = np.empty(B)
    cdef _Work w = _Work(B)
    for k in range(order.shape[0]):
        i = order[k]
        if _stats(inv, sig_hat, St[i], Gt[i], y, xi, zeta) != 0:
            raise NumericalFailure("imaginary residue in quadratic form; inverse cache corrupted")
        ai = a[i]
        if exact:
            d = _solve_exact(w, &xi[0], &zeta[0], ai)
        else:
            mu0 = _init_mu(&xi[0], &zeta[0], B, cell[i], mu0_floor)
            if _solve_inexact(&xi[0], &zeta[0], B, cell[i], ai, mu0, beta, max_backtracks, &d, &mu) < 0:
                raise NumericalFailure("sufficient decrease not reached within the backtracking cap")
        if d != 0.0:
            anew = ai + d
            if anew < 0.0:
                anew = 0.0
            if anew > 1.0:
                anew = 1.0
            a[i] = anew
            rc = _update(inv, y, Gt[i], xi, anew - ai)
            if rc != 0:
                raise NumericalFailure("Sherman-Morrison denominator is not positive; infeasible step")
            moved += 1
    return moved
