"""Pure-Python (numpy) implementation of the coordinate-descent kernels.

This is the reference backend and the fallback used when the compiled
extension is unavailable. ``covdet._kernels`` implements the same functions
with the same signatures.

Array conventions: ``inv`` and ``sig_hat`` are (B, L, L) complex128,
``St`` is the transposed signature matrix (BN, L), ``Gt`` the transposed
gain matrix (BN, B), ``cell`` the own-cell index of every device.
"""
import math

import numpy as np

EPS = np.finfo(float).eps
IMAG_TOL = 1e-8


class NumericalFailure(ArithmeticError):
    """Raised when a kernel detects a corrupted or infeasible numerical state."""


def coord_stats(inv, sig_hat, s, g, y, xi, zeta):
    """Fill ``y[j] = inv[j] s`` and the quadratic forms xi, zeta for every cell j."""
    y[...] = inv @ s
    q = y @ s.conj()  # s^H inv s
    r = np.einsum("bl,blm,bm->b", y.conj(), sig_hat, y)
    if np.any(np.abs(q.imag) > IMAG_TOL * np.abs(q.real)) or np.any(np.abs(r.imag) > IMAG_TOL * np.abs(r.real)):
        raise NumericalFailure("imaginary residue in quadratic form; inverse cache corrupted")
    xi[...] = g * q.real
    zeta[...] = g * r.real


def rank_one_update(inv, y, g, xi, d):
    """Sherman-Morrison update of every cached inverse after a_i += d."""
    if d == 0.0:
        return
    den = 1.0 + d * xi
    if np.any(den <= 0.0):
        raise NumericalFailure("Sherman-Morrison denominator is not positive; infeasible step")
    coef = d * g / den
    inv -= coef[:, None, None] * (y[:, :, None] * y.conj()[:, None, :])


def _log1p_minus_x(x):
    if abs(x) < 1e-3:
        x2 = x * x
        return x2 * (-0.5 + x * (1.0 / 3.0 + x * (-0.25 + x * 0.2)))
    return math.log1p(x) - x


def subproblem_value(d, xi, zeta):
    """Change of the objective when one coordinate moves by ``d`` (and its rounding scale)."""
    val = 0.0
    mag = 0.0
    for xj, zj in zip(xi, zeta):
        x = d * xj
        t1 = math.log1p(x)
        t2 = d * zj / (1.0 + x)
        val += t1 - t2
        mag += abs(t1) + abs(t2)
    return val, mag


def _phi_derivs(d, xi, zeta):
    w = 1.0 + d * xi
    f1 = np.sum((xi * w - zeta) / (w * w))
    f2 = np.sum((-xi * xi * w + 2.0 * xi * zeta) / (w * w * w))
    return f1, f2


def exact_polynomial(xi, zeta):
    """Coefficients (low to high degree) of the cleared-denominator derivative.

    Each factor is divided by max(1, xi_k)^2 so coefficients stay bounded.
    """
    B = len(xi)
    m2 = np.maximum(1.0, np.asarray(xi)) ** 2
    quads = [np.array([1.0, 2.0 * xk, xk * xk]) / mk for xk, mk in zip(xi, m2)]
    poly = np.zeros(2 * B)
    for j in range(B):
        term = np.array([xi[j] - zeta[j], xi[j] * xi[j]]) / m2[j]
        for k in range(B):
            if k != j:
                term = np.convolve(term, quads[k])
        poly[: term.size] += term
    return poly


def _pick(cands, values_and_mags):
    """Lowest value wins; rounding-level ties go to the smallest |d|."""
    best_d = None
    best_v = 0.0
    for d, (v, mag) in zip(cands, values_and_mags):
        if best_d is None:
            best_d, best_v = d, v
            continue
        tol = 8.0 * EPS * (mag + abs(best_v))
        if abs(d) < abs(best_d):
            if v <= best_v + tol:
                best_d, best_v = d, v
        elif v < best_v - tol:
            best_d, best_v = d, v
    return best_d


def solve_exact(xi, zeta, a):
    """Globally minimise the one-coordinate objective over [-a, 1 - a]."""
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    lo, hi = -a, 1.0 - a
    poly = exact_polynomial(xi, zeta)
    scale = np.max(np.abs(poly))
    cands = [lo, hi, 0.0]
    vals = [subproblem_value(lo, xi, zeta), subproblem_value(hi, xi, zeta), (0.0, 0.0)]
    if scale > 0.0:
        poly = poly / scale
        n = poly.size - 1
        while n > 0 and abs(poly[n]) <= 1e-14:
            n -= 1
        if n >= 1:
            c = poly[: n + 1] / poly[n]
            comp = np.zeros((n, n))
            if n > 1:
                comp[np.arange(1, n), np.arange(n - 1)] = 1.0
            comp[:, n - 1] = -c[:n]
            roots = np.linalg.eigvals(comp)
            for z in roots:
                if abs(z.imag) >= 1e-8 * (1.0 + abs(z.real)):
                    continue
                d = z.real
                if d < lo - 1e-9 or d > hi + 1e-9:
                    continue
                d = min(max(d, lo), hi)
                for _ in range(3):
                    f1_, f2_ = _phi_derivs(d, xi, zeta)
                    if f2_ == 0.0:
                        break
                    dn = min(max(d - f1_ / f2_, lo), hi)
                    g1, _ = _phi_derivs(dn, xi, zeta)
                    if abs(g1) < abs(f1_):
                        d = dn
                    else:
                        break
                cands.append(d)
                vals.append(subproblem_value(d, xi, zeta))
    return float(_pick(cands, vals))


def init_mu(xi, zeta, b, mu0_floor):
    """Second-order start for the proximal weight: sum of off-cell Hessian diagonals."""
    tot = 0.0
    for j in range(len(xi)):
        if j != b:
            tot += xi[j] * (2.0 * zeta[j] - xi[j])
    return tot if tot > 0.0 else mu0_floor


def _cubic_eval(d, xi, zeta, c, mu):
    w = 1.0 + d * xi
    return w * w * (c + mu * d) + xi * w - zeta


def _cubic_roots_in(lo, hi, xi, zeta, c, mu):
    """Real roots in [lo, hi] of (1 + d xi)^2 (c + mu d) + xi (1 + d xi) - zeta."""
    sc = max(1.0, xi) ** 2
    A = xi * xi * mu / sc
    Bq = (2.0 * xi * mu + xi * xi * c) / sc
    Cq = (mu + 2.0 * xi * c + xi * xi) / sc
    # stationary points of the cubic: 3A d^2 + 2Bq d + Cq = 0
    knots = [lo]
    qa, qb, qc = 3.0 * A, 2.0 * Bq, Cq
    crit = []
    if qa != 0.0:
        disc = qb * qb - 4.0 * qa * qc
        if disc > 0.0:
            sq = math.sqrt(disc)
            t = -0.5 * (qb + math.copysign(sq, qb))
            crit = [t / qa] + ([qc / t] if t != 0.0 else [])
    elif qb != 0.0:
        crit = [-qc / qb]
    knots += sorted(x for x in crit if lo < x < hi)
    knots.append(hi)

    def f(d):
        return _cubic_eval(d, xi, zeta, c, mu) / sc

    def fp(d):
        return (3.0 * A * d + 2.0 * Bq) * d + Cq

    roots = []
    for left, right in zip(knots[:-1], knots[1:]):
        fl, fr = f(left), f(right)
        if fl == 0.0:
            roots.append(left)
            continue
        if fr == 0.0:
            roots.append(right)
            continue
        if (fl > 0.0) == (fr > 0.0):
            continue
        roots.append(_safe_newton(f, fp, left, right, fl))
    return roots


def _safe_newton(f, fp, left, right, fl):
    x = 0.5 * (left + right)
    for _ in range(100):
        fx = f(x)
        if fx == 0.0:
            return x
        if (fx > 0.0) == (fl > 0.0):
            left, fl = x, fx
        else:
            right = x
        dfx = fp(x)
        xn = x - fx / dfx if dfx != 0.0 else 0.5 * (left + right)
        if not (left < xn < right):
            xn = 0.5 * (left + right)
        if abs(xn - x) <= 2.0 * EPS * max(1.0, abs(x)) or right - left <= 4.0 * EPS * max(1.0, abs(x)):
            return xn
        x = xn
    return x


def _surrogate(d, xi, zeta, c, mu):
    x = d * xi
    t1 = math.log1p(x)
    t2 = d * zeta / (1.0 + x)
    t3 = c * d
    t4 = 0.5 * mu * d * d
    return t1 - t2 + t3 + t4, abs(t1) + abs(t2) + abs(t3) + abs(t4)


def _decrease_ok(d, xi, zeta, b, mu):
    """Sufficient decrease test of the off-cell terms against their quadratic model."""
    if d == 0.0:
        return True
    lhs = 0.0
    mag = 0.0
    for j in range(len(xi)):
        if j == b:
            continue
        x = d * xi[j]
        t1 = _log1p_minus_x(x)
        t2 = d * zeta[j] * x / (1.0 + x)
        lhs += t1 + t2
        mag += abs(t1) + abs(t2) + abs(x) * EPS
    rhs = 0.5 * mu * d * d
    return lhs <= rhs + 8.0 * EPS * (mag + rhs)


def solve_inexact(xi, zeta, b, a, mu0, beta, max_backtracks):
    """Backtracking on the proximal weight until the sufficient decrease test holds.

    Returns (d, mu, backtracks).
    """
    lo, hi = -a, 1.0 - a
    xb, zb = float(xi[b]), float(zeta[b])
    c = 0.0
    for j in range(len(xi)):
        if j != b:
            c += xi[j] - zeta[j]
    mu = mu0
    for it in range(max_backtracks + 1):
        cands = [lo, hi, 0.0] + _cubic_roots_in(lo, hi, xb, zb, c, mu)
        vals = [_surrogate(d, xb, zb, c, mu) for d in cands]
        vals[2] = (0.0, 0.0)
        d = _pick(cands, vals)
        if _decrease_ok(d, xi, zeta, b, mu):
            return float(d), mu, it
        mu *= beta
    raise NumericalFailure("sufficient decrease not reached within the backtracking cap")


def sweep(inv, sig_hat, St, Gt, cell, a, order, exact, mu0_floor, beta, max_backtracks):
    """Update each coordinate in ``order`` once; returns the number of nonzero steps."""
    B, L = inv.shape[0], inv.shape[1]
    y = np.empty((B, L), dtype=complex)
    xi = np.empty(B)
    zeta = np.empty(B)
    moved = 0
    for i in order:
        g = Gt[i]
        coord_stats(inv, sig_hat, St[i], g, y, xi, zeta)
        ai = a[i]
        if exact:
            d = solve_exact(xi, zeta, ai)
        else:
            b = cell[i]
            mu0 = init_mu(xi, zeta, b, mu0_floor)
            d, _, _ = solve_inexact(xi, zeta, b, ai, mu0, beta, max_backtracks)
        if d != 0.0:
            a[i] = min(max(ai + d, 0.0), 1.0)
            rank_one_update(inv, y, g, xi, a[i] - ai)
            moved += 1
    return moved
