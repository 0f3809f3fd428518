"""Identifiability tools: Kronecker sequence matrix, LP consistency test,
phase diagrams, a brute-force null-space-property check and the
interference bound for hexagonal layouts.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from .io import write_csv
from .system_model import CellLayout, cell_index, make_instance

INCONSISTENT_TOL = 1e-6


@dataclass
class KronMatrix:
    """Columns ``conj(s) kron s`` (``full``) and the same with diagonal positions dropped (``offdiag``)."""

    full: np.ndarray  # (L^2, BN)
    offdiag: np.ndarray  # (L(L-1), BN)
    L: int


def build_kron_matrix(S: np.ndarray) -> KronMatrix:
    S = np.asarray(S, dtype=complex)
    L = S.shape[0]
    if L < 2:
        raise ValueError("need L >= 2")
    full = (S.conj()[:, None, :] * S[None, :, :]).reshape(L * L, -1)
    keep = np.array([i != j for i in range(L) for j in range(L)])
    return KronMatrix(full=full, offdiag=full[keep], L=L)


def hermitian_rows(S: np.ndarray):
    """Real coordinates of ``vec(s s^H)`` for every column, plus l1 weights.

    The L diagonal entries are real; each pair (l < m) contributes its real
    and imaginary parts with weight 2, so a weighted l1 norm over these
    ``L^2`` rows equals the l1 norm of ``[Re; Im]`` of the full Kronecker column.
    """
    S = np.asarray(S, dtype=complex)
    L = S.shape[0]
    iu, ju = np.triu_indices(L, k=1)
    diag = np.abs(S) ** 2
    cross = S[iu, :] * S[ju, :].conj()
    rows = np.vstack([diag, cross.real, cross.imag])
    w = np.concatenate([np.ones(L), np.full(2 * iu.size, 2.0)])
    return rows, w


@dataclass
class ConsistencyVerdict:
    """Outcome of the LP test.

    Attributes
    ----------
    consistent : bool
        True when the only direction in both the invariant subspace and the
        feasible cone is zero.
    witness : ndarray or None
        Unit-l1 direction in the original coordinates when inconsistent.
    lp_residual : float
        LP optimum, measured in gain-normalised coordinates.
    witness_scaled : ndarray or None
        The LP minimiser itself (gain-normalised coordinates, unit l1).
    col_scale : ndarray
        Per-device normalisation ``max_b G[b, i]`` used by the LP.
    """

    consistent: bool
    witness: np.ndarray | None
    lp_residual: float
    witness_scaled: np.ndarray | None = None
    col_scale: np.ndarray | None = None


def _solve_dual(A, wt, sgn):
    """max lam s.t. sgn_i (A^T y)_i >= lam, |y| <= wt; the x-multipliers give a minimiser."""
    m, n = A.shape
    A_ub = np.hstack([-(sgn[:, None] * A.T), np.ones((n, 1))])
    c = np.zeros(m + 1)
    c[-1] = -1.0
    bounds = [(-v, v) for v in wt] + [(None, None)]
    res = optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(n), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"consistency LP failed: {res.message}")
    marg = getattr(res.ineqlin, "marginals", None)
    xs = None
    if marg is not None and np.abs(marg).sum() > 0:
        xs = sgn * np.abs(marg)
        xs = xs / np.abs(xs).sum()
    return float(-res.fun), xs


def _solve_primal(A, wt, sgn):
    """min wt.t s.t. |A x| <= t, x in the sign cone, sgn.x = 1."""
    m, n = A.shape
    eye = sparse.identity(m, format="csr")
    A_ub = sparse.vstack([sparse.hstack([sparse.csr_matrix(A), -eye]),
                          sparse.hstack([sparse.csr_matrix(-A), -eye])], format="csr")
    A_eq = np.concatenate([sgn, np.zeros(m)])[None, :]
    c = np.concatenate([np.zeros(n), wt])
    bounds = [(0.0, None) if v > 0 else (None, 0.0) for v in sgn] + [(0.0, None)] * m
    res = optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * m), A_eq=A_eq, b_eq=[1.0], bounds=bounds,
                           method="highs")
    if res.status != 0:
        raise RuntimeError(f"consistency LP failed: {res.message}")
    return float(res.fun), res.x[:n].copy()


def check_consistency(S, G, a_true, tol: float = INCONSISTENT_TOL) -> ConsistencyVerdict:
    """LP test of whether the invariant subspace meets the feasible cone only at zero.

    Minimises ``sum_b ||[Re; Im](S~ G_b x)||_1`` subject to ``x_i >= 0`` on
    inactive and ``x_i <= 0`` on active devices and ``||x||_1 = 1``. Devices
    are first rescaled by their strongest gain so the optimum is on a unit
    scale; the rescaling maps the cone and the subspace onto themselves.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    a_true = np.asarray(a_true)
    B, BN = G.shape
    rows, w = hermitian_rows(S)
    if rows.shape[1] != BN or a_true.shape != (BN,):
        raise ValueError("dimension mismatch between S, G and a_true")
    scale = G.max(axis=0)
    if np.any(scale <= 0):
        raise ValueError("gains must be positive")
    Gn = G / scale[None, :]
    A = np.vstack([rows * Gn[b][None, :] for b in range(B)])  # (B*R, BN)
    wt = np.tile(w, B)
    active = a_true > 0.5
    sgn = np.where(active, -1.0, 1.0)
    opt, xs = _solve_dual(A, wt, sgn)
    if opt > tol:
        return ConsistencyVerdict(True, None, opt, None, scale)
    if xs is None or np.max(np.abs(A @ xs)) > tol:
        opt, xs = _solve_primal(A, wt, sgn)
    xs = np.where(active, np.minimum(xs, 0.0), np.maximum(xs, 0.0))
    xs /= np.abs(xs).sum()
    x = xs / scale
    x /= np.abs(x).sum()
    return ConsistencyVerdict(False, x, opt, xs, scale)


def witness_checks(S, G, a_true, verdict: ConsistencyVerdict, tol: float = INCONSISTENT_TOL) -> dict:
    """Sign pattern, subspace residual and sum-zero diagnostics of a witness (gain-normalised units)."""
    if verdict.witness is None:
        raise ValueError("verdict has no witness")
    xs = verdict.witness_scaled
    Gn = np.atleast_2d(G) / verdict.col_scale[None, :]
    kron = build_kron_matrix(S).full
    active = np.asarray(a_true) > 0.5
    sign_ok = bool(np.all(xs[active] <= 0) and np.all(xs[~active] >= 0))
    resid = max(float(np.max(np.abs(kron @ (Gn[b] * xs)))) for b in range(Gn.shape[0]))
    sums = [abs(float(np.sum(Gn[b] * xs))) for b in range(Gn.shape[0])]
    l1 = [float(np.sum(np.abs(Gn[b] * xs))) for b in range(Gn.shape[0])]
    return {"sign_ok": sign_ok, "residual": resid, "residual_ok": resid <= tol * np.abs(xs).sum(),
            "sum_zero": sums, "sum_l1": l1}


# ------------------------------------------------------------ phase diagrams


def _phase_cell(args):
    L, K, N, B, seq_type, kind, seeds = args
    ok = 0
    for s in seeds:
        inst = make_instance(kind, B, N, K, L, seq_type=seq_type, seed=int(s))
        ok += check_consistency(inst.S, inst.G, inst.a_true).consistent
    return ok


def phase_diagram(N: int, B: int, L_grid, K_grid, trials: int = 100, seq_type: str = "I", layout: str = "hex",
                  seed: int = 0, workers: int = 1) -> np.ndarray:
    """Number of consistent trials per (L, K) cell, shape (len(L_grid), len(K_grid)).

    Each trial draws a fresh instance (positions, sequences, activity) from
    its own seed, derived from ``seed`` and the cell coordinates.
    """
    L_grid = [int(v) for v in L_grid]
    K_grid = [int(v) for v in K_grid]
    if not L_grid or not K_grid:
        raise ValueError("grids must be non-empty")
    jobs = []
    for li, L in enumerate(L_grid):
        for ki, K in enumerate(K_grid):
            ss = np.random.SeedSequence(int(seed), spawn_key=(L, K, B))
            seeds = ss.generate_state(trials, dtype=np.uint32)
            jobs.append((L, K, N, B, seq_type, layout, seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            counts = list(ex.map(_phase_cell, jobs))
    else:
        counts = [_phase_cell(j) for j in jobs]
    return np.array(counts, dtype=int).reshape(len(L_grid), len(K_grid))


def write_phase_csv(path, counts, L_grid, K_grid, B, seq_type, trials) -> str:
    rows = [(L, K, B, seq_type, trials, int(counts[i, j]))
            for i, L in enumerate(L_grid) for j, K in enumerate(K_grid)]
    return write_csv(path, ["L", "K", "B", "seq_type", "trials", "successes"], rows)


def transition_midpoint(K_grid, fractions) -> float:
    """K at which the success fraction first crosses 1/2 (linear interpolation)."""
    K_grid = np.asarray(K_grid, dtype=float)
    f = np.asarray(fractions, dtype=float)
    if f[0] < 0.5:
        return float(K_grid[0])
    for j in range(1, f.size):
        if f[j] < 0.5:
            t = (f[j - 1] - 0.5) / (f[j - 1] - f[j])
            return float(K_grid[j - 1] + t * (K_grid[j] - K_grid[j - 1]))
    return math.nan


# ------------------------------------------------------------ null space property


def _real_stack(A) -> np.ndarray:
    if isinstance(A, KronMatrix):
        A = A.full
    A = np.asarray(A)
    if np.iscomplexobj(A):
        A = np.vstack([A.real, A.imag])
    return A


def null_space_basis(A, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the real null space of ``A``."""
    A = _real_stack(A)
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    _, sv, vt = np.linalg.svd(A, full_matrices=True)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > rtol * max(smax, 1e-300))) if smax > 0 else 0
    return vt[rank:].T


def nsp_check_small(kron, s_order: int, rho: float, max_null_dim: int = 3) -> bool:
    """Exhaustively verify ``||v_S||_1 <= rho ||v_Sc||_1`` on the null space.

    For every support of size at most ``s_order`` and every sign pattern on
    it, an LP maximises ``sign . v_S - rho ||v_Sc||_1`` over null-space
    vectors with ``||v||_inf <= 1``. Returns True iff all maxima are <= 0.
    """
    A = _real_stack(kron)
    n = A.shape[1]
    if n > 16 or s_order > 4:
        raise ValueError("nsp_check_small is limited to BN <= 16 and s_order <= 4")
    Z = null_space_basis(A)
    k = Z.shape[1]
    if k > max_null_dim:
        raise ValueError(f"null space dimension {k} exceeds {max_null_dim}")
    if k == 0:
        return True
    for size in range(1, s_order + 1):
        for supp in itertools.combinations(range(n), size):
            rest = [j for j in range(n) if j not in supp]
            r = len(rest)
            Zs, Zr = Z[list(supp)], Z[rest]
            # variables [y (k), u (r)]; maximise sigma.Zs y - rho sum u
            A_ub = [np.hstack([Zr, -np.eye(r)]), np.hstack([-Zr, -np.eye(r)]),
                    np.hstack([Z, np.zeros((n, r))]), np.hstack([-Z, np.zeros((n, r))])]
            A_ub = np.vstack(A_ub)
            b_ub = np.concatenate([np.zeros(2 * r), np.ones(2 * n)])
            for signs in itertools.product((1.0, -1.0), repeat=size):
                c = np.concatenate([-(np.asarray(signs) @ Zs), np.full(r, rho)])
                res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * k + [(0, None)] * r,
                                       method="highs")
                if res.status != 0:
                    raise RuntimeError(f"NSP LP failed: {res.message}")
                if -res.fun > 1e-9:
                    return False
    return True


# ------------------------------------------------------------ interference bound


def interference_constant(gamma: float, P0: float, D0: float, R: float) -> float:
    """Closed-form cap on the summed strongest out-of-cell gains of a hex layout."""
    if gamma <= 2:
        raise ValueError("the bound requires gamma > 2")
    return (2.0 ** (gamma + 3) * P0 * D0 ** gamma / R ** gamma
            * (math.pi / (2.0 * (gamma - 2.0)) + 2.0 * gamma / (gamma - 1.0) + 2.0 ** (-gamma / 2.0)))


def interference_bound(layout: CellLayout, gamma: float, P0: float, D0: float, R: float, positions: np.ndarray,
                       N_per_cell=None):
    """Per-BS ``sum_{j != b} max_n g_bjn`` from actual positions, and the closed-form constant.

    Gains follow ``P0 (D0 / D)^gamma``; ``D0``, ``R`` and positions share one length unit.
    """
    C = interference_constant(gamma, P0, D0, R)
    B = layout.B
    positions = np.asarray(positions, dtype=float)
    if N_per_cell is None:
        if positions.shape[0] % B:
            raise ValueError("pass N_per_cell when cells hold different device counts")
        N_per_cell = positions.shape[0] // B
    cell = cell_index(np.broadcast_to(np.asarray(N_per_cell), (B,)))
    diff = positions[None, :, :] - layout.bs_positions[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    g = P0 * (D0 / dist) ** gamma
    lhs = np.zeros(B)
    for b in range(B):
        for j in range(B):
            if j != b and np.any(cell == j):
                lhs[b] += g[b, cell == j].max()
    return lhs, C


__all__ = ["KronMatrix", "ConsistencyVerdict", "build_kron_matrix", "check_consistency", "witness_checks",
           "phase_diagram", "write_phase_csv", "transition_midpoint", "nsp_check_small", "null_space_basis",
           "interference_bound", "interference_constant", "INCONSISTENT_TOL"]
