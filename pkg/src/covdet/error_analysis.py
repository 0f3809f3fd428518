"""Asymptotic error predictor for the ML estimate.

For large M the scaled error ``sqrt(M) (a_hat - a_true)`` behaves like the
projection, in the metric of the Fisher matrix, of a Gaussian vector with
covariance ``M J^+`` onto the cone of feasible directions at ``a_true``.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .io import write_csv
from .metrics import threshold_grid
from .system_model import SystemInstance, model_covariances

RANK_TOL = 1e-10


@dataclass
class FisherMatrix:
    """Fisher information with the eigendecomposition of its Jacobi-scaled form.

    Large-scale gains spread the diagonal of ``J`` over many orders of
    magnitude, so the rank decision is made on ``J / (d d^T)`` with
    ``d = sqrt(diag J)``; a relative cutoff on ``J`` itself would discard
    well-determined directions of weak devices.

    Attributes
    ----------
    J : ndarray, shape (BN, BN)
    M : int
    eigvals, eigvecs : ndarray
        Ascending eigenvalues and orthonormal eigenvectors of the scaled matrix.
    scale : ndarray
        The diagonal scaling ``d`` (ones where ``diag J`` is zero).
    rank_tol : float
        Relative cutoff below which scaled eigenvalues are treated as zero.
    """

    J: np.ndarray
    M: int
    eigvals: np.ndarray
    eigvecs: np.ndarray
    scale: np.ndarray
    rank_tol: float = RANK_TOL

    @property
    def retained(self) -> np.ndarray:
        lmax = self.eigvals[-1] if self.eigvals.size else 0.0
        return self.eigvals > self.rank_tol * lmax

    def pinv(self) -> np.ndarray:
        """Generalised inverse ``P`` with ``J P J = J`` (the inverse when ``J`` has full rank)."""
        keep = self.retained
        V = self.eigvecs[:, keep]
        return ((V / self.eigvals[keep]) @ V.T) / np.outer(self.scale, self.scale)


def fisher_matrix_from(J: np.ndarray, M: int, rank_tol: float = RANK_TOL) -> FisherMatrix:
    J = 0.5 * (J + J.T)
    diag = np.diag(J)
    d = np.where(diag > 0, np.sqrt(np.abs(diag)), 1.0)
    w, V = np.linalg.eigh(J / np.outer(d, d))
    return FisherMatrix(J=J, M=int(M), eigvals=w, eigvecs=V, scale=d, rank_tol=rank_tol)


def fisher_information(S, G, a, sigma2: float, M: int, rank_tol: float = RANK_TOL) -> FisherMatrix:
    """``J = M sum_b |Q_b|^2`` with ``Q_b = G_b^{1/2} S^H Sigma_b^{-1} S G_b^{1/2}``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("a must lie in [0, 1]")
    sig = model_covariances(S, G, a, sigma2)
    J = np.zeros((S.shape[1], S.shape[1]))
    for b in range(G.shape[0]):
        P = np.linalg.solve(sig[b], S)  # Sigma^{-1} S
        Q = S.conj().T @ P
        Q = 0.5 * (Q + Q.conj().T)
        r = np.sqrt(G[b])
        Q = r[:, None] * Q * r[None, :]
        J += np.abs(Q) ** 2
    return fisher_matrix_from(M * J, M, rank_tol)


def sample_error_vectors(fisher: FisherMatrix, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from ``N(0, M P)`` with ``P = fisher.pinv()``, one per row.

    When ``J`` is singular the null-space component depends on the choice of
    generalised inverse, but ``J x`` (and hence the cone projection) does not.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    keep = fisher.retained
    if not np.any(keep):
        raise ValueError("Fisher matrix has no retained eigenvalues")
    V = fisher.eigvecs[:, keep]
    w = np.sqrt(fisher.M / fisher.eigvals[keep])
    Z = rng.standard_normal((count, w.size))
    return ((Z * w[None, :]) @ V.T) / fisher.scale[None, :]


def _clamp(eta, sgn):
    return np.where(sgn > 0, np.maximum(eta, 0.0), np.minimum(eta, 0.0))


def _polish(X, E, J, sgn):
    """Exact solve on the face picked out by the iterate; keep it only when it is KKT-optimal."""
    out = E.copy()
    for k in range(X.shape[1]):
        x, eta = X[:, k], E[:, k]
        free = (eta != 0.0)
        cand = np.zeros_like(x)
        if np.any(free):
            Jf = J[np.ix_(free, free)]
            rhs = J[free] @ x
            try:
                cand[free] = np.linalg.solve(Jf, rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(cand * sgn < 0):
            continue
        g = J @ (cand - x)
        scale = np.abs(np.diag(J)) * (np.abs(x) + np.abs(cand)) + 1e-300
        # multipliers on the clamped coordinates must point into the cone
        bad = (~free) & (g * sgn < -1e-9 * scale)
        if not np.any(bad):
            out[:, k] = cand
    return out


def project_onto_cone_qp(x, fisher, inactive, max_iter: int = 20_000, tol: float = 1e-10, polish: bool = True,
                         return_info: bool = False):
    """Minimise ``(1/M)(x - eta)^T J (x - eta)`` over the sign cone.

    The cone requires ``eta_i >= 0`` on inactive and ``eta_i <= 0`` on active
    coordinates. Solved by Jacobi-preconditioned accelerated projected
    gradient with adaptive restart, stopping on the scaled projected-gradient
    residual; the final face is then solved exactly when that is KKT-optimal.

    Parameters
    ----------
    x : ndarray, shape (BN,) or (count, BN)
        Point(s) to project.
    fisher : FisherMatrix or ndarray
        Fisher matrix (an ndarray is used as ``J`` with ``M = 1``).
    inactive : array_like of bool
        True where the true activity is zero.
    """
    if isinstance(fisher, FisherMatrix):
        J, M = fisher.J, fisher.M
    else:
        J, M = np.asarray(fisher, dtype=float), 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.ndim(x) == 1
    if not np.all(np.isfinite(X)):
        raise ValueError("x must be finite")
    X = X.T.copy()  # (BN, count)
    sgn = np.where(np.asarray(inactive, dtype=bool), 1.0, -1.0)
    H = J / M
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / d[:, None] / d[None, :]  # preconditioned Hessian
    step = 1.0 / max(np.linalg.eigvalsh(Hs)[-1], 1e-300)
    Xs = X * d[:, None]
    E = _clamp(Xs, sgn[:, None])
    HE_prev = Hs @ (E - Xs)
    Y = E.copy()
    t = np.ones(X.shape[1])
    obj_prev = np.full(X.shape[1], np.inf)
    converged = False
    it = 0
    ref = np.max(np.abs(Xs), axis=0) + 1e-300
    G = Hs @ (Y - Xs)
    for it in range(1, max_iter + 1):
        E_new = _clamp(Y - step * G, sgn[:, None])
        HE = Hs @ (E_new - Xs)
        obj = 0.5 * np.einsum("ik,ik->k", E_new - Xs, HE)
        resid = np.max(np.abs(_clamp(E_new - HE, sgn[:, None]) - E_new), axis=0)
        if np.all(resid <= tol * ref):
            E = E_new
            converged = True
            break
        restart = obj > obj_prev
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = np.where(restart, 0.0, (t - 1.0) / t_new)
        Y = E_new + mom[None, :] * (E_new - E)
        # gradient at Y from the two products already known
        G = HE + mom[None, :] * (HE - HE_prev)
        t = np.where(restart, 1.0, t_new)
        E, HE_prev = E_new, HE
        obj_prev = np.minimum(obj, obj_prev)
    eta = E / d[:, None]
    if polish:
        eta = _polish(X, eta, H, sgn)
    eta = _clamp(eta, sgn[:, None]).T
    out = eta[0] if single else eta
    if return_info:
        return out, {"iterations": it, "converged": converged}
    if not converged and not polish:
        warnings.warn("cone projection hit the iteration cap", RuntimeWarning)
    return out


@dataclass
class PredictedErrors:
    """Pooled predicted errors and the PM/PF curves derived from them."""

    zero_errors: np.ndarray
    one_errors: np.ndarray
    samples: np.ndarray  # (count, BN) scaled errors
    grid: np.ndarray
    pm: np.ndarray
    pf: np.ndarray

    def write(self, out_dir, a_true) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        kind = np.where(np.asarray(a_true) > 0.5, "one", "zero")
        rows = ((k, kind[i], float(self.samples[k, i])) for k in range(self.samples.shape[0])
                for i in range(self.samples.shape[1]))
        p1 = write_csv(os.path.join(out_dir, "errordist.csv"), ["sample_id", "coord_type", "error_value"], rows)
        p2 = write_csv(os.path.join(out_dir, "predicted_pmpf.csv"), ["threshold", "pm", "pf"],
                       zip(self.grid, self.pm, self.pf))
        return p1, p2


def predicted_error_distribution(instance: SystemInstance, M: int, count: int, rng: np.random.Generator,
                                 grid=None, chunk: int = 2000) -> PredictedErrors:
    """Sample projected Gaussian errors at the true activity and derive PM/PF curves."""
    from .scaling import check_consistency

    if not check_consistency(instance.S, instance.G, instance.a_true).consistent:
        warnings.warn("consistency condition fails; the predicted distribution may be meaningless", RuntimeWarning)
    grid = threshold_grid() if grid is None else np.asarray(grid, dtype=float)
    fisher = fisher_information(instance.S, instance.G, instance.a_true, instance.sigma2, M)
    inactive = instance.a_true < 0.5
    out = np.empty((count, instance.total_devices))
    for start in range(0, count, chunk):
        n = min(chunk, count - start)
        X = sample_error_vectors(fisher, n, rng)
        out[start:start + n] = project_onto_cone_qp(X, fisher, inactive)
    out /= np.sqrt(M)
    zero = out[:, inactive].ravel()
    one = out[:, ~inactive].ravel()
    pm = np.searchsorted(np.sort(1.0 + one), grid, side="left") / max(one.size, 1)
    zs = np.sort(zero)
    pf = (zs.size - np.searchsorted(zs, grid, side="left")) / max(zs.size, 1)
    return PredictedErrors(zero_errors=zero, one_errors=one, samples=out, grid=grid, pm=pm, pf=pf)
