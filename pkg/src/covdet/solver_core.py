"""Numerical primitives shared by the detection solvers.

The objective is ``F(a) = sum_b [log det Sigma_b + tr(Sigma_b^{-1} Sigma_hat_b)]``
with ``Sigma_b = S G_b diag(a) S^H + sigma2 I``. A :class:`SolverState` caches
the inverses ``Sigma_b^{-1}`` and keeps them current with rank-one updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernels
from .kernels import NumericalFailure
from .system_model import SampleCovariances, SystemInstance, cell_index, model_covariances


@dataclass
class CoordCoeffs:
    """Per-cell quadratic forms for one coordinate.

    Attributes
    ----------
    xi : ndarray, shape (B,)
        ``g_j * s^H Sigma_j^{-1} s``.
    zeta : ndarray, shape (B,)
        ``g_j * s^H Sigma_j^{-1} Sigma_hat_j Sigma_j^{-1} s``.
    """

    xi: np.ndarray
    zeta: np.ndarray


class SolverState:
    """Current activity estimate plus cached inverse covariances.

    Parameters
    ----------
    S : ndarray, shape (L, BN)
        Signature matrix.
    G : ndarray, shape (B, BN)
        Linear large-scale gains.
    sig_hat : ndarray, shape (B, L, L)
        Sample covariances.
    sigma2 : float
        Noise variance.
    N : array_like
        Devices per cell, used to map ``(b, n)`` to a flat index.
    a : ndarray, optional
        Starting point, defaults to zero.
    """

    def __init__(self, S, G, sig_hat, sigma2, N, a=None):
        self.S = np.ascontiguousarray(S, dtype=complex)
        self.G = np.ascontiguousarray(G, dtype=float)
        self.sig_hat = np.ascontiguousarray(sig_hat, dtype=complex)
        self.sigma2 = float(sigma2)
        self.N = np.atleast_1d(np.asarray(N, dtype=int))
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        B, BN = self.G.shape
        if self.S.shape[1] != BN or self.sig_hat.shape[0] != B or int(self.N.sum()) != BN:
            raise ValueError("inconsistent dimensions between S, G, sample covariances and N")
        self.St = np.ascontiguousarray(self.S.T)
        self.Gt = np.ascontiguousarray(self.G.T)
        self.cell = np.ascontiguousarray(cell_index(self.N), dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.N)[:-1]])
        self.a = np.zeros(BN) if a is None else np.array(a, dtype=float)
        if self.a.shape != (BN,) or np.any(self.a < 0) or np.any(self.a > 1):
            raise ValueError("a must be a length-BN vector in [0, 1]")
        self.inv_sigmas = np.empty((B, self.L, self.L), dtype=complex)
        self.updates_since_refresh = 0
        self._objective = None
        self.refresh()

    @classmethod
    def from_instance(cls, instance: SystemInstance, covs: SampleCovariances, a=None) -> "SolverState":
        return cls(instance.S, instance.G, covs.mats, instance.sigma2, instance.N, a=a)

    @property
    def B(self) -> int:
        return self.G.shape[0]

    @property
    def L(self) -> int:
        return self.S.shape[0]

    @property
    def size(self) -> int:
        return self.G.shape[1]

    def index(self, b: int, n: int) -> int:
        """Flat index of device ``n`` of cell ``b``."""
        if not 0 <= n < self.N[b]:
            raise IndexError(f"device {n} out of range for cell {b}")
        return int(self.offsets[b] + n)

    def covariances(self) -> np.ndarray:
        return model_covariances(self.S, self.G, self.a, self.sigma2)

    def refresh(self) -> float:
        """Re-invert every covariance from scratch; returns the objective at ``a``."""
        sig = self.covariances()
        eye = np.eye(self.L)
        total = 0.0
        for b in range(self.B):
            try:
                c = linalg.cho_factor(sig[b], lower=True, check_finite=False)
            except linalg.LinAlgError as exc:
                raise NumericalFailure(f"covariance of cell {b} is not positive definite") from exc
            inv = linalg.cho_solve(c, eye, check_finite=False)
            self.inv_sigmas[b] = 0.5 * (inv + inv.conj().T)
            total += 2.0 * np.sum(np.log(np.abs(np.diag(c[0])))) + float(np.real(np.trace(self.inv_sigmas[b] @ self.sig_hat[b])))
        self.updates_since_refresh = 0
        self._objective = total
        return total

    def cache_error(self) -> float:
        """Largest ``||Sigma_b Sigma_b^{-1} - I||_F`` over cells."""
        sig = self.covariances()
        eye = np.eye(self.L)
        return max(float(np.linalg.norm(sig[b] @ self.inv_sigmas[b] - eye)) for b in range(self.B))

    def copy(self) -> "SolverState":
        new = object.__new__(SolverState)
        new.__dict__.update(self.__dict__)
        new.a = self.a.copy()
        new.inv_sigmas = self.inv_sigmas.copy()
        return new


def objective(state: SolverState) -> float:
    """MLE objective evaluated through fresh Cholesky factors (not the cache)."""
    sig = state.covariances()
    total = 0.0
    for b in range(state.B):
        try:
            c = linalg.cho_factor(sig[b], lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalFailure(f"covariance of cell {b} is not positive definite") from exc
        total += 2.0 * np.sum(np.log(np.abs(np.diag(c[0]))))
        total += float(np.real(np.trace(linalg.cho_solve(c, state.sig_hat[b], check_finite=False))))
    return total


def quadratic_forms(state: SolverState):
    """``xi`` and ``zeta`` for every (cell, coordinate) pair, each of shape (B, BN)."""
    Y = state.inv_sigmas @ state.S[None, :, :]  # (B, L, BN)
    q = (state.S.conj()[None, :, :] * Y).sum(axis=1)
    Z = state.sig_hat @ Y
    r = (Y.conj() * Z).sum(axis=1)
    return state.G * q.real, state.G * r.real


def gradient(state: SolverState) -> np.ndarray:
    """Full gradient ``sum_j (xi_j - zeta_j)``, batched over coordinates."""
    xi, zeta = quadratic_forms(state)
    return np.sum(xi - zeta, axis=0)


def coord_coefficients(state: SolverState, b: int, n: int) -> CoordCoeffs:
    """Quadratic forms of coordinate ``(b, n)`` against every cell's inverse."""
    return _coeffs_flat(state, state.index(b, n))[0]


def _coeffs_flat(state: SolverState, i: int):
    y = np.empty((state.B, state.L), dtype=complex)
    xi = np.empty(state.B)
    zeta = np.empty(state.B)
    kernels.coord_stats(state.inv_sigmas, state.sig_hat, state.St[i], state.Gt[i], y, xi, zeta)
    return CoordCoeffs(xi=xi, zeta=zeta), y


def gradient_coordinate(state: SolverState, b: int, n: int) -> float:
    c = coord_coefficients(state, b, n)
    return float(np.sum(c.xi - c.zeta))


def optimality_violation(state: SolverState, grad: np.ndarray | None = None) -> np.ndarray:
    """``|clip(a - grad, 0, 1) - a|`` coordinate-wise."""
    if grad is None:
        grad = gradient(state)
    return np.abs(np.clip(state.a - grad, 0.0, 1.0) - state.a)


def rank_one_update(state: SolverState, b: int, n: int, d: float, refresh_every: int | None = None) -> None:
    """Move ``a[(b, n)]`` by ``d`` and update the cached inverses.

    A full re-inversion happens once ``refresh_every`` updates (default BN)
    have accumulated since the last one.
    """
    if d == 0.0:
        return
    i = state.index(b, n)
    new = state.a[i] + d
    if new < -1e-12 or new > 1.0 + 1e-12:
        raise NumericalFailure("step leaves the feasible box [0, 1]")
    new = min(max(new, 0.0), 1.0)
    coeffs, y = _coeffs_flat(state, i)
    kernels.rank_one_update(state.inv_sigmas, y, state.Gt[i], coeffs.xi, float(new - state.a[i]))
    state.a[i] = new
    state.updates_since_refresh += 1
    limit = state.size if refresh_every is None else refresh_every
    if state.updates_since_refresh >= limit:
        state.refresh()
