"""Coordinate-descent detectors: vanilla, inexact and active-set variants."""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .io import write_csv
from .kernels import NumericalFailure
from .solver_core import CoordCoeffs, SolverState, _coeffs_flat, gradient, objective, optimality_violation


@dataclass
class SolverConfig:
    """Solver settings.

    Parameters
    ----------
    mode : {"exact", "inexact"}
        Exact one-dimensional minimisation or the backtracked cubic surrogate.
    active_set : bool
        Update only coordinates whose violation exceeds the current omega.
    epsilon : float
        Stop once ``||V||_inf <= epsilon``.
    max_sweeps : int
        Cap on sweeps (vanilla) or outer iterations (active set).
    mu0_floor, beta : float
        Fallback proximal weight and its backtracking factor.
    omega_decay : float
        Geometric factor of the omega schedule.
    seed : int
        Seed of the permutation generator, independent of the instance.
    """

    mode: str = "exact"
    active_set: bool = False
    epsilon: float = 1e-3
    max_sweeps: int = 1000
    mu0_floor: float = 1e-2
    beta: float = 2.0
    omega_decay: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "inexact"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not self.mu0_floor > 0:
            raise ValueError("mu0_floor must be positive")
        if not self.omega_decay > 1:
            raise ValueError("omega_decay must exceed 1")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")

    @property
    def max_backtracks(self) -> int:
        return int(math.ceil(math.log(1e12) / math.log(self.beta)))

    @property
    def name(self) -> str:
        base = "vanilla" if self.mode == "exact" else "inexact"
        return ("active_set_" + base) if self.active_set else base


VARIANTS = {
    "vanilla": dict(mode="exact", active_set=False),
    "inexact": dict(mode="inexact", active_set=False),
    "active_set_vanilla": dict(mode="exact", active_set=True),
    "active_set_inexact": dict(mode="inexact", active_set=True),
}


def make_config(variant: str, **kw) -> SolverConfig:
    """Config for one of the four named solver variants."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown solver {variant!r}; choose from {sorted(VARIANTS)}")
    return SolverConfig(**{**VARIANTS[variant], **kw})


@dataclass
class Solution:
    """Solver output and per-sweep traces (entry 0 is the starting point)."""

    a_hat: np.ndarray
    final_objective: float
    sweeps: int
    coord_updates_total: int
    coord_updates_per_sweep: list = field(default_factory=list)
    v_inf_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    moved_per_sweep: list = field(default_factory=list)
    elapsed_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False
    solver: str = ""

    def export(self, out_dir) -> tuple[str, str]:
        """Write ``solution.csv`` and ``trace.csv`` into ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        p1 = write_csv(os.path.join(out_dir, "solution.csv"), ["index", "a_hat"],
                       [(i, float(v)) for i, v in enumerate(self.a_hat)])
        cum = np.cumsum([0] + list(self.coord_updates_per_sweep))
        rows = []
        for k in range(len(self.v_inf_trace)):
            rows.append((k, self.objective_trace[k], self.v_inf_trace[k],
                         self.coord_updates_per_sweep[k - 1] if k > 0 else 0, int(cum[k]), self.elapsed_trace[k]))
        p2 = write_csv(os.path.join(out_dir, "trace.csv"),
                       ["sweep", "objective", "v_inf", "active_set_size", "cumulative_updates", "elapsed_s"], rows)
        return p1, p2


# ------------------------------------------------------------ subproblems


def solve_subproblem_exact(coeffs: CoordCoeffs, a_bn: float) -> float:
    """Global minimiser of the one-coordinate objective on ``[-a_bn, 1 - a_bn]``."""
    return float(kernels.solve_exact(np.ascontiguousarray(coeffs.xi, dtype=float),
                                     np.ascontiguousarray(coeffs.zeta, dtype=float), float(a_bn)))


def init_mu(state: SolverState, b: int, n: int, mu0_floor: float = 1e-2) -> float:
    """Off-cell Hessian diagonal as the starting proximal weight (floor if not positive)."""
    c, _ = _coeffs_flat(state, state.index(b, n))
    return float(kernels.init_mu(c.xi, c.zeta, int(b), float(mu0_floor)))


def solve_subproblem_inexact(state: SolverState, b: int, n: int, config: SolverConfig) -> float:
    """Accepted step of the backtracked cubic surrogate for coordinate ``(b, n)``."""
    i = state.index(b, n)
    c, _ = _coeffs_flat(state, i)
    cell = int(state.cell[i])
    mu0 = kernels.init_mu(c.xi, c.zeta, cell, config.mu0_floor)
    d, _, _ = kernels.solve_inexact(c.xi, c.zeta, cell, float(state.a[i]), mu0, config.beta, config.max_backtracks)
    return float(d)


def threshold_estimate(a_hat, ell_th: float) -> np.ndarray:
    """Binary activity: 1 where ``a_hat >= ell_th``."""
    if not 0 < ell_th < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(a_hat) >= ell_th).astype(int)


def select_active_set(V, omega: float) -> np.ndarray:
    """Indices with violation at least ``omega``."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return np.flatnonzero(np.asarray(V) >= omega)


def omega_schedule(k: int, v_inf: float, epsilon: float, decay: float = 5.0) -> float:
    if k < 0:
        raise ValueError("k must be >= 0")
    return max(decay ** (-k - 1) * v_inf, epsilon)


# ------------------------------------------------------------ drivers

ProgressFn = Callable[[np.ndarray, float], None]


def _run_coords(state: SolverState, order: np.ndarray, config: SolverConfig, progress: ProgressFn | None,
                t0: float, chunk: int) -> int:
    order = np.ascontiguousarray(order, dtype=np.int64)
    exact = config.mode == "exact"
    if progress is None:
        chunk = order.size
    moved = 0
    for start in range(0, order.size, max(chunk, 1)):
        moved += kernels.sweep(state.inv_sigmas, state.sig_hat, state.St, state.Gt, state.cell, state.a,
                               order[start:start + chunk], exact, config.mu0_floor, config.beta,
                               config.max_backtracks)
        if progress is not None:
            progress(state.a, time.perf_counter() - t0)
    state.updates_since_refresh += order.size
    return moved


def _boundary(state: SolverState, sol: Solution, t0: float):
    """Refresh the cache, record objective and violation; returns V."""
    obj = state.refresh()
    V = optimality_violation(state, gradient(state))
    sol.objective_trace.append(obj)
    sol.v_inf_trace.append(float(V.max()) if V.size else 0.0)
    sol.elapsed_trace.append(time.perf_counter() - t0)
    return V


def run_cd(state: SolverState, config: SolverConfig, progress: ProgressFn | None = None,
           chunk: int = 64) -> Solution:
    """Dispatch to the vanilla or active-set driver according to ``config``."""
    if config.active_set:
        return run_active_set_cd(state, config, progress=progress, chunk=chunk)
    rng = np.random.default_rng(config.seed)
    sol = Solution(a_hat=state.a, final_objective=np.nan, sweeps=0, coord_updates_total=0, solver=config.name)
    t0 = time.perf_counter()
    _boundary(state, sol, t0)
    BN = state.size
    for _ in range(config.max_sweeps):
        moved = _run_coords(state, rng.permutation(BN), config, progress, t0, chunk)
        sol.sweeps += 1
        sol.coord_updates_total += BN
        sol.coord_updates_per_sweep.append(BN)
        sol.moved_per_sweep.append(moved)
        _boundary(state, sol, t0)
        if sol.v_inf_trace[-1] <= config.epsilon:
            sol.converged = True
            break
    return _finish(state, sol, t0)


def run_active_set_cd(state: SolverState, config: SolverConfig, progress: ProgressFn | None = None,
                      chunk: int = 64) -> Solution:
    """Update only the coordinates selected by the omega schedule, once each per iteration."""
    rng = np.random.default_rng(config.seed)
    sol = Solution(a_hat=state.a, final_objective=np.nan, sweeps=0, coord_updates_total=0, solver=config.name)
    t0 = time.perf_counter()
    V = _boundary(state, sol, t0)
    for k in range(config.max_sweeps):
        v_inf = sol.v_inf_trace[-1]
        if v_inf <= config.epsilon:
            sol.converged = True
            break
        omega = omega_schedule(k, v_inf, config.epsilon, config.omega_decay)
        active = select_active_set(V, omega)
        moved = _run_coords(state, rng.permutation(active), config, progress, t0, chunk)
        sol.sweeps += 1
        sol.coord_updates_total += int(active.size)
        sol.coord_updates_per_sweep.append(int(active.size))
        sol.moved_per_sweep.append(moved)
        V = _boundary(state, sol, t0)
    else:
        sol.converged = sol.v_inf_trace[-1] <= config.epsilon
    return _finish(state, sol, t0)


def _finish(state: SolverState, sol: Solution, t0: float) -> Solution:
    sol.wall_time = time.perf_counter() - t0
    sol.a_hat = state.a.copy()
    sol.final_objective = sol.objective_trace[-1]
    return sol


def detect(instance, covs, config: SolverConfig, a0=None, progress: ProgressFn | None = None) -> Solution:
    """Run one solver from ``a0`` (zero by default) on an instance's sample covariances."""
    state = SolverState.from_instance(instance, covs, a=a0)
    return run_cd(state, config, progress=progress)


__all__ = ["SolverConfig", "Solution", "VARIANTS", "make_config", "solve_subproblem_exact", "solve_subproblem_inexact",
           "init_mu", "run_cd", "run_active_set_cd", "select_active_set", "omega_schedule", "threshold_estimate",
           "detect", "objective", "NumericalFailure"]
