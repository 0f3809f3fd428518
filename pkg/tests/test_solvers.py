import math

import numpy as np
import pytest

from covdet.solver_core import SolverState, coord_coefficients, gradient, objective, optimality_violation
from covdet.solvers import (SolverConfig, init_mu, make_config, omega_schedule, run_active_set_cd, run_cd,
                            select_active_set, solve_subproblem_exact, solve_subproblem_inexact, threshold_estimate)
from covdet.solver_core import CoordCoeffs
from covdet.system_model import make_instance, simulate_received

from conftest import dense_objective


def phi(d, xi, zeta):
    """One-coordinate objective change, vectorised over d."""
    d = np.atleast_1d(d)[:, None]
    w = 1.0 + d * xi[None, :]
    return np.sum(np.log1p(d * xi[None, :]) - d * zeta[None, :] / w, axis=1)


def random_coeffs(rng, B):
    a = float(rng.uniform(0, 1))
    hi = min(1e7, 0.999 / max(a, 1e-12))
    xi = np.exp(rng.uniform(math.log(1e-2), math.log(hi), B))
    zeta = xi * np.exp(rng.uniform(-2, 2, B))
    return CoordCoeffs(xi, zeta), a


def test_exact_single_cell_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(300):
        c, a = random_coeffs(rng, 1)
        closed = min(max((c.zeta[0] - c.xi[0]) / c.xi[0] ** 2, -a), 1 - a)
        assert abs(solve_subproblem_exact(c, a) - closed) <= 1e-8 * max(1.0, abs(closed))


def test_exact_zero_when_matched():
    rng = np.random.default_rng(1)
    for _ in range(50):
        c, a = random_coeffs(rng, 3)
        c = CoordCoeffs(c.xi, c.xi.copy())
        d = solve_subproblem_exact(c, a)
        assert phi(d, c.xi, c.xi)[0] <= phi(0.0, c.xi, c.xi)[0] + 1e-12
        grid = np.linspace(-a, 1 - a, 1001)
        assert phi(0.0, c.xi, c.xi)[0] <= phi(grid, c.xi, c.xi).min() + 1e-9


@pytest.mark.parametrize("B", [2, 3, 5, 7])
def test_exact_beats_grid(B):
    rng = np.random.default_rng(B)
    for _ in range(100):
        c, a = random_coeffs(rng, B)
        d = solve_subproblem_exact(c, a)
        assert -a - 1e-15 <= d <= 1 - a + 1e-15
        grid = np.concatenate([np.linspace(-a, 1 - a, 1000), [-a, 1 - a]])
        assert phi(d, c.xi, c.zeta)[0] <= phi(grid, c.xi, c.zeta).min() + 1e-9


def test_inexact_single_cell_stationary_is_zero():
    inst = make_instance("hex", 1, 8, 2, 6, seed=0)
    a = np.random.default_rng(0).uniform(0.1, 0.9, 8)
    st_ = SolverState(inst.S, inst.G, inst.covariance(a), inst.sigma2, inst.N, a=a)
    assert abs(solve_subproblem_inexact(st_, 0, 3, SolverConfig(mode="inexact"))) < 1e-9


def test_init_mu_examples(small_state):
    # B = 1: empty off-cell sum
    inst = make_instance("hex", 1, 5, 1, 6, seed=0)
    st1 = SolverState.from_instance(inst, simulate_received(inst, 8))
    assert init_mu(st1, 0, 2, 1e-2) == 1e-2
    # zero sample covariances: sum is negative, floor applies
    st0 = small_state.copy()
    st0.sig_hat = np.zeros_like(st0.sig_hat)
    assert init_mu(st0, 1, 0, 1e-2) == 1e-2


def test_init_mu_hessian_oracle(small_state):
    st_ = small_state
    b, n = 1, 4
    i = st_.index(b, n)
    s = st_.S[:, i]
    sig = st_.covariances()
    # off-cell terms of F restricted to coordinate i are sum_j phi_j(d) exactly
    xi = np.empty(st_.B)
    zeta = np.empty(st_.B)
    for j in range(st_.B):
        inv = np.linalg.inv(sig[j])
        xi[j] = st_.G[j, i] * np.real(s.conj() @ inv @ s)
        zeta[j] = st_.G[j, i] * np.real(s.conj() @ inv @ st_.sig_hat[j] @ inv @ s)
    keep = np.arange(st_.B) != b
    h = 1e-3 / xi[keep].max()
    f = phi(np.array([-h, 0.0, h]), xi[keep], zeta[keep])
    fd = (f[0] - 2 * f[1] + f[2]) / h ** 2
    dense = float(np.sum(xi[keep] * (2 * zeta[keep] - xi[keep])))
    assert math.isclose(fd, dense, rel_tol=1e-4)
    expected = dense if dense > 0 else 1e-2
    assert math.isclose(init_mu(st_, b, n), expected, rel_tol=1e-9)


def test_inexact_step_decreases_objective():
    inst = make_instance("hex", 3, 10, 2, 8, seed=4)
    st_ = SolverState.from_instance(inst, simulate_received(inst, 64),
                                    a=np.random.default_rng(4).uniform(0, 1, inst.total_devices))
    conf = SolverConfig(mode="inexact")
    V = optimality_violation(st_)
    f0 = objective(st_)
    for i in np.flatnonzero(V > 1e-3)[:10]:
        b = int(st_.cell[i])
        n = i - int(st_.offsets[b])
        d = solve_subproblem_inexact(st_, b, n, conf)
        a = st_.a.copy()
        a[i] += d
        f1 = dense_objective(st_.S, st_.G, a, st_.sigma2, st_.sig_hat)
        assert f1 < f0
        assert f0 - f1 >= V[i] ** 2 / 2e6


def test_exact_dominates_inexact_per_step():
    inst = make_instance("hex", 3, 10, 2, 8, seed=5)
    st_ = SolverState.from_instance(inst, simulate_received(inst, 64),
                                    a=np.random.default_rng(5).uniform(0, 1, inst.total_devices))
    conf = SolverConfig(mode="inexact")
    for i in range(0, st_.size, 3):
        b = int(st_.cell[i])
        n = i - int(st_.offsets[b])
        c = coord_coefficients(st_, b, n)
        d_hat = solve_subproblem_exact(c, st_.a[i])
        d_bar = solve_subproblem_inexact(st_, b, n, conf)
        assert phi(d_hat, c.xi, c.zeta)[0] <= phi(d_bar, c.xi, c.zeta)[0] + 1e-10


def test_select_active_set_examples():
    V = np.array([0.5, 0.1, 0.3])
    assert list(select_active_set(V, 0.3)) == [0, 2]
    assert list(select_active_set(V, 0.0)) == [0, 1, 2]
    assert select_active_set(V, 0.6).size == 0


def test_omega_schedule():
    assert math.isclose(omega_schedule(0, 1.0, 1e-3, 5), 0.2)
    assert omega_schedule(3, 1e-3 * 5 ** 4, 1e-3, 5) == 1e-3
    vals = [omega_schedule(k, 1.0, 1e-3, 5) for k in range(10)]
    assert all(x >= y for x, y in zip(vals, vals[1:])) and vals[-1] == 1e-3


def test_threshold_estimate():
    truth = np.array([1.0, 0.0, 1.0])
    for ell in (0.1, 0.5, 0.9):
        assert np.array_equal(threshold_estimate(truth, ell), truth)
    assert np.array_equal(threshold_estimate([0.0, 1e-9, 0.3], 1e-12), [0, 1, 1])
    assert np.array_equal(threshold_estimate(np.full(4, 0.5), 0.5), np.ones(4))
    with pytest.raises(ValueError):
        threshold_estimate(truth, 1.0)


@pytest.mark.parametrize("kw", [dict(epsilon=0), dict(beta=1.0), dict(mu0_floor=0), dict(omega_decay=1.0),
                                dict(mode="newton"), dict(max_sweeps=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_unknown_variant():
    with pytest.raises(ValueError):
        make_config("fista")


@pytest.mark.parametrize("variant", ["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"])
def test_descent_feasibility_and_convergence(variant):
    inst = make_instance("hex", 3, 15, 2, 10, seed=21)
    st_ = SolverState.from_instance(inst, simulate_received(inst, 64))
    sol = run_cd(st_, make_config(variant, seed=1))
    assert sol.converged and sol.v_inf_trace[-1] <= 1e-3
    obj = np.array(sol.objective_trace)
    assert np.all(np.diff(obj) <= 1e-10 * np.abs(obj[1:]))
    assert np.all((sol.a_hat >= 0) & (sol.a_hat <= 1))
    assert len(sol.coord_updates_per_sweep) == sol.sweeps


def test_noise_only_estimate_small():
    inst = make_instance("hex", 1, 40, 0, 16, seed=3)
    sol = run_cd(SolverState.from_instance(inst, simulate_received(inst, 256)), make_config("vanilla"))
    assert np.max(sol.a_hat) < 0.05


def test_stationary_start_stops_after_one_sweep():
    inst = make_instance("hex", 3, 10, 2, 8, seed=2)
    st_ = SolverState.from_instance(inst, simulate_received(inst, 64))
    first = run_cd(st_, make_config("vanilla", epsilon=1e-9, max_sweeps=5000))
    st2 = SolverState.from_instance(inst, simulate_received(inst, 64), a=first.a_hat)
    sol = run_cd(st2, make_config("vanilla", epsilon=1e-3))
    assert sol.sweeps == 1 and sol.converged
    st3 = SolverState.from_instance(inst, simulate_received(inst, 64), a=first.a_hat)
    sol_as = run_active_set_cd(st3, make_config("active_set_vanilla", epsilon=1e-3))
    assert sol_as.sweeps == 0 and sol_as.coord_updates_total == 0


def test_first_active_set_is_subset():
    inst = make_instance("hex", 3, 20, 2, 10, seed=8)
    sol = run_cd(SolverState.from_instance(inst, simulate_received(inst, 64)), make_config("active_set_inexact"))
    assert sol.coord_updates_per_sweep[0] <= inst.total_devices
    assert all(k > 0 for k in sol.coord_updates_per_sweep)


@pytest.mark.slow
def test_single_cell_exact_recovery_rate():
    ok = 0
    for seed in range(100):
        inst = make_instance("hex", 1, 40, 5, 16, seq_type="I", seed=seed)
        sol = run_cd(SolverState.from_instance(inst, simulate_received(inst, 1024)), make_config("vanilla"))
        ok += np.array_equal(threshold_estimate(sol.a_hat, 0.5), inst.a_true.astype(int))
    assert ok > 95


def test_permutation_seed_independent_of_instance():
    inst = make_instance("hex", 3, 10, 2, 8, seed=2)
    covs = simulate_received(inst, 64)
    s1 = run_cd(SolverState.from_instance(inst, covs), make_config("vanilla", seed=0))
    s2 = run_cd(SolverState.from_instance(inst, covs), make_config("vanilla", seed=0))
    assert np.array_equal(s1.a_hat, s2.a_hat)


def test_solution_export(tmp_path):
    inst = make_instance("hex", 1, 8, 2, 6, seed=0)
    sol = run_cd(SolverState.from_instance(inst, simulate_received(inst, 32)), make_config("vanilla"))
    sol.export(tmp_path)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "sweep,objective,v_inf,active_set_size,cumulative_updates,elapsed_s"
    assert len(lines) == sol.sweeps + 2
    assert len((tmp_path / "solution.csv").read_text().splitlines()) == 9
