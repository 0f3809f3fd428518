import math

import numpy as np
import pytest

from covdet.error_analysis import (FisherMatrix, fisher_information, fisher_matrix_from, predicted_error_distribution,
                                   project_onto_cone_qp, sample_error_vectors)
from covdet.system_model import make_instance, simulate_received

from conftest import dense_objective
from oracles import fisher_dense, qp_enumeration, random_spd


def test_scalar_fisher():
    inst = make_instance("hex", 1, 1, 1, 6, seed=0)
    s, g = inst.S[:, 0], inst.G[0, 0]
    sig = g * np.outer(s, s.conj()) + inst.sigma2 * np.eye(6)
    q = g * np.real(s.conj() @ np.linalg.solve(sig, s))
    F = fisher_information(inst.S, inst.G, inst.a_true, inst.sigma2, 64)
    assert F.J.shape == (1, 1)
    assert math.isclose(F.J[0, 0], 64 * q * q, rel_tol=1e-10)


def test_fisher_structure_and_definition():
    inst = make_instance("hex", 3, 4, 1, 6, seed=1)
    F = fisher_information(inst.S, inst.G, inst.a_true, inst.sigma2, 32)
    assert np.all(F.J >= 0)
    assert np.allclose(F.J, F.J.T, rtol=0, atol=1e-10 * np.abs(F.J).max())
    assert F.eigvals.min() >= -1e-10 * F.eigvals.max()
    ref = fisher_dense(inst.S, inst.G, inst.a_true, inst.sigma2, 32)
    assert np.allclose(F.J, ref, rtol=1e-8, atol=1e-10 * np.abs(ref).max())


def test_fisher_monte_carlo_hessian():
    # E[Sigma_hat] enters the objective linearly, so the Hessian of the averaged
    # negative log-likelihood is the Hessian of F at the pooled sample covariance
    inst = make_instance("hex", 2, 3, 1, 4, seed=2)
    inst.sigma2 = 1e-10
    M = 8
    pooled = simulate_received(inst, 10_000).mats
    a0 = inst.a_true
    F = fisher_information(inst.S, inst.G, a0, inst.sigma2, M)
    n = a0.size
    diag = np.diag(F.J) / M
    h = 1e-3 / np.sqrt(diag)
    H = np.zeros((n, n))

    def f(a):
        return dense_objective(inst.S, inst.G, a, inst.sigma2, pooled)

    # one-sided at the box boundary would bias the estimate; the objective extends smoothly past it
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            H[i, j] = (f(a0 + ei + ej) - f(a0 + ei - ej) - f(a0 - ei + ej) + f(a0 - ei - ej)) / (4 * h[i] * h[j])
    H *= M
    assert np.linalg.norm(H - F.J) / np.linalg.norm(F.J) < 0.05


def test_fisher_rejects_bad_a():
    inst = make_instance("hex", 1, 3, 1, 4, seed=0)
    with pytest.raises(ValueError):
        fisher_information(inst.S, inst.G, np.full(3, 2.0), inst.sigma2, 8)


def test_pinv_identity():
    inst = make_instance("hex", 1, 30, 3, 4, seed=3)  # rank deficient: BN > L^2
    F = fisher_information(inst.S, inst.G, inst.a_true, inst.sigma2, 16)
    assert F.retained.sum() < 30
    P = F.pinv()
    assert np.linalg.norm(F.J @ P @ F.J - F.J) <= 1e-8 * np.linalg.norm(F.J)


def test_samples_identity_fisher():
    M, count = 16, 20_000
    F = fisher_matrix_from(M * np.eye(5), M)
    X = sample_error_vectors(F, count, np.random.default_rng(0))
    assert np.all(np.abs(X.var(axis=0) - 1.0) < 3 * math.sqrt(2 / count) * 1.5)


def test_samples_singular_fisher_weighted_covariance():
    # with a null direction only J x is determined: its covariance must be M J
    rng = np.random.default_rng(1)
    v = rng.standard_normal(5)
    v /= np.linalg.norm(v)
    P = np.eye(5) - np.outer(v, v)
    J = P @ random_spd(5, rng, cond=20) @ P
    M, count = 4, 100_000
    F = fisher_matrix_from(J, M)
    assert F.retained.sum() == 4
    Y = sample_error_vectors(F, count, rng) @ J
    C = M * J
    emp = Y.T @ Y / count
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / count)
    assert np.all(np.abs(emp - C) < 5 * se + 1e-12 * np.abs(C).max())


def test_rank_decision_ignores_gain_scale():
    # a well-conditioned matrix seen through a 1e-7 .. 1e0 diagonal scaling keeps full rank
    rng = np.random.default_rng(4)
    A = random_spd(6, rng, cond=10)
    d = np.logspace(-7, 0, 6)
    J = A * np.outer(d, d)
    F = fisher_matrix_from(J, 1)
    assert F.retained.all()
    assert np.allclose(F.pinv() @ J, np.eye(6), atol=1e-8)


def test_sample_covariance_oracle():
    rng = np.random.default_rng(2)
    J = random_spd(4, rng, cond=20)
    M = 8
    F = fisher_matrix_from(J, M)
    X = sample_error_vectors(F, 100_000, rng)
    C = M * np.linalg.inv(J)
    emp = X.T @ X / X.shape[0]
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / X.shape[0])
    assert np.all(np.abs(emp - C) < 5 * se)


def test_sample_count_error():
    with pytest.raises(ValueError):
        sample_error_vectors(fisher_matrix_from(np.eye(2), 1), 0, np.random.default_rng(0))


def test_projection_feasible_point_unchanged():
    rng = np.random.default_rng(3)
    J = random_spd(5, rng)
    inactive = np.array([True, True, False, False, True])
    x = np.where(inactive, 1.0, -1.0) * rng.uniform(0.1, 1, 5)
    assert np.allclose(project_onto_cone_qp(x, J, inactive), x, atol=1e-12)


def test_projection_identity_is_clamp():
    rng = np.random.default_rng(4)
    inactive = rng.uniform(size=6) < 0.5
    x = rng.standard_normal(6)
    expect = np.where(inactive, np.maximum(x, 0), np.minimum(x, 0))
    assert np.allclose(project_onto_cone_qp(x, 3.0 * np.eye(6), inactive), expect, atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_projection_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    J = random_spd(n, rng, cond=1e4)
    inactive = rng.uniform(size=n) < 0.6
    x = rng.standard_normal(n)
    eta = project_onto_cone_qp(x, J, inactive)
    assert np.max(np.abs(eta - qp_enumeration(x, J, inactive))) < 1e-8
    sgn = np.where(inactive, 1.0, -1.0)
    assert np.all(eta * sgn >= 0)
    grad = 2 * J @ (eta - x)
    step = eta - grad
    resid = np.abs(np.where(sgn > 0, np.maximum(step, 0), np.minimum(step, 0)) - eta)
    assert resid.max() <= 1e-8 * max(1.0, np.abs(J @ x).max())


def test_projection_batched_matches_single():
    rng = np.random.default_rng(5)
    J = random_spd(5, rng)
    inactive = np.array([1, 0, 1, 1, 0], dtype=bool)
    X = rng.standard_normal((7, 5))
    batch = project_onto_cone_qp(X, J, inactive)
    for k in range(7):
        assert np.allclose(batch[k], project_onto_cone_qp(X[k], J, inactive), atol=1e-12)


def test_projection_rejects_nonfinite():
    with pytest.raises(ValueError):
        project_onto_cone_qp(np.array([np.nan, 1.0]), np.eye(2), [True, False])


def test_predicted_point_mass_and_write(tmp_path):
    inst = make_instance("hex", 3, 10, 2, 8, seed=4)
    pred = predicted_error_distribution(inst, 128, 1000, np.random.default_rng(0))
    assert np.mean(np.abs(pred.zero_errors) < 1e-10) > 0
    assert np.mean(np.abs(pred.one_errors) < 1e-10) > 0
    assert np.all(pred.zero_errors >= 0) and np.all(pred.one_errors <= 0)
    assert np.all(np.diff(pred.pm) >= 0) and np.all(np.diff(pred.pf) <= 0)
    p1, p2 = pred.write(tmp_path, inst.a_true)
    lines = open(p1).read().splitlines()
    assert lines[0] == "sample_id,coord_type,error_value" and len(lines) == 1 + 1000 * 30
    assert open(p2).readline().strip() == "threshold,pm,pf"


def test_predicted_noiseless_orthogonal_limit():
    inst = make_instance("hex", 1, 4, 2, 4, seed=0)
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=complex)
    inst.S = H
    inst.sigma2 = 1e-16
    pred = predicted_error_distribution(inst, 256, 2000, np.random.default_rng(1))
    mid = (pred.grid > 0.3) & (pred.grid < 0.7)
    assert np.all(pred.pm[mid] < 1e-3) and np.all(pred.pf[mid] < 1e-3)
    assert np.max(np.abs(pred.zero_errors)) < 1e-4


def test_predicted_root_m_scaling():
    inst = make_instance("hex", 3, 10, 2, 8, seed=6)
    s1 = predicted_error_distribution(inst, 128, 4000, np.random.default_rng(2)).samples
    s2 = predicted_error_distribution(inst, 256, 4000, np.random.default_rng(3)).samples
    ratio = s1.std() / s2.std()
    assert abs(ratio / math.sqrt(2) - 1) < 0.10


def test_predicted_warns_when_inconsistent():
    inst = make_instance("hex", 1, 20, 6, 3, seq_type="II", seed=0)
    with pytest.warns(RuntimeWarning):
        predicted_error_distribution(inst, 16, 50, np.random.default_rng(0))
