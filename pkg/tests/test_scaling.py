import itertools
import math

import numpy as np
import pytest

from covdet.scaling import (build_kron_matrix, check_consistency, hermitian_rows, interference_bound,
                            interference_constant, nsp_check_small, null_space_basis, phase_diagram,
                            transition_midpoint, witness_checks, write_phase_csv)
from covdet.system_model import build_cell_layout, generate_sequences, make_instance, place_devices


def test_kron_single_column():
    s = np.array([[1 + 1j], [1 - 1j]]) / math.sqrt(2)
    k = build_kron_matrix(s)
    assert k.full.shape == (4, 1) and k.offdiag.shape == (2, 1)
    expected = [np.conj(s[i, 0]) * s[j, 0] for i in range(2) for j in range(2)]
    assert np.allclose(k.full[:, 0], expected)


def test_kron_trace_identity():
    S = generate_sequences("II", 6, 1, 10, np.random.default_rng(0))
    k = build_kron_matrix(S)
    u = np.eye(6).ravel()
    assert np.allclose(u @ k.full, 6.0, rtol=1e-12)


def test_kron_orthogonal_columns_independent():
    S = np.array([[1, 1], [1, -1]], dtype=complex)
    assert np.linalg.matrix_rank(build_kron_matrix(S).full) == 2


def test_hermitian_rows_l1_matches_full_kron():
    S = generate_sequences("III", 5, 1, 7, np.random.default_rng(1))
    rows, w = hermitian_rows(S)
    full = build_kron_matrix(S).full
    x = np.random.default_rng(2).standard_normal(7)
    lhs = np.sum(w * np.abs(rows @ x))
    rhs = np.sum(np.abs((full @ x).real)) + np.sum(np.abs((full @ x).imag))
    assert math.isclose(lhs, rhs, rel_tol=1e-12)


def test_orthogonal_pair_consistent():
    S = np.array([[1, 1], [1, -1]], dtype=complex)
    v = check_consistency(S, np.array([[1e-10, 3e-11]]), np.array([1.0, 0.0]))
    assert v.consistent and v.witness is None


def test_identical_pair_inconsistent_with_witness():
    s = np.array([1, 1j], dtype=complex)
    S = np.column_stack([s, s])
    g1, g2 = 2e-11, 3e-11
    G = np.array([[g1, g2]])
    a = np.array([1.0, 0.0])
    v = check_consistency(S, G, a)
    assert not v.consistent
    ref = np.array([-g2, g1]) / (g1 + g2)
    assert np.allclose(v.witness, ref, atol=1e-9)
    chk = witness_checks(S, G, a, v)
    assert chk["sign_ok"] and chk["residual_ok"]


@pytest.mark.parametrize("seed", range(3))
def test_no_active_devices_consistent(seed):
    inst = make_instance("hex", 1, 12, 0, 6, seed=seed)
    assert check_consistency(inst.S, inst.G, inst.a_true).consistent


def test_inconsistent_witnesses_valid():
    found = 0
    for seed in range(40):
        inst = make_instance("hex", 1, 20, 6, 3, seq_type="II", seed=seed)
        v = check_consistency(inst.S, inst.G, inst.a_true)
        if v.consistent:
            continue
        found += 1
        chk = witness_checks(inst.S, inst.G, inst.a_true, v)
        assert chk["sign_ok"] and chk["residual_ok"]
        for s, l1 in zip(chk["sum_zero"], chk["sum_l1"]):
            assert s <= 1e-8 * l1 + 1e-6
    assert found > 0


def test_single_cell_gain_invariance():
    rng = np.random.default_rng(0)
    for seed in range(5):
        inst = make_instance("hex", 1, 20, 4 + seed * 2, 5, seed=seed)
        base = check_consistency(inst.S, inst.G, inst.a_true).consistent
        for _ in range(3):
            G2 = np.exp(rng.uniform(np.log(1e-14), np.log(1e-8), inst.G.shape))
            assert check_consistency(inst.S, G2, inst.a_true).consistent == base


def test_consistency_dimension_errors():
    S = np.eye(3, dtype=complex)
    with pytest.raises(ValueError):
        check_consistency(S, np.ones((1, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        check_consistency(S, np.array([[1.0, 0.0, 1.0]]), np.zeros(3))


def test_phase_diagram_properties(tmp_path):
    counts = phase_diagram(12, 1, [4, 7], [0, 2, 6, 10], trials=20, seed=1)
    assert counts.shape == (2, 4)
    assert np.all(counts[:, 0] == 20)  # K = 0 always consistent
    # L^2 / N >= 4: injective except for rare QPSK outer-product collisions
    assert counts[1, 1] >= 18
    generic = phase_diagram(12, 1, [7], [2, 6], trials=20, seq_type="II", seed=1)
    assert np.all(generic == 20)
    frac = counts / 20
    assert np.all(np.diff(frac, axis=1) <= 2 / math.sqrt(20))
    again = phase_diagram(12, 1, [4, 7], [0, 2, 6, 10], trials=20, seed=1)
    assert np.array_equal(counts, again)
    path = write_phase_csv(tmp_path / "phase.csv", counts, [4, 7], [0, 2, 6, 10], 1, "I", 20)
    lines = open(path).read().splitlines()
    assert lines[0] == "L,K,B,seq_type,trials,successes" and len(lines) == 9


def test_transition_midpoint():
    assert transition_midpoint([1, 3, 5], [1.0, 0.6, 0.2]) == pytest.approx(3 + 0.1 / 0.4 * 2)
    assert math.isnan(transition_midpoint([1, 2], [1.0, 0.9]))


def test_nsp_trivial_null_space():
    A = np.eye(4)
    assert nsp_check_small(A, 2, 0.1)


def test_nsp_violated_by_unit_vector():
    A = np.hstack([np.zeros((3, 1)), np.eye(3)])  # null space spanned by e1
    assert not nsp_check_small(A, 1, 0.5)


def _sampling_oracle(Z, s_order, rho, n_samples, rng):
    Y = rng.standard_normal((n_samples, Z.shape[1]))
    V = np.abs(Y @ Z.T)
    V.sort(axis=1)
    top = V[:, -s_order:].sum(axis=1)
    rest = V[:, :-s_order].sum(axis=1)
    return bool(np.all(top <= rho * rest + 1e-12))


@pytest.mark.parametrize("seed,rho", [(0, 1.0), (1, 0.5), (2, 2.0), (3, 0.3)])
def test_nsp_matches_sampling_oracle(seed, rho):
    S = generate_sequences("I", 3, 1, 8, np.random.default_rng(seed))
    kron = build_kron_matrix(S)
    Z = null_space_basis(kron)
    assert 1 <= Z.shape[1] <= 3
    exact = nsp_check_small(kron, 2, rho)
    assert exact == _sampling_oracle(Z, 2, rho, 100_000, np.random.default_rng(seed))


def test_interference_single_cell_empty():
    lay = build_cell_layout("hex", 1, 500)
    pos = place_devices(lay, 10, 10.0, np.random.default_rng(0))
    lhs, C = interference_bound(lay, 3.76, 10 ** -12.81, 1000.0, 500.0, pos)
    assert np.all(lhs == 0) and C > 0


def test_interference_bound_holds_seven_cells():
    lay = build_cell_layout("hex", 7, 500)
    for seed in range(10):
        pos = place_devices(lay, 30, 10.0, np.random.default_rng(seed))
        lhs, C = interference_bound(lay, 3.76, 10 ** -12.81, 1000.0, 500.0, pos)
        assert np.all(lhs <= C)


def test_interference_constant_values():
    C = interference_constant(3.76, 10 ** -12.81, 1000.0, 500.0)
    g = 3.76
    ref = 2 ** (g + 3) * 10 ** -12.81 * 2 ** g * (math.pi / (2 * (g - 2)) + 2 * g / (g - 1) + 2 ** (-g / 2))
    assert math.isclose(C, ref, rel_tol=1e-12)
    assert interference_constant(2.1, 1, 1, 1) > interference_constant(4.0, 1, 1, 1)
    with pytest.raises(ValueError):
        interference_constant(2.0, 1, 1, 1)
