import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qnode.hamiltonians import (
    HYDROGEN_COEFFS,
    Constant,
    Fixed,
    Fourier,
    ParametricHamiltonian,
    PiecewiseConstant,
    SineNetwork,
    Term,
    builtin_hydrogen,
    builtin_ising,
    builtin_td_ising,
    hamiltonian_from_json,
    network_schedule_values,
    pauli_sum,
    single_qubit_ansatz,
)
from qnode.quantum import X, Y, Z, pauli_matrix

seeds = st.integers(0, 2**32 - 1)


def mixed_hamiltonian():
    terms = (
        Term(Fixed(0.3), pauli_sum([(1.0, "ZZ")])),
        Term(Constant(0), pauli_sum([(1.0, "XI")])),
        Term(Fourier(2.0, (1, 2, 3, 4)), pauli_sum([(1.0, "IY")])),
        Term(SineNetwork(2, tuple(range(5, 12))), pauli_sum([(1.0, "XX")])),
        Term(PiecewiseConstant((0.0, 0.5, 1.0), (12, 13)), pauli_sum([(1.0, "ZI")])),
    )
    return ParametricHamiltonian(terms, 14)


def test_single_qubit_ansatz_at_zero_is_zero():
    assert np.allclose(single_qubit_ansatz().matrix(0.3, np.zeros(3)), 0)


def test_hydrogen_target_pattern():
    m = builtin_hydrogen()
    h = m.target.matrix(0.0, np.zeros(0))
    c = HYDROGEN_COEFFS
    expected = (c[0] * pauli_matrix("ZI") + c[1] * pauli_matrix("IZ") + c[2] * pauli_matrix("ZZ")
                + c[3] * pauli_matrix("XX"))
    assert np.allclose(h, expected, atol=1e-15)
    assert h[0, 3] == pytest.approx(0.180931)
    assert np.allclose(m.ansatz.matrix(0.0, m.theta_star), h, atol=1e-12)
    assert np.linalg.norm(h, 2) <= sum(abs(x) for x in c) == pytest.approx(0.988083)


def test_td_ising_transverse_coefficient():
    m = builtin_td_ising(2, 2, np.random.default_rng(0))
    assert m.target.coefficients(0.5, np.zeros(0))[-1] == pytest.approx(1.0)
    assert m.target.coefficients(1.0, np.zeros(0))[-1] == pytest.approx(0.0, abs=1e-15)
    assert m.ansatz.n_params == 8
    ts = np.linspace(0, 2, 41)
    assert np.allclose(network_schedule_values(m, m.theta_star, ts), np.sin(np.pi * ts), atol=1e-14)
    for t in (0.2, 1.3):
        assert np.allclose(m.ansatz.matrix(t, m.theta_star), m.target.matrix(t, np.zeros(0)), atol=1e-14)


def test_ising_models():
    m = builtin_ising(2, np.random.default_rng(3))
    assert len(m.target.terms) == 1
    h = m.target.matrix(0.0, np.zeros(0))
    assert np.allclose(h, np.diag(np.diag(h)))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = builtin_ising(3, rng).theta_star
        assert np.all((np.abs(x) >= 0.08) & (np.abs(x) <= 0.5))


def test_dH_dtheta_examples():
    H = single_qubit_ansatz()
    assert np.allclose(H.dH_dtheta(0.4, np.array([0.1, 0.2, 0.3]), 0).entries, X)
    f = ParametricHamiltonian((Term(Fourier(3.0, (0, 1)), pauli_sum([(1.0, "Z")])),), 2)
    t = 0.37
    assert np.allclose(f.dH_dtheta(t, np.array([0.5, -0.2]), 0).entries, np.cos(3.0 * t) * Z)


def test_network_derivative_matches_finite_difference(rng):
    s = SineNetwork(2, tuple(range(7)))
    theta = rng.normal(size=7)
    t = 0.83
    g = s.grad(t, theta)
    w2, w1, b = theta[:2], theta[2:4], theta[4:6]
    assert np.allclose(g[2:4], w2 * t * np.cos(w1 * t + b))
    for m in range(7):
        e = np.zeros(7)
        e[m] = 1e-6
        fd = (s.value(t, theta + e) - s.value(t, theta - e)) / 2e-6
        assert fd == pytest.approx(g[m], rel=1e-6, abs=1e-9)


@given(seeds, st.floats(0.0, 1.0))
def test_schedule_derivatives_match_finite_differences(seed, t):
    H = mixed_hamiltonian()
    theta = np.random.default_rng(seed).normal(size=14)
    jac = H.schedule_jacobian(t, theta)
    for m in range(14):
        e = np.zeros(14)
        e[m] = 1e-6
        fd = (H.coefficients(t, theta + e) - H.coefficients(t, theta - e)) / 2e-6
        assert np.allclose(fd, jac[:, m], rtol=1e-6, atol=1e-8)


@given(seeds, st.floats(0.0, 1.0))
def test_unowned_derivatives_vanish(seed, t):
    H = mixed_hamiltonian()
    theta = np.random.default_rng(seed).normal(size=14)
    jac = H.schedule_jacobian(t, theta)
    for k, term in enumerate(H.terms):
        mask = np.ones(14, bool)
        mask[list(term.schedule.indices)] = False
        assert np.all(jac[k, mask] == 0)


@given(seeds, st.floats(0.0, 1.0))
def test_dH_dtheta_reconstructs_from_jacobian(seed, t):
    H = mixed_hamiltonian()
    theta = np.random.default_rng(seed).normal(size=14)
    jac = H.schedule_jacobian(t, theta)
    for m in range(14):
        rebuilt = sum(jac[k, m] * term.operator.entries for k, term in enumerate(H.terms))
        assert np.array_equal(H.dH_dtheta(t, theta, m).entries, rebuilt)


@given(seeds, st.floats(0.0, 1.0))
def test_evaluate_is_hermitian_and_linear(seed, t):
    H = mixed_hamiltonian()
    theta = np.random.default_rng(seed).normal(size=14)
    h = H.matrix(t, theta)
    assert np.max(np.abs(h - h.conj().T)) < 1e-12
    coeffs = H.coefficients(t, theta)
    k = 2
    doubled = h + coeffs[k] * H.terms[k].operator.entries
    manual = sum((2 if i == k else 1) * c * term.operator.entries
                 for i, (c, term) in enumerate(zip(coeffs, H.terms)))
    assert np.allclose(doubled, manual, atol=1e-12)


def test_vectorised_values_match_scalar(rng):
    H = mixed_hamiltonian()
    theta = rng.normal(size=14)
    ts = np.linspace(0, 1, 17)
    many = H.coefficients_many(ts, theta)
    assert np.allclose(many, np.array([H.coefficients(t, theta) for t in ts]), atol=1e-15)
    assert np.allclose(H.matrices(ts, theta)[5], H.matrix(ts[5], theta))


def test_piecewise_right_open_intervals():
    p = PiecewiseConstant((0.0, 0.5, 1.0), (0, 1))
    theta = np.array([2.0, 3.0])
    assert p.value(0.25, theta) == 2.0
    assert p.value(0.5, theta) == 3.0
    assert p.value(1.0, theta) == 3.0
    assert p.value(1.5, theta) == 0.0


def test_overlapping_indices_rejected():
    with pytest.raises(ValueError):
        ParametricHamiltonian((Term(Constant(0), pauli_sum([(1.0, "X")])),
                               Term(Constant(0), pauli_sum([(1.0, "Z")]))), 1)


def test_parameter_shape_checked():
    with pytest.raises(ValueError):
        single_qubit_ansatz().matrix(0.0, np.zeros(2))


def test_json_round_trip(rng):
    H = mixed_hamiltonian()
    theta = rng.normal(size=14)
    back = hamiltonian_from_json(H.to_json())
    for t in (0.1, 0.6, 0.9):
        assert np.allclose(back.matrix(t, theta), H.matrix(t, theta), atol=1e-14)


def test_y_term_decomposition():
    assert np.allclose(pauli_sum([(0.5, "Y")]).entries, 0.5 * Y)
