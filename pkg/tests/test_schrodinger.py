import numpy as np
import pytest
from scipy.linalg import expm

from qnode.adjoint import TimeGrid, theorem2_gradient
from qnode.checks import fd_gradient
from qnode.evolution import evolve_state
from qnode.hamiltonians import Constant, Fixed
from qnode.quantum import Observable, StateVector, random_hermitian
from qnode.schrodinger import (
    CollocationRecord,
    LinearSystem,
    XiRegister,
    decay_system,
    decay_value,
    dilate,
    hermitian_split,
    hermitian_system,
    initial_state,
    ode_loss_and_seed,
    recover,
    xi_initial,
)

XI = XiRegister(256, 16.0)


def test_split_examples(rng):
    h = random_hermitian(3, rng)
    a1, a2 = hermitian_split(h)
    assert np.allclose(a1, h) and np.allclose(a2, 0)
    a1, a2 = hermitian_split(np.array([[-0.7j]]))
    assert np.allclose(a1, 0) and np.allclose(a2, [[0.7]])
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    a1, a2 = hermitian_split(A)
    assert np.max(np.abs(A - (a1 - 1j * a2))) < 1e-12
    assert np.allclose(a1, a1.conj().T) and np.allclose(a2, a2.conj().T)


def test_dilate_decay_and_hermitian(rng):
    H = dilate(decay_system(), XI)
    P0 = np.diag([1.0, 0.0])
    assert np.allclose(H.matrix(0.0, [0.7]), 0.7 * np.kron(P0, XI.eta_hat), atol=1e-14)
    h = random_hermitian(2, rng)
    Hh = dilate(hermitian_system(h), XI)
    assert np.allclose(Hh.matrix(0.0, np.zeros(0)), np.kron(h, np.eye(XI.n)), atol=1e-14)


def test_dilate_two_paths_agree(rng):
    A1 = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    A2 = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    sys = LinearSystem(((Constant(0), A1), (Fixed(0.4), A2)), 1)
    H = dilate(sys, XI).matrix(0.0, [1.3])
    assert np.max(np.abs(H - H.conj().T)) < 1e-10
    b1, b2 = hermitian_split(sys.matrix(0.0, [1.3]))
    direct = np.kron(b1, np.eye(XI.n)) + np.kron(b2, XI.eta_hat)
    assert np.max(np.abs(H - direct)) < 1e-10


def test_initial_profile():
    v = xi_initial(XI)
    pts = XI.points
    # grid is symmetric apart from the unpaired point at -L
    assert np.allclose(v[1:], v[1:][::-1])
    assert np.argmax(v) == np.argmin(np.abs(pts))
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


def test_scalar_decay_weight():
    a, T = 0.7, 1.0
    sys = LinearSystem(((Constant(0), np.array([[-1j]])),), 1)
    xi = XiRegister(512, 16.0)
    v0 = initial_state(np.ones(1), xi)
    vT = evolve_state(v0, dilate(sys, xi), [a], 0.0, T)
    rho, w = recover(vT, xi)
    assert np.allclose(rho.entries, [[1.0]])
    w0 = float(np.sum(xi_initial(xi)[xi.positive > 0] ** 2))
    assert w == pytest.approx(np.exp(-2 * a * T) * w0, rel=1e-2)


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_decay_population_ratio(T):
    xi = XiRegister(512, 16.0)
    v0 = initial_state(np.ones(2) / np.sqrt(2), xi)
    vT = evolve_state(v0, dilate(decay_system(), xi), [0.7], 0.0, T)
    rho, _ = recover(vT, xi)
    assert rho.entries[0, 0].real == pytest.approx(decay_value(0.7, T), abs=1e-3)


def test_hermitian_recovery_identity(rng):
    h = random_hermitian(2, rng)
    u0 = np.array([0.6, 0.8j])
    vT = evolve_state(initial_state(u0, XI), dilate(hermitian_system(h), XI), np.zeros(0), 0.0, 1.0)
    rho, w = recover(vT, XI)
    u = expm(-1j * h) @ u0
    assert np.max(np.abs(rho.entries - np.outer(u, u.conj()))) < 1e-6


def test_negative_support_rejected():
    amp = np.zeros(2 * XI.n, dtype=complex)
    amp[3] = 1.0
    with pytest.raises(ValueError):
        recover(StateVector(amp), XI)


def test_ode_loss_zero_when_matching():
    vT = evolve_state(initial_state(np.ones(2) / np.sqrt(2), XI), dilate(decay_system(), XI), [0.5], 0, 1)
    rho, _ = recover(vT, XI)
    O = Observable(np.diag([1.0, 0.0]))
    loss, seed = ode_loss_and_seed([CollocationRecord(O, rho.entries[0, 0].real)], vT, XI)
    assert loss == pytest.approx(0.0, abs=1e-28)
    assert all(abs(c.c) < 1e-14 for c in seed.components)


def test_ode_seed_reconstructs_derivative():
    vT = evolve_state(initial_state(np.array([0.6, 0.8]), XI), dilate(decay_system(), XI), [0.5], 0, 1)
    O = Observable(np.array([[0.3, 0.2], [0.2, -0.5]]))
    recs = [CollocationRecord(O, 0.1)]
    loss, seed = ode_loss_and_seed(recs, vT, XI)
    rho, w = recover(vT, XI)
    m = float(np.real(np.trace(O.entries @ rho.entries)))
    P = np.diag(XI.positive)
    expected = -2 * (0.1 - m) / w * (np.kron(O.entries, P) - m * np.kron(np.eye(2), P))
    assert np.max(np.abs(seed.operator() - expected)) < 1e-10


def test_ode_gradient_matches_finite_differences():
    xi = XI
    H = dilate(decay_system(), xi)
    v0 = initial_state(np.ones(2) / np.sqrt(2), xi)
    O = Observable(np.diag([1.0, 0.0]))
    recs = [CollocationRecord(O, decay_value(0.7, 1.0))]

    def loss(th):
        return ode_loss_and_seed(recs, evolve_state(v0, H, th, 0, 1.0), xi)[0]

    theta = np.array([0.4])
    _, seed = ode_loss_and_seed(recs, evolve_state(v0, H, theta, 0, 1.0), xi)
    g = theorem2_gradient(H, theta, v0, seed, 1.0, TimeGrid.trapezoid(1.0, n_points=201)).values
    assert abs(g[0] - fd_gradient(loss, theta, 1e-5)[0]) < 1e-4


def test_grid_validation():
    with pytest.raises(ValueError):
        XiRegister(7, 1.0)
    with pytest.raises(ValueError):
        XiRegister(8, 0.0)
