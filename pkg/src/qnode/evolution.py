"""Time-ordered propagators U(s0, s1) for parametric Hamiltonians.

Two integrators are provided:

``exact``
    Reference integrator. Time-independent Hamiltonians are exponentiated
    once from their eigendecomposition. Time-dependent ones use a product of
    two exponentials per substep evaluated at the Gauss-Legendre nodes
    (fourth-order commutator-free Magnus), which stays exactly unitary.
``trotter1``
    First-order splitting over the terms in declaration order, each term's
    schedule sampled at the substep midpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hamiltonians import ParametricHamiltonian
from .quantum import DensityMatrix, DimensionError, StateVector

METHODS = ("exact", "trotter1")
DEFAULT_REL_STEP = {"exact": 1e-3, "trotter1": 1e-2}

_SQ3 = math.sqrt(3.0)
_GAUSS = (0.5 - _SQ3 / 6, 0.5 + _SQ3 / 6)
_CF4_A = (3 - 2 * _SQ3) / 12
_CF4_B = (3 + 2 * _SQ3) / 12


@dataclass(frozen=True)
class PropagatorConfig:
    """Integrator choice and substep size.

    ``max_step`` fixes the substep length; otherwise it is ``rel_step``
    times the evolution horizon (1e-3 for exact, 1e-2 for trotter1).
    """

    method: str = "exact"
    max_step: float | None = None
    rel_step: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown propagator method {self.method!r}")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.rel_step is not None and not self.rel_step > 0:
            raise ValueError("rel_step must be positive")

    def step(self, horizon: float) -> float:
        if self.max_step is not None:
            return self.max_step
        rel = self.rel_step if self.rel_step is not None else DEFAULT_REL_STEP[self.method]
        return rel * max(abs(horizon), 1e-300)


def _expm_herm(h: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


def _n_sub(length: float, step: float) -> int:
    return max(1, math.ceil(length / step - 1e-9))


CHUNK = 512  # substeps whose unitaries are built in one batched call


def _expm_herm_batch(h: np.ndarray) -> np.ndarray:
    """exp(-i h_n) for a stack of Hermitian matrices."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w)[:, None, :]) @ v.conj().transpose(0, 2, 1)


def _step_unitaries(H: ParametricHamiltonian, theta, starts: np.ndarray, hs: np.ndarray,
                    method: str) -> np.ndarray:
    """One-substep propagators for substeps [starts[i], starts[i] + hs[i]]."""
    if method == "exact":
        c1 = H.coefficients_many(starts + _GAUSS[0] * hs, theta)
        c2 = H.coefficients_many(starts + _GAUSS[1] * hs, theta)
        first = (_CF4_B * c1 + _CF4_A * c2) * hs[:, None]
        second = (_CF4_A * c1 + _CF4_B * c2) * hs[:, None]
        stack = H._stack
        u1 = _expm_herm_batch(np.einsum("nk,kij->nij", first, stack))
        u2 = _expm_herm_batch(np.einsum("nk,kij->nij", second, stack))
        return u2 @ u1
    coeffs = H.coefficients_many(starts + 0.5 * hs, theta) * hs[:, None]
    u = None
    for k, term in enumerate(H.terms):
        w, v = term.operator.eigh
        e = (v * np.exp(-1j * np.outer(coeffs[:, k], w))[:, None, :]) @ v.conj().T
        u = e if u is None else e @ u
    return u


def _substeps(knots: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split each [knots[i], knots[i+1]] into equal substeps no longer than ``step``.

    Returns substep starts, lengths and the cumulative substep count at each knot.
    """
    starts, hs, ends = [], [], [0]
    for a, b in zip(knots[:-1], knots[1:]):
        length = b - a
        n = 0 if length <= 0 else _n_sub(length, step)
        if n:
            h = length / n
            starts.append(a + h * np.arange(n))
            hs.append(np.full(n, h))
        ends.append(ends[-1] + n)
    if starts:
        return np.concatenate(starts), np.concatenate(hs), np.array(ends)
    return np.zeros(0), np.zeros(0), np.array(ends)


def _accumulate(H, theta, knots, cfg: PropagatorConfig, step: float) -> np.ndarray:
    """Forward propagators from knots[0] to every knot (first entry is the identity)."""
    starts, hs, ends = _substeps(np.asarray(knots, dtype=float), step)
    d = H.dim
    out = np.empty((len(knots), d, d), dtype=complex)
    u = np.eye(d, dtype=complex)
    out[0] = u
    k = 1
    while k < len(ends) and ends[k] == 0:
        out[k] = u
        k += 1
    for c0 in range(0, starts.size, CHUNK):
        steps = _step_unitaries(H, theta, starts[c0:c0 + CHUNK], hs[c0:c0 + CHUNK], cfg.method)
        for i, su in enumerate(steps, start=c0 + 1):
            u = su @ u
            while k < len(ends) and ends[k] == i:
                out[k] = u
                k += 1
    return out


def _segment(H, theta, s0: float, s1: float, cfg: PropagatorConfig, step: float) -> np.ndarray:
    """Forward propagator over [s0, s1] with s1 >= s0."""
    length = s1 - s0
    d = H.dim
    if length == 0:
        return np.eye(d, dtype=complex)
    if H.is_time_independent:
        if cfg.method == "exact":
            return _expm_herm(H.matrix(s0, theta), length)
        n = _n_sub(length, step)
        h = length / n
        one = _step_unitaries(H, theta, np.array([s0]), np.array([h]), "trotter1")[0]
        return np.linalg.matrix_power(one, n)
    return _accumulate(H, theta, [s0, s1], cfg, step)[-1]


def propagator(H: ParametricHamiltonian, theta, s0: float, s1: float,
               cfg: PropagatorConfig | None = None) -> np.ndarray:
    """U(s0, s1): evolves a state from time s0 to s1. For s1 < s0 this is U(s1, s0)^dagger."""
    cfg = cfg or PropagatorConfig()
    if not (np.isfinite(s0) and np.isfinite(s1)):
        raise ValueError("propagation times must be finite")
    theta = np.asarray(theta, dtype=float)
    if s1 >= s0:
        return _segment(H, theta, s0, s1, cfg, cfg.step(s1 - s0))
    return _segment(H, theta, s1, s0, cfg, cfg.step(s0 - s1)).conj().T


def evolve_state(state, H: ParametricHamiltonian, theta, s0: float, s1: float,
                 cfg: PropagatorConfig | None = None):
    if state.dim != H.dim:
        raise DimensionError(f"state dim {state.dim} != Hamiltonian dim {H.dim}")
    u = propagator(H, theta, s0, s1, cfg)
    if isinstance(state, StateVector):
        v = u @ state.amplitudes
        return StateVector(v / np.linalg.norm(v), state.dims)
    if isinstance(state, DensityMatrix):
        return DensityMatrix(u @ state.entries @ u.conj().T, state.dims, check=False)
    raise TypeError(f"cannot evolve {type(state).__name__}")


class GridEvolution:
    """Propagators U(0, s_i) and U(T, s_i) on a sorted set of times in [0, T].

    Time-independent Hamiltonians (and single-term ones) are handled in the
    eigenbasis of H so that only vectors or d x d blocks are touched; other
    cases accumulate one unitary per grid point.
    """

    def __init__(self, H: ParametricHamiltonian, theta, points, T: float,
                 cfg: PropagatorConfig | None = None):
        self.H = H
        self.theta = np.asarray(theta, dtype=float)
        self.points = np.asarray(points, dtype=float)
        self.T = float(T)
        self.cfg = cfg or PropagatorConfig()
        if np.any(np.diff(self.points) < 0):
            raise ValueError("grid points must be sorted")
        if self.points.size and (self.points[0] < 0 or self.points[-1] > self.T + 1e-12):
            raise ValueError("grid points must lie in [0, T]")
        single = H.n_terms == 1
        self.spectral = H.is_time_independent and (self.cfg.method == "exact" or single)
        if self.spectral:
            if single:
                w, v = H.terms[0].operator.eigh
                c = H.coefficients(0.0, self.theta)[0]
                self._lam, self._vec = c * w, v
            else:
                self._lam, self._vec = np.linalg.eigh(H.matrix(0.0, self.theta))
        else:
            self._build_unitaries()

    def _build_unitaries(self):
        step = self.cfg.step(self.T)
        knots = np.concatenate([[0.0], self.points, [self.T]])
        if self.H.is_time_independent:
            # trotter1 with several terms: repeat one substep unitary
            d = self.H.dim
            us = np.empty((knots.size, d, d), dtype=complex)
            us[0] = np.eye(d)
            for i in range(1, knots.size):
                us[i] = _segment(self.H, self.theta, knots[i - 1], knots[i], self.cfg, step) @ us[i - 1]
        else:
            us = _accumulate(self.H, self.theta, knots, self.cfg, step)
        self._us = us[1:-1]
        self._uT = us[-1]

    def _phases(self, times) -> np.ndarray:
        return np.exp(-1j * np.outer(times, self._lam))

    def unitaries(self) -> np.ndarray:
        """Stack of U(0, s_i)."""
        if self.spectral:
            ph = self._phases(self.points)
            return np.einsum("ab,nb,cb->nac", self._vec, ph, self._vec.conj())
        return self._us

    def final_unitary(self) -> np.ndarray:
        if self.spectral:
            return (self._vec * np.exp(-1j * self.T * self._lam)) @ self._vec.conj().T
        return self._uT

    def forward_vectors(self, x: np.ndarray) -> np.ndarray:
        """Rows U(0, s_i) x."""
        if self.spectral:
            y = self._vec.conj().T @ x
            return (self._phases(self.points) * y) @ self._vec.T
        return self._us @ x

    def backward_vectors(self, y: np.ndarray) -> np.ndarray:
        """Rows U(T, s_i) y = U(0, s_i) U(0, T)^dagger y."""
        if self.spectral:
            z = self._vec.conj().T @ y
            return (self._phases(self.points - self.T) * z) @ self._vec.T
        return self._us @ (self._uT.conj().T @ y)

    def final_vector(self, x: np.ndarray) -> np.ndarray:
        if self.spectral:
            z = self._vec.conj().T @ x
            return self._vec @ (np.exp(-1j * self.T * self._lam) * z)
        return self._uT @ x

    def _conj_stack(self, m: np.ndarray, times) -> np.ndarray:
        mp = self._vec.conj().T @ m @ self._vec
        ph = self._phases(times)
        blocks = ph[:, :, None] * mp[None] * ph.conj()[:, None, :]
        return self._vec[None] @ blocks @ self._vec.conj().T[None]

    def forward_density(self, rho: np.ndarray) -> np.ndarray:
        if self.spectral:
            return self._conj_stack(rho, self.points)
        return self._us @ rho @ self._us.conj().transpose(0, 2, 1)

    def backward_density(self, a: np.ndarray) -> np.ndarray:
        if self.spectral:
            return self._conj_stack(a, self.points - self.T)
        w = self._us @ self._uT.conj().T
        return w @ a @ w.conj().transpose(0, 2, 1)

    def final_density(self, rho: np.ndarray) -> np.ndarray:
        u = self.final_unitary()
        return u @ rho @ u.conj().T
