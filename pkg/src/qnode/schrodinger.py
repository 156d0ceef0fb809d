"""Hermitian dilation of linear systems du/dt = -i A(t, theta) u.

With A = A1 - i A2 (A1, A2 Hermitian) the dilated Hamiltonian
H = A1 (x) 1 + A2 (x) eta_hat acts on the system times a grid-discretised
auxiliary coordinate xi, where eta_hat = i d/dxi is applied spectrally.
Starting from u0 (x) e^{-|xi|}, the part of the evolved state on xi > 0
is proportional to u(t) (x) e^{-|xi|}, so the solution is read off by
projecting onto xi > 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .adjoint import AdjointSeed, SeedComponent
from .hamiltonians import Constant, Fixed, ParametricHamiltonian, Schedule, Term
from .losses import observable_components
from .quantum import DensityMatrix, DimensionError, Observable, StateVector

WEIGHT_TOL = 1e-12


def hermitian_split(A) -> tuple[np.ndarray, np.ndarray]:
    """(A1, A2) with A1 = (A + A^dagger)/2, A2 = i (A - A^dagger)/2, so A = A1 - i A2."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    Ad = A.conj().T
    return 0.5 * (A + Ad), 0.5j * (A - Ad)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """A(t, theta) = sum_k c_k(t, theta) A_k with real schedules c_k."""

    terms: tuple[tuple[Schedule, np.ndarray], ...]
    n_params: int

    def __post_init__(self):
        terms = tuple((s, np.asarray(m, dtype=complex)) for s, m in self.terms)
        if not terms:
            raise ValueError("linear system needs at least one term")
        D = terms[0][1].shape[0]
        for _, m in terms:
            if m.shape != (D, D):
                raise DimensionError("all term matrices must be square of the same size")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return self.terms[0][1].shape[0]

    def matrix(self, t: float, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return sum(s.value(t, theta) * m for s, m in self.terms)


@dataclass(frozen=True, eq=False)
class XiRegister:
    """Periodic grid of ``n`` points on [-L, L) for the auxiliary coordinate."""

    n: int = 512
    L: float = 16.0

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ValueError("xi grid needs an even number of points (>= 4)")
        if not self.L > 0:
            raise ValueError("xi half-width must be positive")

    @cached_property
    def points(self) -> np.ndarray:
        return -self.L + 2 * self.L * np.arange(self.n) / self.n

    @cached_property
    def eta_hat(self) -> np.ndarray:
        """i d/dxi by Fourier differentiation; the unpaired Nyquist mode is dropped."""
        h = 2 * self.L / self.n
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=h)
        k[self.n // 2] = 0.0
        F = np.fft.fft(np.eye(self.n), axis=0, norm="ortho")
        m = F.conj().T @ (-k[:, None] * F)
        return 0.5 * (m + m.conj().T)

    @cached_property
    def positive(self) -> np.ndarray:
        """Diagonal of the projector onto xi > 0."""
        return (self.points > 0).astype(float)

    @property
    def n_positive(self) -> int:
        return int(self.positive.sum())


def xi_initial(xi: XiRegister) -> np.ndarray:
    v = np.exp(-np.abs(xi.points))
    return v / np.linalg.norm(v)


def dilate(sys: LinearSystem, xi: XiRegister) -> ParametricHamiltonian:
    """One dilated term A1_k (x) 1 + A2_k (x) eta_hat per system term, same schedule."""
    eye = np.eye(xi.n)
    terms = []
    for k, (sched, A) in enumerate(sys.terms):
        a1, a2 = hermitian_split(A)
        op = np.kron(a1, eye) + np.kron(a2, xi.eta_hat)
        terms.append(Term(sched, Observable(op, (sys.dim, xi.n)), f"A{k}"))
    return ParametricHamiltonian(tuple(terms), sys.n_params, (sys.dim, xi.n))


def initial_state(u0, xi: XiRegister) -> StateVector:
    u0 = np.asarray(u0, dtype=complex)
    return StateVector(np.kron(u0 / np.linalg.norm(u0), xi_initial(xi)), (u0.size, xi.n))


def recover(v, xi: XiRegister) -> tuple[DensityMatrix, float]:
    """Normalised system state on xi > 0 and the probability of that projection."""
    amp = v.amplitudes if isinstance(v, StateVector) else np.asarray(v)
    if amp.size % xi.n:
        raise DimensionError("vector length is not a multiple of the xi grid size")
    x = amp.reshape(-1, xi.n) * xi.positive
    rho = x @ x.conj().T
    weight = float(np.real(np.trace(rho)))
    if weight < WEIGHT_TOL:
        raise ValueError("projection onto xi > 0 annihilates the state")
    return DensityMatrix(rho / weight, check=False), weight


@dataclass(frozen=True, eq=False)
class CollocationRecord:
    """Normalised data value u_bar = tr(O sigma(T)) / tr(sigma(T))."""

    observable: Observable
    value: float


def ode_loss_and_seed(records: Sequence[CollocationRecord], v_T, xi: XiRegister
                      ) -> tuple[float, AdjointSeed]:
    """Mean squared mismatch on the recovered state and a seed on system (x) xi.

    The seed carries the full derivative of the normalised projection:
    -2 (u_bar - m) / (N w) * (O (x) P - m 1 (x) P), where m = tr(O rho),
    w the projection weight and P the xi > 0 projector. O is split into
    positive parts, each paired with P and normalised into a density matrix.
    """
    if not records:
        raise ValueError("no collocation records")
    rho, w = recover(v_T, xi)
    D = rho.dim
    P = np.diag(xi.positive)
    n_pos = xi.n_positive
    N = len(records)
    loss = 0.0
    comps = []
    ident = DensityMatrix(np.kron(np.eye(D) / D, P / n_pos), (D, xi.n), check=False)
    for rec in records:
        O = np.asarray(rec.observable.entries)
        m = float(np.real(np.einsum("ij,ji->", O, rho.entries)))
        r = rec.value - m
        loss += r**2 / N
        pref = -2.0 * r / (N * w)
        for sign, A, dm in observable_components(rec.observable):
            a = DensityMatrix(np.kron(dm.entries, P / n_pos), (D, xi.n), check=False)
            comps.append(SeedComponent(pref * sign, A * n_pos, a))
        comps.append(SeedComponent(-pref * m, float(D * n_pos), ident))
    return loss, AdjointSeed(tuple(comps))


def decay_system(D: int = 2) -> LinearSystem:
    """du_0/dt = -theta u_0, other components constant: A = theta * (-i |0><0|)."""
    A = np.zeros((D, D), dtype=complex)
    A[0, 0] = -1j
    return LinearSystem(((Constant(0), A),), 1)


def decay_value(a: float, T: float, D: int = 2) -> float:
    """Exact normalised weight of component 0 for u0 uniform over D components."""
    e = np.exp(-2 * a * T)
    return float(e / (e + D - 1))


def hermitian_system(A: np.ndarray) -> LinearSystem:
    return LinearSystem(((Fixed(1.0), A),), 0)
