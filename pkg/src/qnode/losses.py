"""Loss functions on the terminal state and their adjoint seeds.

Each ``*_loss_and_seed`` function returns the loss value together with a
decomposition of dL/drho(T) into signed density matrices, which is what
the gradient engines in :mod:`qnode.adjoint` consume.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .adjoint import AdjointSeed, SeedComponent
from .quantum import (
    DensityMatrix,
    DimensionError,
    Observable,
    PauliString,
    StateVector,
    pauli_decompose_to_pure,
    ptrace,
    validate_density,
)


def overlap(sigma, rho) -> float:
    """tr(sigma rho) for any mix of state vectors and density matrices."""
    if sigma.dim != rho.dim:
        raise DimensionError(f"state dims differ: {sigma.dim} vs {rho.dim}")
    if isinstance(sigma, StateVector) and isinstance(rho, StateVector):
        return float(abs(np.vdot(sigma.amplitudes, rho.amplitudes)) ** 2)
    if isinstance(sigma, StateVector):
        sigma, rho = rho, sigma
    if isinstance(rho, StateVector):
        v = rho.amplitudes
        return float(np.real(np.vdot(v, sigma.entries @ v)))
    return float(np.real(np.einsum("ij,ji->", sigma.entries, rho.entries)))


def _as_matrix(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.density().entries
    return np.asarray(state.entries)


def stateprep_loss_and_seed(rho_T, sigma) -> tuple[float, AdjointSeed]:
    """1 - tr(sigma rho_T); dL/drho = -sigma."""
    if isinstance(sigma, DensityMatrix):
        validate_density(sigma.entries)
    loss = 1.0 - overlap(sigma, rho_T)
    return loss, AdjointSeed.single(-1.0, sigma)


@dataclass(frozen=True, eq=False)
class HamlearnSample:
    """Input state, evolution time and the target's output at that time."""

    rho0: StateVector | DensityMatrix
    T: float
    sigma: StateVector | DensityMatrix
    angles: np.ndarray | None = None  # rotation angles that prepared rho0, if any


def hamlearn_loss_and_seeds(batch: Sequence[HamlearnSample], evolved: Sequence
                            ) -> tuple[float, list[AdjointSeed]]:
    """Mean infidelity over the batch, one state-prep seed per sample scaled by 1/M_s."""
    if not batch:
        raise ValueError("empty batch")
    if len(batch) != len(evolved):
        raise ValueError("one evolved state per sample")
    w = 1.0 / len(batch)
    loss, seeds = 0.0, []
    for sample, rho_T in zip(batch, evolved):
        l, s = stateprep_loss_and_seed(rho_T, sample.sigma)
        loss += w * l
        seeds.append(s.scaled(w))
    return loss, seeds


@dataclass(frozen=True, eq=False)
class ObservableRecord:
    """One measured value tr(O sigma(T)) of the unknown dynamics."""

    observable: PauliString | Observable
    value: float
    state_id: Hashable
    T: float

    def __post_init__(self):
        bound = observable_norm(self.observable)
        if abs(self.value) > bound + 1e-9:
            raise ValueError(f"data value {self.value} exceeds observable norm {bound}")

    def matrix(self) -> np.ndarray:
        return observable_matrix(self.observable)


def observable_matrix(obs) -> np.ndarray:
    if isinstance(obs, PauliString):
        return obs.matrix()
    return np.asarray(obs.entries)


def observable_norm(obs) -> float:
    if isinstance(obs, PauliString):
        return abs(obs.coeff)
    return obs.norm()


def observable_components(obs) -> list[tuple[float, float, DensityMatrix]]:
    """Write O as sum of sign * A * a with A > 0 and a a density matrix.

    Pauli strings use products of eigenprojectors; other Hermitian
    operators are split into positive and negative spectral parts.
    """
    if isinstance(obs, PauliString):
        if obs.weight == 0:
            raise ValueError("identity observable has constant expectation; drop it from the data")
        if obs.coeff == 0:
            return []
        return [(float(np.sign(k)), abs(k), dm) for k, dm in pauli_decompose_to_pure(obs)]
    lam, v = obs.eigh
    out = []
    for sign, mask in ((1.0, lam > 0), (-1.0, lam < 0)):
        if not np.any(mask):
            continue
        part = (v[:, mask] * np.abs(lam[mask])) @ v[:, mask].conj().T
        tr = float(np.sum(np.abs(lam[mask])))
        out.append((sign, tr, DensityMatrix(part / tr, obs.dims, check=False)))
    if not out:
        raise ValueError("zero observable")
    return out


def observable_loss_and_seed(records: Sequence[ObservableRecord], evolved: Mapping,
                             weight: float | None = None
                             ) -> tuple[float, dict[Hashable, AdjointSeed]]:
    """Squared mismatch of expectation values and per-state seeds.

    ``evolved`` maps each record's ``state_id`` to the model state rho(T_i, theta).
    Each record carries ``weight`` (default 1/len(records)) so that the loss
    is the mean squared error over records.
    """
    if not records:
        raise ValueError("no observable records")
    w = 1.0 / len(records) if weight is None else float(weight)
    loss = 0.0
    comps: dict[Hashable, list[SeedComponent]] = {}
    for rec in records:
        rho = evolved[rec.state_id]
        model = float(np.real(np.einsum("ij,ji->", rec.matrix(), _as_matrix(rho))))
        diff = model - rec.value
        loss += w * diff**2
        pref = 2.0 * w * diff
        bucket = comps.setdefault(rec.state_id, [])
        for sign, A, dm in observable_components(rec.observable):
            bucket.append(SeedComponent(pref * sign, A, dm))
    seeds = {k: AdjointSeed(tuple(v)) for k, v in comps.items() if v}
    return loss, seeds


def purity_loss_and_seed(R_T: DensityMatrix, d_e: int) -> tuple[float, AdjointSeed]:
    """1 - tr(rho_red^2) of the system factor of a system (x) ancilla state.

    dL/dR = -2 rho_red (x) 1_e = -2 d_e * (rho_red (x) 1_e / d_e).
    """
    D = R_T.dim
    if d_e < 1 or D % d_e:
        raise DimensionError(f"dimension {D} does not factor with ancilla dimension {d_e}")
    d = D // d_e
    R = _as_matrix(R_T)
    red = ptrace(R, (d, d_e), [0])
    loss = 1.0 - float(np.real(np.einsum("ij,ji->", red, red)))
    a = np.kron(red, np.eye(d_e) / d_e)
    seed = AdjointSeed.single(-2.0 * d_e, DensityMatrix(a, check=False))
    return loss, seed
