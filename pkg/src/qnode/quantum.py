"""Dense linear algebra for small multi-qubit registers.

States and observables carry a ``dims`` tuple listing subsystem dimensions.
The leftmost factor is the slowest-varying index, so for the extended
gradient register the layout is ``ancilla (x) adjoint (x) original``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = -1e-9
NORM_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)
# sigma_Y eigenvectors, (|1> -+ i|0>)/sqrt(2); eigenvalues +1 and -1
KET_Y1 = np.array([-1j, 1], dtype=complex) / np.sqrt(2)
KET_Y2 = np.array([1j, 1], dtype=complex) / np.sqrt(2)

# (+1 eigenvector, -1 eigenvector) for each non-identity letter
PAULI_EIGVECS = {
    "X": (KET_PLUS, KET_MINUS),
    "Y": (KET_Y1, KET_Y2),
    "Z": (KET0, KET1),
}


class DimensionError(ValueError):
    """Operands have incompatible shapes or subsystem layouts."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _dims_for(size: int, dims: Sequence[int] | None) -> tuple[int, ...]:
    if dims is None:
        return (size,)
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims) or int(np.prod(dims)) != size:
        raise DimensionError(f"dims {dims} do not multiply to {size}")
    return dims


def qubit_dims(n: int) -> tuple[int, ...]:
    return (2,) * n


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalised pure state."""

    amplitudes: np.ndarray
    dims: tuple[int, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", _frozen(amp))
        object.__setattr__(self, "dims", _dims_for(amp.size, self.dims))
        norm = np.linalg.norm(amp)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state vector norm {norm} is not 1")

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density(self) -> "DensityMatrix":
        v = self.amplitudes
        return DensityMatrix(np.outer(v, v.conj()), self.dims, check=False)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix.

    Pass ``check=False`` only for matrices produced by unitary evolution of a
    state that was already validated.
    """

    entries: np.ndarray
    dims: tuple[int, ...] = None  # type: ignore[assignment]
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got {m.shape}")
        object.__setattr__(self, "entries", _frozen(m))
        object.__setattr__(self, "dims", _dims_for(m.shape[0], self.dims))
        if self.check:
            validate_density(m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))


def validate_density(m: np.ndarray) -> None:
    if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(m)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace {tr} is not 1")
    lam_min = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
    if lam_min < PSD_TOL:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min}")


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian operator with a lazily cached spectral decomposition."""

    entries: np.ndarray
    dims: tuple[int, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"observable must be square, got {m.shape}")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise ValueError("observable is not Hermitian")
        object.__setattr__(self, "entries", _frozen(0.5 * (m + m.conj().T)))
        object.__setattr__(self, "dims", _dims_for(m.shape[0], self.dims))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        w, v = np.linalg.eigh(self.entries)
        w.setflags(write=False)
        v.setflags(write=False)
        return w, v

    def norm(self) -> float:
        """Operator (spectral) norm."""
        return float(np.max(np.abs(self.eigh[0]), initial=0.0))

    def exp_phase(self, c: float) -> np.ndarray:
        """Return exp(-i c O) from the cached eigenbasis."""
        w, v = self.eigh
        return (v * np.exp(-1j * c * w)) @ v.conj().T


@dataclass(frozen=True)
class PauliString:
    letters: str
    coeff: float = 1.0

    def __post_init__(self):
        letters = self.letters.upper()
        if not letters or set(letters) - set("IXYZ"):
            raise ValueError(f"invalid Pauli string {self.letters!r}")
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "coeff", float(self.coeff))

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.letters)

    def matrix(self) -> np.ndarray:
        return self.coeff * pauli_matrix(self.letters)

    def observable(self) -> Observable:
        return Observable(self.matrix(), qubit_dims(self.n_qubits))


def pauli_matrix(letters: str) -> np.ndarray:
    m = np.ones((1, 1), dtype=complex)
    for c in letters.upper():
        m = np.kron(m, PAULI[c])
    return m


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1,) * mats[0].ndim, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def tensor(a, b):
    """Kronecker product of two states or two operators, concatenating dims."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(np.kron(a.amplitudes, b.amplitudes), a.dims + b.dims)
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(np.kron(a.entries, b.entries), a.dims + b.dims, check=False)
    if isinstance(a, Observable) and isinstance(b, Observable):
        return Observable(np.kron(a.entries, b.entries), a.dims + b.dims)
    raise TypeError(
        f"tensor needs two operands of one kind, got {type(a).__name__} and {type(b).__name__}"
    )


def ptrace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of a raw matrix, keeping subsystems ``keep`` in ascending order."""
    dims = tuple(dims)
    n = len(dims)
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    if keep[0] < 0 or keep[-1] >= n:
        raise IndexError(f"subsystem index out of range for dims {dims}")
    traced = [i for i in range(n) if i not in keep]
    t = m.reshape(dims + dims)
    # einsum labels: rows use letters 0..n-1, columns n..2n-1; traced columns reuse the row label
    row = list(range(n))
    col = [i if i in traced else n + i for i in range(n)]
    out = list(keep) + [n + i for i in keep]
    res = np.einsum(t, row + col, out)
    dk = int(np.prod([dims[i] for i in keep]))
    return res.reshape(dk, dk)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    keep = sorted(set(keep))
    red = ptrace(rho.entries, rho.dims, keep)
    return DensityMatrix(red, tuple(rho.dims[i] for i in keep), check=False)


def expectation(obs: Observable, rho: DensityMatrix) -> float:
    if obs.dim != rho.dim:
        raise DimensionError(f"observable dim {obs.dim} != state dim {rho.dim}")
    val = np.einsum("ij,ji->", obs.entries, rho.entries)
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise ValueError(f"expectation has imaginary part {val.imag}")
    return float(val.real)


def fidelity_pure(psi: StateVector, phi: StateVector) -> float:
    if psi.dim != phi.dim:
        raise DimensionError(f"state dims differ: {psi.dim} vs {phi.dim}")
    f = abs(np.vdot(psi.amplitudes, phi.amplitudes)) ** 2
    return float(min(1.0, f))


def pauli_decompose_to_pure(p: PauliString) -> list[tuple[float, DensityMatrix]]:
    """Split a Pauli string into signed products of eigenprojectors.

    Identity positions become I/2 factors with the factor 2 folded into the
    coefficient, e.g. X(x)I -> 2*(|+><+| (x) I/2) - 2*(|-><-| (x) I/2).
    """
    if p.weight == 0:
        raise ValueError("all-identity Pauli string has no nontrivial decomposition")
    n_id = p.n_qubits - p.weight
    scale = p.coeff * 2.0**n_id
    dims = qubit_dims(p.n_qubits)
    active = [c for c in p.letters if c != "I"]
    terms = []
    for choice in product((0, 1), repeat=len(active)):
        sign = (-1) ** sum(choice)
        it = iter(choice)
        factors = []
        for c in p.letters:
            if c == "I":
                factors.append(I2 / 2)
            else:
                v = PAULI_EIGVECS[c][next(it)]
                factors.append(np.outer(v, v.conj()))
        terms.append((sign * scale, DensityMatrix(kron_all(factors), dims)))
    return terms


def swap_operator(d: int) -> np.ndarray:
    s = np.zeros((d * d, d * d), dtype=complex)
    for a in range(d):
        for b in range(d):
            s[b * d + a, a * d + b] = 1.0
    return s


def controlled_swap(d: int) -> np.ndarray:
    """|0><0| (x) 1 (x) 1 + |1><1| (x) SWAP on a qubit and two d-level registers."""
    if d < 1:
        raise ValueError("register dimension must be positive")
    dd = d * d
    c = np.zeros((2 * dd, 2 * dd), dtype=complex)
    c[:dd, :dd] = np.eye(dd)
    c[dd:, dd:] = swap_operator(d)
    return c


def rx(angle: float) -> np.ndarray:
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * X


def ry(angle: float) -> np.ndarray:
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * Y


def rz(angle: float) -> np.ndarray:
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * Z


def rotated_plus_state(angles: np.ndarray) -> StateVector:
    """Product of RZ(a) RY(b) RX(c)|+> per qubit; ``angles`` has shape (n, 3)."""
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    kets = [rz(a) @ ry(b) @ rx(c) @ KET_PLUS for a, b, c in angles]
    return StateVector(kron_all(kets), qubit_dims(len(kets)))


def random_angles(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 4 * np.pi, size=(n, 3))


def random_input_state(n: int, rng: np.random.Generator) -> StateVector:
    if n < 1:
        raise ValueError("need at least one qubit")
    return rotated_plus_state(random_angles(n, rng))


def basis_state(bits: str) -> StateVector:
    kets = [{"0": KET0, "1": KET1, "+": KET_PLUS, "-": KET_MINUS}[b] for b in bits]
    return StateVector(kron_all(kets), qubit_dims(len(kets)))


def plus_state(n: int) -> StateVector:
    return basis_state("+" * n)


def maximally_mixed(dims: Sequence[int]) -> DensityMatrix:
    d = int(np.prod(dims))
    return DensityMatrix(np.eye(d) / d, tuple(dims))


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (g + g.conj().T)


def random_statevector(d: int, rng: np.random.Generator) -> StateVector:
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return StateVector(v / np.linalg.norm(v))
