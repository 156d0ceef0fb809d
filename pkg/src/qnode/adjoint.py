"""Adjoint-state gradient estimators for parametric Hamiltonian dynamics.

Two routes compute dL/dtheta_m for L = L(rho(T, theta)):

* :func:`adjoint_oracle_gradient` integrates the commutator trace
  i A_T tr([dH/dtheta_m, a(s)] rho(s)) directly from d x d matrices.
* :func:`theorem2_gradient` emulates the extended circuit: an ancilla in |+>,
  the adjoint state a_T and the input rho_0 are evolved by
  C_swap (1 (x) U(T, s) (x) U(0, s)), and sigma_Y (x) H_k (x) 1 is measured,
  either exactly or with a finite number of shots.

The loss enters only through the seed: dL/drho at rho(T) written as
sum_j c_j A_j a_j with every a_j a density matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evolution import GridEvolution, PropagatorConfig, propagator
from .hamiltonians import ParametricHamiltonian
from .quantum import (
    KET_PLUS,
    KET_Y1,
    KET_Y2,
    Y,
    DensityMatrix,
    DimensionError,
    Observable,
    StateVector,
    controlled_swap,
    ptrace,
)

PURE_TOL = 1e-10
# largest extended-register dimension emulated as a full circuit
CIRCUIT_MAX_PURE = 2048
CIRCUIT_MAX_MIXED = 512


# -- shots -----------------------------------------------------------------

def parse_shots(shots) -> int | None:
    """Normalise a shot budget; ``None``, ``inf`` and ``"inf"`` mean exact."""
    if shots is None:
        return None
    if isinstance(shots, str):
        if shots.strip().lower() in ("inf", "exact"):
            return None
        shots = int(shots)
    if isinstance(shots, float) and math.isinf(shots):
        return None
    shots = int(shots)
    if shots < 1:
        raise ValueError("shots must be a positive integer or inf")
    return shots


def shots_label(shots: int | None) -> str:
    return "inf" if shots is None else str(shots)


def master_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    if rng is None:
        return int(np.random.SeedSequence().entropy % 2**63)
    return int(rng)


def stream(master: int, *key: int) -> np.random.Generator:
    """Independent generator for one (component, grid point, term) measurement."""
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=tuple(key)))


# -- data types ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SeedComponent:
    c: float
    A: float
    state: DensityMatrix | StateVector

    def __post_init__(self):
        if self.A == 0:
            raise ValueError("seed normalisation A_T must be nonzero")

    @property
    def dim(self) -> int:
        return self.state.dim

    def matrix(self) -> np.ndarray:
        if isinstance(self.state, StateVector):
            return self.state.density().entries
        return self.state.entries


@dataclass(frozen=True, eq=False)
class AdjointSeed:
    """dL/drho at rho(T) = sum_j c_j A_j a_j."""

    components: tuple[SeedComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if comps and len({c.dim for c in comps}) != 1:
            raise DimensionError("seed components act on different spaces")
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, A: float, state, c: float = 1.0) -> "AdjointSeed":
        return cls((SeedComponent(float(c), float(A), state),))

    def operator(self) -> np.ndarray:
        return sum(comp.c * comp.A * comp.matrix() for comp in self.components)

    def scaled(self, w: float) -> "AdjointSeed":
        return AdjointSeed(tuple(SeedComponent(c.c * w, c.A, c.state) for c in self.components))

    def __add__(self, other: "AdjointSeed") -> "AdjointSeed":
        return AdjointSeed(self.components + other.components)


@dataclass(frozen=True)
class TimeGrid:
    rule: str
    points: np.ndarray
    weights: np.ndarray
    T: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        wts = np.asarray(self.weights, dtype=float)
        if pts.shape != wts.shape or pts.ndim != 1 or pts.size == 0:
            raise ValueError("grid needs matching nonempty point and weight arrays")
        if np.any(np.diff(pts) < 0) or pts[0] < 0 or pts[-1] > self.T + 1e-12:
            raise ValueError("grid points must be sorted inside [0, T]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @staticmethod
    def _count(T: float, n: int | None, ds: float | None) -> int:
        if T <= 0:
            raise ValueError("time horizon must be positive")
        if n is None:
            if ds is None or ds <= 0:
                raise ValueError("give a positive interval count or spacing")
            n = max(1, int(round(T / ds)))
        if n < 1:
            raise ValueError("need at least one interval")
        return n

    @classmethod
    def trapezoid(cls, T: float, n_points: int | None = None, ds: float | None = None):
        n = cls._count(T, None if n_points is None else n_points - 1, ds)
        pts = np.linspace(0.0, T, n + 1)
        w = np.full(n + 1, T / n)
        w[0] = w[-1] = 0.5 * T / n
        return cls("trapezoid", pts, w, T)

    @classmethod
    def midpoint(cls, T: float, n_points: int | None = None, ds: float | None = None):
        n = cls._count(T, n_points, ds)
        h = T / n
        return cls("midpoint", (np.arange(n) + 0.5) * h, np.full(n, h), T)

    @classmethod
    def uniform_random(cls, T: float, n_samples: int, rng: np.random.Generator):
        if n_samples < 1:
            raise ValueError("need at least one sample")
        pts = np.sort(rng.uniform(0.0, T, size=n_samples))
        return cls("uniform-random", pts, np.full(n_samples, T / n_samples), T)

    @classmethod
    def make(cls, rule: str, T: float, *, ds: float | None = None, n: int | None = None,
             rng: np.random.Generator | None = None):
        if rule == "trapezoid":
            return cls.trapezoid(T, n_points=n, ds=ds)
        if rule == "midpoint":
            return cls.midpoint(T, n_points=n, ds=ds)
        if rule == "uniform-random":
            return cls.uniform_random(T, n if n is not None else cls._count(T, None, ds), rng)
        raise ValueError(f"unknown quadrature rule {rule!r}")


@dataclass(frozen=True)
class GradientEstimate:
    values: np.ndarray
    stderr: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        s = np.asarray(self.stderr, dtype=float)
        if v.shape != s.shape:
            raise ValueError("values and stderr must align")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("gradient has non-finite entries")
        if np.any(s < 0):
            raise ValueError("negative standard error")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stderr", s)


def combine_corollary1(grads: Sequence[GradientEstimate], coefficients: Sequence[float]) -> GradientEstimate:
    """sum_j c_j g_j with standard errors added in quadrature."""
    if len(grads) != len(coefficients):
        raise ValueError("one coefficient per component gradient")
    if not grads:
        raise ValueError("nothing to combine")
    c = np.asarray(coefficients, dtype=float)
    vals = np.einsum("j,jm->m", c, np.stack([g.values for g in grads]))
    se = np.sqrt(np.einsum("j,jm->m", c**2, np.stack([g.stderr for g in grads]) ** 2))
    return GradientEstimate(vals, se, dict(grads[0].metadata))


# -- helpers ---------------------------------------------------------------

def pure_vector(state) -> np.ndarray | None:
    """Amplitudes if ``state`` is pure (up to PURE_TOL), else None."""
    if isinstance(state, StateVector):
        return np.asarray(state.amplitudes)
    m = state.entries
    # tr(m^2) = sum |m_ij|^2 for Hermitian m
    if abs(np.vdot(m, m).real - 1.0) > PURE_TOL:
        return None
    w, v = np.linalg.eigh(m)
    return v[:, -1]


def _density_of(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.density().entries
    return np.asarray(state.entries)


def _swap_permutation(d: int) -> np.ndarray:
    """Index map P with (C_swap x)[i] = x[P[i]] on the (2, d, d) register."""
    idx = np.arange(2 * d * d).reshape(2, d, d)
    idx[1] = idx[1].T
    return idx.reshape(-1)


def _y_term_basis(Hk: Observable) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors (columns) of sigma_Y (x) H_k."""
    cache = Hk.__dict__.get("_ybasis")
    if cache is None:
        lam, v = Hk.eigh
        vals = np.concatenate([lam, -lam])
        vecs = np.concatenate([np.kron(KET_Y1[:, None], v), np.kron(KET_Y2[:, None], v)], axis=1)
        cache = (vals, vecs)
        Hk.__dict__["_ybasis"] = cache
    return cache


def measure_reduced(R: np.ndarray, Hk: Observable, shots: int | None,
                    rng: np.random.Generator | None) -> tuple[float, float]:
    """Estimate tr((sigma_Y (x) H_k) R) on the ancilla (x) adjoint marginal R."""
    vals, vecs = _y_term_basis(Hk)
    probs = np.real(np.einsum("ia,ij,ja->a", vecs.conj(), R, vecs))
    if shots is None:
        return float(probs @ vals), 0.0
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    counts = rng.multinomial(shots, probs)
    mean = float(counts @ vals) / shots
    if shots == 1:
        return mean, 0.0
    var = float(counts @ (vals - mean) ** 2) / (shots - 1)
    return mean, math.sqrt(var / shots)


# -- extended register -----------------------------------------------------

def build_eta0(component, rho0):
    """|+><+| (x) a_T (x) rho_0, kept as a state vector when both factors are pure."""
    a = component.state if isinstance(component, SeedComponent) else component
    if a.dim != rho0.dim:
        raise DimensionError(f"adjoint dim {a.dim} != state dim {rho0.dim}")
    d = rho0.dim
    dims = (2, d, d)
    va, vr = pure_vector(a), pure_vector(rho0)
    if va is not None and vr is not None:
        return StateVector(np.kron(KET_PLUS, np.kron(va, vr)), dims)
    plus = np.outer(KET_PLUS, KET_PLUS.conj())
    return DensityMatrix(np.kron(plus, np.kron(_density_of(a), _density_of(rho0))), dims)


def eta_at(eta0, H: ParametricHamiltonian, theta, s: float, T: float,
           cfg: PropagatorConfig | None = None):
    """eta(s) = V(s) eta(0) V(s)^dagger with V(s) = C_swap (1 (x) U(T, s) (x) U(0, s))."""
    if not 0.0 <= s <= T:
        raise ValueError("s must lie in [0, T]")
    d = H.dim
    back = propagator(H, theta, T, s, cfg)
    fwd = propagator(H, theta, 0.0, s, cfg)
    v = controlled_swap(d) @ np.kron(np.eye(2), np.kron(back, fwd))
    if isinstance(eta0, StateVector):
        return StateVector(v @ eta0.amplitudes, eta0.dims)
    return DensityMatrix(v @ eta0.entries @ v.conj().T, eta0.dims, check=False)


def theorem2_expectation(eta_s, Hk: Observable, shots=None, rng=None) -> tuple[float, float]:
    """Estimate tr((sigma_Y (x) H_k (x) 1) eta(s)) with ``shots`` projective measurements."""
    shots = parse_shots(shots)
    d = eta_s.dims[-1]
    if isinstance(eta_s, StateVector):
        x = eta_s.amplitudes.reshape(2 * d, d)
        R = x @ x.conj().T
    else:
        R = ptrace(eta_s.entries, (2 * d, d), [0])
    if shots is not None and rng is None:
        rng = np.random.default_rng()
    return measure_reduced(R, Hk, shots, rng)


def _reduced_circuit_pure(a_s: np.ndarray, psi_s: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Marginals on ancilla (x) adjoint of the swapped pure register, one per grid point."""
    n, d = psi_s.shape
    ext = np.einsum("a,ni,nj->naij", KET_PLUS, a_s, psi_s).reshape(n, -1)
    x = ext[:, perm].reshape(n, 2 * d, d)
    return x @ x.conj().transpose(0, 2, 1)


def _reduced_circuit_mixed(a_s: np.ndarray, rho_s: np.ndarray, perm: np.ndarray) -> np.ndarray:
    n, d, _ = rho_s.shape
    plus = np.outer(KET_PLUS, KET_PLUS.conj())
    out = np.empty((n, 2 * d, 2 * d), dtype=complex)
    for i in range(n):
        eta = np.kron(plus, np.kron(a_s[i], rho_s[i]))
        eta = eta[np.ix_(perm, perm)]
        out[i] = ptrace(eta, (2 * d, d), [0])
    return out


def _reduced_formula(a_s: np.ndarray, rho_s: np.ndarray) -> np.ndarray:
    """Closed-form marginal 1/2 [[a, a rho], [rho a, rho]] of the swapped register."""
    n, d, _ = rho_s.shape
    out = np.empty((n, 2 * d, 2 * d), dtype=complex)
    out[:, :d, :d] = a_s
    out[:, :d, d:] = a_s @ rho_s
    out[:, d:, :d] = rho_s @ a_s
    out[:, d:, d:] = rho_s
    return 0.5 * out


def _choose_backend(backend: str, d: int, pure: bool) -> str:
    if backend != "auto":
        if backend not in ("circuit", "reduced"):
            raise ValueError(f"unknown backend {backend!r}")
        return backend
    ext = 2 * d * d
    return "circuit" if ext <= (CIRCUIT_MAX_PURE if pure else CIRCUIT_MAX_MIXED) else "reduced"


def _component_expectations(evo: GridEvolution, comp: SeedComponent, rho0, active: list[int],
                            H: ParametricHamiltonian, shots, master: int, j: int,
                            backend: str) -> tuple[np.ndarray, np.ndarray]:
    """(N_t, K) expectations of sigma_Y (x) H_k on eta_j(s_i) and their standard errors."""
    n = evo.points.size
    K = H.n_terms
    E = np.zeros((n, K))
    SE = np.zeros((n, K))
    d = H.dim
    va, vr = pure_vector(comp.state), pure_vector(rho0)
    both_pure = va is not None and vr is not None
    mode = _choose_backend(backend, d, both_pure)

    if mode == "reduced" and vr is not None and shots is None:
        # exact values only need a(s) psi(s) = U(T, s) a_T psi(T)
        psi = evo.forward_vectors(vr)
        psi_T = evo.final_vector(vr)
        w = va * np.vdot(va, psi_T) if va is not None else comp.matrix() @ psi_T
        a_psi = evo.backward_vectors(w)
        for k in active:
            Hk = H.terms[k].operator.entries
            z = np.sum(psi.conj() * (a_psi @ Hk.T), axis=1)
            E[:, k] = -z.imag
        return E, SE

    perm = _swap_permutation(d)
    if mode == "circuit" and both_pure:
        R = _reduced_circuit_pure(evo.backward_vectors(va), evo.forward_vectors(vr), perm)
    else:
        a_s = evo.backward_density(comp.matrix())
        rho_s = evo.forward_density(_density_of(rho0))
        if mode == "circuit":
            R = _reduced_circuit_mixed(a_s, rho_s, perm)
        else:
            R = _reduced_formula(a_s, rho_s)
    if shots is None:
        for k in active:
            O = np.kron(Y, H.terms[k].operator.entries)
            E[:, k] = np.real(np.einsum("nij,ji->n", R, O))
        return E, SE
    for i in range(n):
        for k in active:
            rng = None if shots is None else stream(master, j, i, k)
            E[i, k], SE[i, k] = measure_reduced(R[i], H.terms[k].operator, shots, rng)
    return E, SE


def _check_inputs(H, rho0, seed: AdjointSeed, T: float):
    if not seed.components:
        raise ValueError("seed has no components")
    if rho0.dim != H.dim:
        raise DimensionError(f"state dim {rho0.dim} != Hamiltonian dim {H.dim}")
    if seed.components[0].dim != H.dim:
        raise DimensionError("seed dimension does not match the Hamiltonian")
    if not T > 0:
        raise ValueError("horizon T must be positive")


def theorem2_gradient(H: ParametricHamiltonian, theta, rho0, seed: AdjointSeed, T: float,
                      grid: TimeGrid, shots=None, rng=None,
                      cfg: PropagatorConfig | None = None, backend: str = "auto",
                      evolution: GridEvolution | None = None) -> GradientEstimate:
    """Extended-circuit gradient estimate with the time integral on ``grid``.

    Expectations of sigma_Y (x) H_k are taken once per (component, grid
    point, term) and reused for every parameter; the d f_k / d theta_m
    factors are classical.
    """
    _check_inputs(H, rho0, seed, T)
    if abs(grid.T - T) > 1e-12:
        raise ValueError("grid horizon differs from T")
    shots = parse_shots(shots)
    theta = np.asarray(theta, dtype=float)
    master = master_seed(rng) if shots is not None else 0
    evo = evolution or GridEvolution(H, theta, grid.points, T, cfg)
    # (N_t, K, M) classical factors
    jac = np.stack([H.schedule_jacobian(s, theta) for s in grid.points])
    active = [k for k in range(H.n_terms) if np.any(jac[:, k, :])]
    wj = grid.weights[:, None, None] * jac
    per_comp, coeffs = [], []
    for j, comp in enumerate(seed.components):
        if comp.c == 0:
            continue
        E, SE = _component_expectations(evo, comp, rho0, active, H, shots, master, j, backend)
        vals = 2 * comp.A * np.einsum("nkm,nk->m", wj, E)
        se = 2 * abs(comp.A) * np.sqrt(np.einsum("nkm,nk->m", wj**2, SE**2))
        per_comp.append(GradientEstimate(vals, se))
        coeffs.append(comp.c)
    meta = {"rule": grid.rule, "n_points": int(grid.points.size), "shots": shots_label(shots),
            "seed": master if shots is not None else None}
    if not per_comp:
        return GradientEstimate(np.zeros(H.n_params), np.zeros(H.n_params), meta)
    out = combine_corollary1(per_comp, coeffs)
    return GradientEstimate(out.values, out.stderr, meta)


def adjoint_oracle_gradient(H: ParametricHamiltonian, theta, rho0, seed: AdjointSeed, T: float,
                            grid: TimeGrid, cfg: PropagatorConfig | None = None,
                            evolution: GridEvolution | None = None) -> GradientEstimate:
    """Quadrature of i sum_j c_j A_j tr([dH/dtheta_m, a_j(s)] rho(s))."""
    _check_inputs(H, rho0, seed, T)
    theta = np.asarray(theta, dtype=float)
    evo = evolution or GridEvolution(H, theta, grid.points, T, cfg)
    us = evo.unitaries()
    uT = evo.final_unitary()
    r0 = _density_of(rho0)
    # dL/drho at T, pulled back: a(s) sum = W (sum_j c_j A_j a_j) W^dagger with W = U(0,s) U(0,T)^dagger
    g_T = seed.operator()
    grad = np.zeros(H.n_params)
    for s, w, u in zip(grid.points, grid.weights, us):
        rho_s = u @ r0 @ u.conj().T
        back = u @ uT.conj().T
        a_s = back @ g_T @ back.conj().T
        for m in range(H.n_params):
            dh = H.dH_dtheta(s, theta, m).entries
            comm = dh @ a_s - a_s @ dh
            grad[m] += w * np.real(1j * np.trace(comm @ rho_s))
    meta = {"rule": grid.rule, "n_points": int(grid.points.size), "shots": "inf", "seed": None}
    return GradientEstimate(grad, np.zeros(H.n_params), meta)
