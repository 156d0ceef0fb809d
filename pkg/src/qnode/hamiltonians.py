"""Parametric Hamiltonians H(t, theta) = sum_k f_k(t, theta) H_k.

Each schedule f_k owns a disjoint set of global parameter indices, so the
derivative of H with respect to theta_m is a lookup of which schedule owns m.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quantum import Observable, pauli_matrix, qubit_dims


class Schedule:
    """Real scalar function f(t, theta) reading only ``indices`` of theta."""

    indices: tuple[int, ...] = ()
    is_constant: bool = False

    def value(self, t: float, theta: np.ndarray) -> float:
        raise NotImplementedError

    def values(self, ts: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """f at many times at once."""
        return np.array([self.value(t, theta) for t in np.asarray(ts, dtype=float)])

    def grad(self, t: float, theta: np.ndarray) -> np.ndarray:
        """Derivatives with respect to ``theta[self.indices]``, in that order."""
        raise NotImplementedError

    def dt(self, t: float, theta: np.ndarray) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Fixed(Schedule):
    """Parameter-free constant."""

    c: float = 1.0
    is_constant = True

    @property
    def indices(self):
        return ()

    def value(self, t, theta):
        return self.c

    def values(self, ts, theta):
        return np.full(np.shape(ts), float(self.c))

    def grad(self, t, theta):
        return np.zeros(0)

    def dt(self, t, theta):
        return 0.0

    def to_dict(self):
        return {"type": "fixed", "value": self.c}


@dataclass(frozen=True)
class Sinusoid(Schedule):
    """Parameter-free amplitude * sin(omega t + phase)."""

    amplitude: float = 1.0
    omega: float = np.pi
    phase: float = 0.0

    @property
    def indices(self):
        return ()

    def value(self, t, theta):
        return self.amplitude * np.sin(self.omega * t + self.phase)

    def values(self, ts, theta):
        return self.amplitude * np.sin(self.omega * np.asarray(ts, dtype=float) + self.phase)

    def grad(self, t, theta):
        return np.zeros(0)

    def dt(self, t, theta):
        return self.amplitude * self.omega * np.cos(self.omega * t + self.phase)

    def to_dict(self):
        return {"type": "sinusoid", "amplitude": self.amplitude, "omega": self.omega,
                "phase": self.phase}


@dataclass(frozen=True)
class Constant(Schedule):
    """f = theta[index]."""

    index: int = 0
    is_constant = True

    @property
    def indices(self):
        return (self.index,)

    def value(self, t, theta):
        return float(theta[self.index])

    def values(self, ts, theta):
        return np.full(np.shape(ts), float(theta[self.index]))

    def grad(self, t, theta):
        return np.ones(1)

    def dt(self, t, theta):
        return 0.0

    def to_dict(self):
        return {"type": "constant", "index": self.index}


@dataclass(frozen=True)
class PiecewiseConstant(Schedule):
    """theta[param_indices[i]] on [breakpoints[i], breakpoints[i+1]), zero outside.

    The final interval is closed on the right so that f(T) at the horizon
    matches its left limit.
    """

    breakpoints: tuple[float, ...] = (0.0, 1.0)
    param_indices: tuple[int, ...] = (0,)

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        if len(bp) != len(self.param_indices) + 1 or any(np.diff(bp) <= 0):
            raise ValueError("need strictly increasing breakpoints, one more than parameters")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "param_indices", tuple(int(i) for i in self.param_indices))

    @property
    def indices(self):
        return self.param_indices

    def _slot(self, t: float) -> int:
        bp = self.breakpoints
        if t < bp[0] or t > bp[-1]:
            return -1
        if t == bp[-1]:
            return len(bp) - 2
        return int(np.searchsorted(bp, t, side="right")) - 1

    def value(self, t, theta):
        i = self._slot(t)
        return 0.0 if i < 0 else float(theta[self.param_indices[i]])

    def grad(self, t, theta):
        g = np.zeros(len(self.param_indices))
        i = self._slot(t)
        if i >= 0:
            g[i] = 1.0
        return g

    def dt(self, t, theta):
        return 0.0

    def to_dict(self):
        return {"type": "piecewise", "breakpoints": list(self.breakpoints),
                "indices": list(self.param_indices)}


@dataclass(frozen=True)
class Fourier(Schedule):
    """sum_n a_n cos(n omega t) + b_n sin(n omega t), n = 1..N.

    ``param_indices`` lists a_1..a_N followed by b_1..b_N.
    """

    omega: float = 2 * np.pi
    param_indices: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        if len(self.param_indices) % 2 or not self.param_indices:
            raise ValueError("fourier schedule needs an even, nonzero number of indices")
        object.__setattr__(self, "param_indices", tuple(int(i) for i in self.param_indices))

    @property
    def indices(self):
        return self.param_indices

    @property
    def order(self) -> int:
        return len(self.param_indices) // 2

    def _basis(self, t):
        n = np.arange(1, self.order + 1)
        return np.cos(n * self.omega * t), np.sin(n * self.omega * t), n

    def value(self, t, theta):
        c, s, _ = self._basis(t)
        p = theta[list(self.param_indices)]
        return float(p[: self.order] @ c + p[self.order:] @ s)

    def values(self, ts, theta):
        c, s, _ = self._basis(np.asarray(ts, dtype=float)[:, None])
        p = theta[list(self.param_indices)]
        return c @ p[: self.order] + s @ p[self.order:]

    def grad(self, t, theta):
        c, s, _ = self._basis(t)
        return np.concatenate([c, s])

    def dt(self, t, theta):
        c, s, n = self._basis(t)
        p = theta[list(self.param_indices)]
        w = n * self.omega
        return float(-(p[: self.order] * w) @ s + (p[self.order:] * w) @ c)

    def to_dict(self):
        return {"type": "fourier", "omega": self.omega, "indices": list(self.param_indices)}


@dataclass(frozen=True)
class SineNetwork(Schedule):
    """Two-layer network f(t) = sum_k w2_k sin(w1_k t + b_k) + bias.

    ``param_indices`` is laid out as [w2_1..w2_m, w1_1..w1_m, b_1..b_m, bias].
    """

    width: int = 2
    param_indices: tuple[int, ...] = tuple(range(7))

    def __post_init__(self):
        if self.width < 1 or len(self.param_indices) != 3 * self.width + 1:
            raise ValueError("sine network needs 3*width + 1 parameter indices")
        object.__setattr__(self, "param_indices", tuple(int(i) for i in self.param_indices))

    @property
    def indices(self):
        return self.param_indices

    def _split(self, theta):
        p = np.asarray(theta, dtype=float)[list(self.param_indices)]
        m = self.width
        return p[:m], p[m:2 * m], p[2 * m:3 * m], p[3 * m]

    def value(self, t, theta):
        w2, w1, b, bias = self._split(theta)
        return float(w2 @ np.sin(w1 * t + b) + bias)

    def values(self, ts, theta):
        w2, w1, b, bias = self._split(theta)
        return np.sin(np.outer(ts, w1) + b) @ w2 + bias

    def grad(self, t, theta):
        w2, w1, b, _ = self._split(theta)
        phase = w1 * t + b
        s, c = np.sin(phase), np.cos(phase)
        return np.concatenate([s, w2 * t * c, w2 * c, [1.0]])

    def dt(self, t, theta):
        w2, w1, b, _ = self._split(theta)
        return float((w2 * w1) @ np.cos(w1 * t + b))

    def to_dict(self):
        return {"type": "sine_network", "width": self.width, "indices": list(self.param_indices)}


def schedule_from_dict(d: dict) -> Schedule:
    kind = d["type"]
    if kind == "fixed":
        return Fixed(float(d["value"]))
    if kind == "sinusoid":
        return Sinusoid(float(d.get("amplitude", 1.0)), float(d.get("omega", np.pi)),
                        float(d.get("phase", 0.0)))
    if kind == "constant":
        return Constant(int(d["index"]))
    if kind == "piecewise":
        return PiecewiseConstant(tuple(d["breakpoints"]), tuple(d["indices"]))
    if kind == "fourier":
        return Fourier(float(d["omega"]), tuple(d["indices"]))
    if kind == "sine_network":
        return SineNetwork(int(d["width"]), tuple(d["indices"]))
    raise ValueError(f"unknown schedule type {kind!r}")


@dataclass(frozen=True, eq=False)
class Term:
    schedule: Schedule
    operator: Observable
    label: str = ""


@dataclass(frozen=True, eq=False)
class ParametricHamiltonian:
    terms: tuple[Term, ...]
    n_params: int
    dims: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("Hamiltonian needs at least one term")
        d = terms[0].operator.dim
        if any(t.operator.dim != d for t in terms):
            raise ValueError("all terms must act on the same space")
        owned = [i for t in terms for i in t.schedule.indices]
        if len(owned) != len(set(owned)):
            raise ValueError("schedules must own disjoint parameter indices")
        if owned and (min(owned) < 0 or max(owned) >= self.n_params):
            raise ValueError("schedule index outside parameter vector")
        object.__setattr__(self, "terms", terms)
        if self.dims is None:
            object.__setattr__(self, "dims", terms[0].operator.dims)
        # owner[m] = (term index, position within that schedule's indices)
        owner = {}
        for k, t in enumerate(terms):
            for pos, i in enumerate(t.schedule.indices):
                owner[i] = (k, pos)
        object.__setattr__(self, "_owner", owner)

    @property
    def dim(self) -> int:
        return self.terms[0].operator.dim

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def is_time_independent(self) -> bool:
        return all(t.schedule.is_constant for t in self.terms)

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        return theta

    def coefficients(self, t: float, theta) -> np.ndarray:
        theta = self._check(theta)
        return np.array([term.schedule.value(t, theta) for term in self.terms])

    def coefficients_many(self, ts, theta) -> np.ndarray:
        """(n, K) schedule values at the times ``ts``."""
        theta = self._check(theta)
        ts = np.asarray(ts, dtype=float)
        return np.stack([term.schedule.values(ts, theta) for term in self.terms], axis=1)

    def matrices(self, ts, theta) -> np.ndarray:
        return np.einsum("nk,kij->nij", self.coefficients_many(ts, theta), self._stack)

    def evaluate(self, t: float, theta) -> Observable:
        return Observable(self.matrix(t, theta), self.dims)

    def matrix(self, t: float, theta) -> np.ndarray:
        coeffs = self.coefficients(t, theta)
        return np.einsum("k,kij->ij", coeffs, self._stack)

    @property
    def _stack(self) -> np.ndarray:
        st = self.__dict__.get("_stack_cache")
        if st is None:
            st = np.stack([t.operator.entries for t in self.terms])
            self.__dict__["_stack_cache"] = st
        return st

    def schedule_jacobian(self, t: float, theta) -> np.ndarray:
        """(K, M) table of d f_k / d theta_m at time t."""
        theta = self._check(theta)
        jac = np.zeros((self.n_terms, self.n_params))
        for k, term in enumerate(self.terms):
            idx = term.schedule.indices
            if idx:
                jac[k, list(idx)] = term.schedule.grad(t, theta)
        return jac

    def dH_dtheta(self, t: float, theta, m: int) -> Observable:
        theta = self._check(theta)
        if not 0 <= m < self.n_params:
            raise IndexError(f"parameter index {m} out of range")
        out = np.zeros((self.dim, self.dim), dtype=complex)
        if m in self._owner:
            k, pos = self._owner[m]
            term = self.terms[k]
            out = term.schedule.grad(t, theta)[pos] * term.operator.entries
        return Observable(out, self.dims)

    def to_dict(self) -> dict:
        return {
            "n_params": self.n_params,
            "dims": list(self.dims),
            "terms": [_term_to_dict(t) for t in self.terms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _term_to_dict(t: Term) -> dict:
    d: dict = {"schedule": t.schedule.to_dict(), "label": t.label}
    paulis = t.operator.__dict__.get("_paulis")
    if paulis is not None:
        d["paulis"] = [[c, s] for c, s in paulis]
    else:
        m = np.asarray(t.operator.entries)
        d["matrix"] = {"re": m.real.tolist(), "im": m.imag.tolist()}
    return d


def pauli_sum(paulis: Sequence[tuple[float, str]]) -> Observable:
    """Observable from [(coeff, 'XZI'), ...]; remembers the labels for serialisation."""
    n = len(paulis[0][1])
    m = sum(c * pauli_matrix(s) for c, s in paulis)
    obs = Observable(m, qubit_dims(n))
    obs.__dict__["_paulis"] = tuple((float(c), s.upper()) for c, s in paulis)
    return obs


def hamiltonian_from_dict(d: dict) -> ParametricHamiltonian:
    terms = []
    for td in d["terms"]:
        sched = schedule_from_dict(td["schedule"])
        if "paulis" in td:
            op = pauli_sum([(float(c), s) for c, s in td["paulis"]])
        elif "pauli" in td:
            op = pauli_sum([(1.0, td["pauli"])])
        else:
            m = np.asarray(td["matrix"]["re"]) + 1j * np.asarray(td["matrix"]["im"])
            op = Observable(m, tuple(d["dims"]) if "dims" in d else None)
        terms.append(Term(sched, op, td.get("label", "")))
    return ParametricHamiltonian(tuple(terms), int(d["n_params"]))


def hamiltonian_from_json(text: str) -> ParametricHamiltonian:
    return hamiltonian_from_dict(json.loads(text))


def pauli_ansatz(labels: Sequence[str]) -> ParametricHamiltonian:
    """One free constant coefficient per Pauli string."""
    terms = tuple(Term(Constant(i), pauli_sum([(1.0, s)]), s) for i, s in enumerate(labels))
    return ParametricHamiltonian(terms, len(labels))


def fixed_pauli_hamiltonian(coeffs: Sequence[float], labels: Sequence[str]) -> ParametricHamiltonian:
    terms = tuple(Term(Fixed(float(c)), pauli_sum([(1.0, s)]), s) for c, s in zip(coeffs, labels))
    return ParametricHamiltonian(terms, 0)


@dataclass(frozen=True, eq=False)
class Model:
    """A black-box target (no free parameters) with the ansatz used to learn it."""

    name: str
    target: ParametricHamiltonian
    ansatz: ParametricHamiltonian
    theta_star: np.ndarray | None = None

    @property
    def n_qubits(self) -> int:
        return len(self.ansatz.dims)


HYDROGEN_COEFFS = (0.397936, 0.397936, 0.011280, 0.180931)
HYDROGEN_LABELS = ("ZI", "IZ", "ZZ", "XX")


def builtin_hydrogen() -> Model:
    target = fixed_pauli_hamiltonian(HYDROGEN_COEFFS, HYDROGEN_LABELS)
    ansatz = pauli_ansatz(HYDROGEN_LABELS)
    return Model("hydrogen", target, ansatz, np.array(HYDROGEN_COEFFS))


def zz_label(L: int, i: int) -> str:
    return "".join("Z" if j in (i, i + 1) else "I" for j in range(L))


def sample_ising_couplings(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from [-0.5, -0.08] U [0.08, 0.5]."""
    mag = rng.uniform(0.08, 0.5, size=n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sign * mag


def builtin_ising(L: int, rng: np.random.Generator) -> Model:
    if L < 2:
        raise ValueError("Ising chain needs at least two sites")
    x = sample_ising_couplings(L - 1, rng)
    labels = [zz_label(L, i) for i in range(L - 1)]
    return Model(f"ising{L}", fixed_pauli_hamiltonian(x, labels), pauli_ansatz(labels), x)


def transverse_field(L: int) -> Observable:
    return pauli_sum([(1.0, "".join("X" if j == i else "I" for j in range(L))) for i in range(L)])


def builtin_td_ising(L: int, m: int, rng: np.random.Generator) -> Model:
    """Ising couplings plus a sin(pi t) transverse field; ansatz learns both.

    Ansatz parameters: L-1 couplings, then [w2, w1, b, bias] of a width-m sine network.
    """
    if L < 2 or m < 1:
        raise ValueError("need L >= 2 and network width m >= 1")
    x = sample_ising_couplings(L - 1, rng)
    labels = [zz_label(L, i) for i in range(L - 1)]
    field_op = transverse_field(L)
    target_terms = [Term(Fixed(float(c)), pauli_sum([(1.0, s)]), s) for c, s in zip(x, labels)]
    target_terms.append(Term(Sinusoid(1.0, np.pi, 0.0), field_op, "X-field"))
    target = ParametricHamiltonian(tuple(target_terms), 0)
    n_c = L - 1
    ansatz_terms = [Term(Constant(i), pauli_sum([(1.0, s)]), s) for i, s in enumerate(labels)]
    net = SineNetwork(m, tuple(range(n_c, n_c + 3 * m + 1)))
    ansatz_terms.append(Term(net, field_op, "X-field"))
    ansatz = ParametricHamiltonian(tuple(ansatz_terms), n_c + 3 * m + 1)
    # exact representation: w2 = [1, 0...], w1 = [pi, 0...], b = 0, bias = 0
    star = np.zeros(ansatz.n_params)
    star[:n_c] = x
    star[n_c] = 1.0
    star[n_c + m] = np.pi
    return Model(f"td-ising{L}", target, ansatz, star)


def single_qubit_ansatz() -> ParametricHamiltonian:
    """theta_1 X + theta_2 Y + theta_3 Z."""
    return pauli_ansatz(("X", "Y", "Z"))


def network_schedule_values(model: Model, theta, times: np.ndarray) -> np.ndarray:
    """Learned transverse-field schedule f_theta(t) of a td-Ising ansatz."""
    sched = model.ansatz.terms[-1].schedule
    return np.array([sched.value(t, np.asarray(theta, dtype=float)) for t in times])
