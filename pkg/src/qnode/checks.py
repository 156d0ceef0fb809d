"""Gradient self-checks and scaling sweeps used by the command line.

Each check builds random instances, evaluates the extended-circuit
estimator, the commutator-trace oracle and central finite differences of
the loss, and reports the largest disagreement.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adjoint import (
    GradientEstimate,
    TimeGrid,
    adjoint_oracle_gradient,
    theorem2_gradient,
)
from .continuous import SRegister, theorem3_gradient
from .evolution import evolve_state
from .hamiltonians import (
    Constant,
    Fixed,
    Fourier,
    ParametricHamiltonian,
    SineNetwork,
    Term,
    pauli_sum,
    single_qubit_ansatz,
)
from .losses import (
    HamlearnSample,
    ObservableRecord,
    hamlearn_loss_and_seeds,
    observable_loss_and_seed,
    purity_loss_and_seed,
    stateprep_loss_and_seed,
)
from .quantum import (
    DensityMatrix,
    PauliString,
    basis_state,
    plus_state,
    random_density,
    random_statevector,
)

FAMILIES = ("state-prep", "ham-learn", "observable", "purity")


def random_pauli(n: int, rng: np.random.Generator, allow_identity: bool = True) -> str:
    while True:
        s = "".join(rng.choice(list("IXYZ" if allow_identity else "XYZ"), size=n))
        if set(s) != {"I"}:
            return s


def random_hamiltonian(n: int, rng: np.random.Generator, time_dependent: bool = True
                       ) -> ParametricHamiltonian:
    """A fixed drift term plus 2-3 parametrised Pauli terms with mixed schedule types."""
    terms = [Term(Fixed(float(rng.uniform(-1, 1))), pauli_sum([(1.0, random_pauli(n, rng))]), "drift")]
    idx = 0
    kinds = ["constant", "fourier", "network"] if time_dependent else ["constant"]
    for _ in range(int(rng.integers(2, 4))):
        kind = kinds[int(rng.integers(len(kinds)))]
        op = pauli_sum([(1.0, random_pauli(n, rng))])
        if kind == "constant":
            sched, idx = Constant(idx), idx + 1
        elif kind == "fourier":
            sched, idx = Fourier(float(rng.uniform(1, 4)), (idx, idx + 1)), idx + 2
        else:
            sched, idx = SineNetwork(1, (idx, idx + 1, idx + 2, idx + 3)), idx + 4
        terms.append(Term(sched, op, kind))
    return ParametricHamiltonian(tuple(terms), idx)


@dataclass
class Item:
    """One input state, its horizon and the loss/seed map of its final state."""

    rho0: object
    T: float
    loss_and_seed: Callable


@dataclass
class Instance:
    family: str
    H: ParametricHamiltonian
    theta: np.ndarray
    items: list

    def loss(self, theta, cfg=None) -> float:
        total = 0.0
        for it in self.items:
            final = evolve_state(it.rho0, self.H, theta, 0.0, it.T, cfg)
            total += it.loss_and_seed(final)[0]
        return total

    def _seed(self, it, theta, cfg):
        final = evolve_state(it.rho0, self.H, theta, 0.0, it.T, cfg)
        return it.loss_and_seed(final)[1]

    def theorem2(self, n_points=1001, rule="trapezoid", shots=None, rng=None, cfg=None,
                 backend="auto") -> GradientEstimate:
        out = []
        for it in self.items:
            grid = TimeGrid.make(rule, it.T, n=n_points if rule != "trapezoid" else n_points)
            seed = self._seed(it, self.theta, cfg)
            out.append(theorem2_gradient(self.H, self.theta, it.rho0, seed, it.T, grid, shots, rng,
                                         cfg, backend))
        return _total(out)

    def oracle(self, n_points=1001, cfg=None) -> GradientEstimate:
        out = []
        for it in self.items:
            grid = TimeGrid.trapezoid(it.T, n_points=n_points)
            seed = self._seed(it, self.theta, cfg)
            out.append(adjoint_oracle_gradient(self.H, self.theta, it.rho0, seed, it.T, grid, cfg))
        return _total(out)

    def theorem3(self, n_cells: int, shots=None, rng=None) -> GradientEstimate:
        out = []
        for it in self.items:
            seed = self._seed(it, self.theta, None)
            out.append(theorem3_gradient(self.H, self.theta, it.rho0, seed, it.T,
                                         SRegister.build(it.T, n_cells), shots, rng))
        return _total(out)


def _total(grads) -> GradientEstimate:
    vals = np.sum([g.values for g in grads], axis=0)
    se = np.sqrt(np.sum([g.stderr**2 for g in grads], axis=0))
    return GradientEstimate(vals, se, dict(grads[0].metadata))


def fd_gradient(f: Callable, theta, h: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for m in range(theta.size):
        e = np.zeros_like(theta)
        e[m] = h
        g[m] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def _random_state(d: int, rng, mixed_prob: float = 0.3):
    if rng.random() < mixed_prob:
        return random_density(d, rng, rank=int(rng.integers(1, d + 1)))
    return random_statevector(d, rng)


def random_instance(family: str, n_qubits: int, rng: np.random.Generator,
                    time_dependent: bool = True) -> Instance:
    """Random Hamiltonian, parameters, inputs and loss of the given family."""
    if family == "purity" and n_qubits < 2:
        n_qubits = 2
    H = random_hamiltonian(n_qubits, rng, time_dependent)
    theta = rng.normal(scale=0.7, size=H.n_params)
    d = H.dim
    T = float(rng.uniform(0.5, 1.5))
    if family == "state-prep":
        sigma = random_statevector(d, rng)
        items = [Item(_random_state(d, rng), T, lambda f, s=sigma: stateprep_loss_and_seed(f, s))]
    elif family == "ham-learn":
        items = []
        for _ in range(2):
            sigma = random_statevector(d, rng)
            Ti = float(rng.uniform(0.5, 1.5))

            def ls(f, s=sigma):
                l, seeds = hamlearn_loss_and_seeds([HamlearnSample(None, 0.0, s)], [f])
                return 0.5 * l, seeds[0].scaled(0.5)
            items.append(Item(random_statevector(d, rng), Ti, ls))
    elif family == "observable":
        recs = []
        for _ in range(int(rng.integers(1, 4))):
            p = PauliString(random_pauli(n_qubits, rng), float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)))
            recs.append(ObservableRecord(p, float(rng.uniform(-1, 1) * abs(p.coeff)), 0, T))

        def ls(f, recs=recs):
            l, seeds = observable_loss_and_seed(recs, {0: f})
            return l, seeds[0]
        items = [Item(_random_state(d, rng), T, ls)]
    elif family == "purity":
        items = [Item(_random_state(d, rng), T,
                      lambda f: purity_loss_and_seed(f if isinstance(f, DensityMatrix) else f.density(), 2))]
    else:
        raise ValueError(f"unknown loss family {family!r}")
    return Instance(family, H, theta, items)


def triple_check(inst: Instance, n_points: int = 1001, h: float = 1e-5) -> dict:
    t2 = inst.theorem2(n_points).values
    orc = inst.oracle(n_points).values
    fd = fd_gradient(inst.loss, inst.theta, h)
    return {
        "family": inst.family,
        "n_qubits": len(inst.H.dims),
        "n_params": int(inst.H.n_params),
        "t2_vs_oracle": float(np.max(np.abs(t2 - orc))),
        "t2_vs_fd": float(np.max(np.abs(t2 - fd))),
        "oracle_vs_fd": float(np.max(np.abs(orc - fd))),
    }


def golden_values() -> dict:
    """Single-qubit state preparation towards |+> from |0> with T = 1."""
    H = single_qubit_ansatz()
    seed_sigma = plus_state(1)
    grid = TimeGrid.trapezoid(1.0, ds=0.1)
    out = {}
    for name, theta in (("origin", [0.0, 0.0, 0.0]), ("optimum", [0.0, np.pi / 4, 0.0])):
        final = evolve_state(basis_state("0"), H, theta, 0.0, 1.0)
        loss, seed = stateprep_loss_and_seed(final, seed_sigma)
        g = theorem2_gradient(H, theta, basis_state("0"), seed, 1.0, grid).values
        out[name] = {"theta": list(theta), "loss": loss, "gradient": g.tolist()}
    return out


def grad_check(n_instances: int, rng: np.random.Generator, tol: float = 1e-5) -> dict:
    rows = []
    for i in range(n_instances):
        fam = FAMILIES[i % len(FAMILIES)]
        n = 1 + i % 3
        rows.append(triple_check(random_instance(fam, n, rng)))
    worst = max(max(r["t2_vs_oracle"], r["t2_vs_fd"], r["oracle_vs_fd"]) for r in rows)
    gold = golden_values()
    gold_err = max(
        float(np.max(np.abs(np.array(gold["origin"]["gradient"]) - [0.0, -1.0, 0.0]))),
        float(np.max(np.abs(gold["optimum"]["gradient"]))),
    )
    checks = {
        "triple_equivalence": {"max_abs_diff": worst, "tolerance": tol, "pass": worst <= tol},
        "golden_value": {"max_abs_diff": gold_err, "tolerance": 1e-9, "pass": gold_err <= 1e-9,
                         "optimum_loss": gold["optimum"]["loss"]},
    }
    return {"instances": rows, "golden": gold, "checks": checks,
            "pass": all(c["pass"] for c in checks.values())}


def fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def shot_sweep(rng: np.random.Generator, shots=(100, 1000, 10000, 100000)) -> dict:
    """Mean per-component standard error of a fixed gradient versus shot count."""
    inst = random_instance("state-prep", 2, rng, time_dependent=False)
    rows = []
    for s in shots:
        g = inst.theorem2(11, shots=s, rng=rng)
        rows.append({"shots": int(s), "mean_stderr": float(np.mean(g.stderr))})
    slope = fit_slope([r["shots"] for r in rows], [r["mean_stderr"] for r in rows])
    return {"sweep": "shots", "rows": rows, "slope": slope, "target": -0.5, "tolerance": 0.1,
            "pass": abs(slope + 0.5) <= 0.1}


def _nontrivial_instance(rng, n_qubits: int, time_dependent: bool) -> Instance:
    """A state-prep instance whose gradient integrand is not constant in time.

    Commuting terms make the integrand flat, which every quadrature rule
    integrates exactly and which would hide the convergence order.
    """
    while True:
        inst = random_instance("state-prep", n_qubits, rng, time_dependent)
        if np.max(np.abs(inst.theorem2(5).values - inst.theorem2(9).values)) > 1e-3:
            return inst


def grid_sweep(rng: np.random.Generator, counts=(11, 21, 41, 81, 161), reference: int = 100001) -> dict:
    """Quadrature error of the exact-shot estimate versus the number of grid points."""
    inst = _nontrivial_instance(rng, 1, time_dependent=True)
    ref = inst.theorem2(reference).values
    out = {"sweep": "grid", "rows": [], "target": -2.0, "tolerance": 0.2}
    ok = True
    for rule in ("trapezoid", "midpoint"):
        errs = []
        for n in counts:
            n_pts = n if rule == "trapezoid" else n - 1
            e = float(np.max(np.abs(inst.theorem2(n_pts, rule=rule).values - ref)))
            errs.append(e)
            out["rows"].append({"rule": rule, "n_intervals": n - 1, "error": e})
        slope = fit_slope([n - 1 for n in counts], errs)
        out[f"slope_{rule}"] = slope
        ok &= abs(slope + 2.0) <= 0.2
    out["pass"] = bool(ok)
    return out


def clock_sweep(rng: np.random.Generator, cells=(10, 20, 40, 80)) -> dict:
    """Clock-register estimate versus the fine-grid oracle as the register is refined."""
    inst = _nontrivial_instance(rng, 2, time_dependent=False)
    ref = inst.oracle(20001).values
    rows = []
    for n in cells:
        e = float(np.max(np.abs(inst.theorem3(n).values - ref)))
        rows.append({"cells": int(n), "error": e})
    slope = fit_slope([r["cells"] for r in rows], [r["error"] for r in rows])
    return {"sweep": "clock", "rows": rows, "slope": slope, "target": -2.0, "tolerance": 0.2,
            "pass": abs(slope + 2.0) <= 0.2}
