"""Single-expectation gradient estimator with a discretised clock register.

The clock register holds a grid of times s_i with probabilities
w_i g(s_i). Conditioned on s_i the rest of the register is the extended
circuit state eta(s_i), so the joint state is block diagonal:

    eta_hat = sum_i w_i g(s_i) |s_i><s_i| (x) eta(s_i).

For the top-hat density g = 1/T on [0, T] and a midpoint grid, the
estimate 2 A_T T tr((1_s (x) O_m) eta_hat) is exactly the midpoint-rule
discretisation of the time integral. A smooth g changes the estimate by at
most ||O_m|| * integral |g_top - g| ds.

Only time-independent Hamiltonians are supported: the clock-controlled
evolution exp(-i H (x) s_hat) is then exact block by block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adjoint import (
    AdjointSeed,
    GradientEstimate,
    master_seed,
    parse_shots,
    pure_vector,
    shots_label,
    stream,
)
from .hamiltonians import ParametricHamiltonian
from .quantum import KET_PLUS, Y, DimensionError, controlled_swap, ptrace

NORM_TOL = 1e-9


@dataclass(frozen=True)
class GFunction:
    """Clock density: ``top-hat`` on [0, T] or ``raised-cosine`` edges of width ``taper``.

    The raised-cosine ramps are centred on 0 and T, so the unnormalised
    profile still integrates to T and extends taper/2 outside [0, T].
    """

    variant: str = "top-hat"
    taper: float = 0.0

    def __post_init__(self):
        if self.variant not in ("top-hat", "raised-cosine"):
            raise ValueError(f"unknown clock density {self.variant!r}")
        if self.variant == "raised-cosine" and not self.taper > 0:
            raise ValueError("raised-cosine density needs a positive taper width")

    @property
    def reach(self) -> float:
        """How far the support extends beyond [0, T]."""
        return 0.5 * self.taper if self.variant == "raised-cosine" else 0.0

    def profile(self, s: np.ndarray, T: float) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.variant == "top-hat":
            return ((s >= 0) & (s <= T)).astype(float)
        h = 0.5 * self.taper
        d = np.minimum(s, T - s)  # signed distance inside the interval
        ramp = 0.5 * (1.0 + np.sin(np.pi * np.clip(d, -h, h) / self.taper))
        return np.where(d >= h, 1.0, np.where(d <= -h, 0.0, ramp))


@dataclass(frozen=True)
class SRegister:
    points: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    T: float

    def __post_init__(self):
        p, w, g = (np.asarray(a, dtype=float) for a in (self.points, self.weights, self.density))
        if not (p.shape == w.shape == g.shape) or p.ndim != 1 or p.size == 0:
            raise ValueError("clock register arrays must be nonempty and aligned")
        if np.any(g < 0) or np.any(w < 0):
            raise ValueError("clock density and weights must be nonnegative")
        if abs(float(w @ g) - 1.0) > NORM_TOL:
            raise ValueError(f"clock density integrates to {float(w @ g)}, not 1")
        for name, a in (("points", p), ("weights", w), ("density", g)):
            object.__setattr__(self, name, a)

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights * self.density

    @classmethod
    def build(cls, T: float, n_cells: int, g: GFunction = GFunction()) -> "SRegister":
        """Midpoint cells of width T/n_cells, padded to cover the support of g."""
        if T < 0:
            raise ValueError("horizon must be nonnegative")
        if T == 0:
            return cls(np.zeros(1), np.ones(1), np.ones(1), 0.0)
        if n_cells < 1:
            raise ValueError("need at least one clock cell")
        h = T / n_cells
        pad = math.ceil(g.reach / h - 1e-12)
        idx = np.arange(-pad, n_cells + pad)
        pts = (idx + 0.5) * h
        w = np.full(pts.size, h)
        prof = g.profile(pts, T)
        return cls(pts, w, prof / float(w @ prof), T)

    def with_density(self, g: GFunction) -> "SRegister":
        prof = g.profile(self.points, self.T)
        return SRegister(self.points, self.weights, prof / float(self.weights @ prof), self.T)


def tv_distance(g1: np.ndarray, g2: np.ndarray, sreg: SRegister) -> float:
    """Half the L1 distance of two clock densities on the grid of ``sreg``."""
    w = sreg.weights
    for g in (g1, g2):
        if abs(float(w @ g) - 1.0) > NORM_TOL:
            raise ValueError("density is not normalised on this grid")
    return 0.5 * float(w @ np.abs(np.asarray(g1) - np.asarray(g2)))


@dataclass(frozen=True, eq=False)
class HatEta:
    """Block-diagonal clock-extended state: probabilities and per-time blocks.

    ``blocks`` holds normalised vectors (N_s, 2 d^2) when the blocks are pure
    and density matrices (N_s, 2 d^2, 2 d^2) otherwise.
    """

    probabilities: np.ndarray
    blocks: np.ndarray
    d: int

    @property
    def pure(self) -> bool:
        return self.blocks.ndim == 2

    def block_matrix(self, i: int) -> np.ndarray:
        b = self.blocks[i]
        return np.outer(b, b.conj()) if self.pure else b

    def trace(self) -> float:
        if self.pure:
            tr = np.sum(np.abs(self.blocks) ** 2, axis=1)
        else:
            tr = np.real(np.einsum("nii->n", self.blocks))
        return float(self.probabilities @ tr)

    def reduced_blocks(self) -> np.ndarray:
        """Marginals on ancilla (x) adjoint, one per clock point."""
        d = self.d
        if self.pure:
            x = self.blocks.reshape(-1, 2 * d, d)
            return x @ x.conj().transpose(0, 2, 1)
        return np.stack([ptrace(b, (2 * d, d), [0]) for b in self.blocks])


def _check_static(H: ParametricHamiltonian):
    if not H.is_time_independent:
        raise ValueError("clock-register estimator needs a time-independent Hamiltonian")


def build_hat_eta(H: ParametricHamiltonian, theta, component, rho0, sreg: SRegister) -> HatEta:
    """Clock-extended state for one seed component.

    Each block is C_swap (1 (x) e^{iH(T - s)} (x) e^{-iHs}) eta(0) (...)^dagger.
    """
    _check_static(H)
    a = component.state if hasattr(component, "state") else component
    d = H.dim
    if a.dim != d or rho0.dim != d:
        raise DimensionError("seed and input state must match the Hamiltonian dimension")
    lam, vec = np.linalg.eigh(H.matrix(0.0, theta))
    T = sreg.T

    def u(t):
        return (vec * np.exp(-1j * t * lam)) @ vec.conj().T

    cs = controlled_swap(d)
    va, vr = pure_vector(a), pure_vector(rho0)
    blocks = []
    if va is not None and vr is not None:
        for s in sreg.points:
            blocks.append(cs @ np.kron(KET_PLUS, np.kron(u(s - T) @ va, u(s) @ vr)))
    else:
        plus = np.outer(KET_PLUS, KET_PLUS.conj())
        am = np.outer(va, va.conj()) if va is not None else np.asarray(a.entries)
        rm = np.outer(vr, vr.conj()) if vr is not None else np.asarray(rho0.entries)
        for s in sreg.points:
            ua, ur = u(s - T), u(s)
            eta = np.kron(plus, np.kron(ua @ am @ ua.conj().T, ur @ rm @ ur.conj().T))
            blocks.append(cs @ eta @ cs.conj().T)
    return HatEta(sreg.probabilities, np.stack(blocks), d)


def _o_m(H: ParametricHamiltonian, theta, m: int) -> np.ndarray:
    return np.kron(Y, H.dH_dtheta(0.0, theta, m).entries)


def _measure_hat(hat: HatEta, R: np.ndarray, obs: np.ndarray, shots, rng) -> tuple[float, float]:
    """tr((1_s (x) obs) eta_hat), sampling the clock and the eigenvalue jointly."""
    lam, vec = np.linalg.eigh(obs)
    born = np.real(np.einsum("ia,nij,ja->na", vec.conj(), R, vec))
    joint = hat.probabilities[:, None] * born
    if shots is None:
        return float(np.sum(joint * lam[None, :])), 0.0
    p = np.clip(joint.reshape(-1), 0.0, None)
    counts = rng.multinomial(shots, p / p.sum()).reshape(joint.shape)
    vals = np.broadcast_to(lam, joint.shape)
    mean = float(np.sum(counts * vals)) / shots
    if shots == 1:
        return mean, 0.0
    var = float(np.sum(counts * (vals - mean) ** 2)) / (shots - 1)
    return mean, math.sqrt(var / shots)


def theorem3_gradient(H: ParametricHamiltonian, theta, rho0, seed: AdjointSeed, T: float,
                      sreg: SRegister, shots=None, rng=None) -> GradientEstimate:
    """2 T sum_j c_j A_j tr((1_s (x) sigma_Y (x) dH/dtheta_m (x) 1) eta_hat_j) per parameter."""
    _check_static(H)
    if not seed.components:
        raise ValueError("seed has no components")
    if abs(sreg.T - T) > 1e-12:
        raise ValueError("clock register horizon differs from T")
    shots = parse_shots(shots)
    theta = np.asarray(theta, dtype=float)
    M = H.n_params
    meta = {"rule": "clock", "n_points": int(sreg.points.size), "shots": shots_label(shots)}
    if T == 0:
        return GradientEstimate(np.zeros(M), np.zeros(M), meta)
    master = master_seed(rng) if shots is not None else 0
    meta["seed"] = master if shots is not None else None
    obs = [_o_m(H, theta, m) for m in range(M)]
    vals, var = np.zeros(M), np.zeros(M)
    for j, comp in enumerate(seed.components):
        if comp.c == 0:
            continue
        hat = build_hat_eta(H, theta, comp, rho0, sreg)
        R = hat.reduced_blocks()
        scale = 2.0 * T * comp.c * comp.A
        for m in range(M):
            if not np.any(obs[m]):
                continue
            r = None if shots is None else stream(master, j, m)
            e, se = _measure_hat(hat, R, obs[m], shots, r)
            vals[m] += scale * e
            var[m] += (scale * se) ** 2
    return GradientEstimate(vals, np.sqrt(var), meta)


def bound_check(H: ParametricHamiltonian, theta, rho0, seed: AdjointSeed, T: float,
                g: GFunction, n_cells: int = 200) -> tuple[np.ndarray, np.ndarray, bool]:
    """Compare the smooth-clock expectation with the top-hat one on a shared grid.

    lhs_m = |tr(O_m eta_hat_top) - tr(O_m eta_hat_g)|, where the first term is
    dL/dtheta_m / (2 T A_T) on the grid; rhs_m = ||O_m|| * sum_i w_i |g_top - g|.
    """
    if len(seed.components) != 1:
        raise ValueError("bound check takes a single-component seed")
    comp = seed.components[0]
    reg_g = SRegister.build(T, n_cells, g)
    reg_top = reg_g.with_density(GFunction())
    theta = np.asarray(theta, dtype=float)
    R = build_hat_eta(H, theta, comp, rho0, reg_g).reduced_blocks()
    lhs, rhs = np.zeros(H.n_params), np.zeros(H.n_params)
    l1 = float(reg_g.weights @ np.abs(reg_top.density - reg_g.density))
    for m in range(H.n_params):
        o = _o_m(H, theta, m)
        tr_s = np.real(np.einsum("ij,nji->n", o, R))
        lhs[m] = abs(float(reg_top.probabilities @ tr_s - reg_g.probabilities @ tr_s))
        rhs[m] = H.dH_dtheta(0.0, theta, m).norm() * l1
    return lhs, rhs, bool(np.all(lhs <= rhs + 1e-9))
