"""Optimisers, datasets, the test-error metric and the training loop."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .adjoint import (
    GradientEstimate,
    TimeGrid,
    parse_shots,
    shots_label,
    theorem2_gradient,
)
from .continuous import SRegister, theorem3_gradient
from .evolution import GridEvolution, PropagatorConfig
from .hamiltonians import (
    Model,
    ParametricHamiltonian,
    SineNetwork,
    builtin_hydrogen,
    builtin_ising,
    builtin_td_ising,
    single_qubit_ansatz,
)
from .losses import (
    HamlearnSample,
    ObservableRecord,
    hamlearn_loss_and_seeds,
    observable_loss_and_seed,
    stateprep_loss_and_seed,
)
from .quantum import (
    Observable,
    PauliString,
    StateVector,
    basis_state,
    plus_state,
    random_angles,
    rotated_plus_state,
)
from .schrodinger import (
    CollocationRecord,
    XiRegister,
    decay_system,
    decay_value,
    dilate,
    initial_state,
    ode_loss_and_seed,
)

CSV_COLUMNS = ("iteration", "loss", "test_error", "grad_norm", "shots", "elapsed_ms")
TASKS = ("state-prep", "ham-learn", "obs-learn", "ode-learn")


# -- optimisers ------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    variant: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.variant not in ("adam", "sgd"):
            raise ValueError(f"unknown optimiser {self.variant!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, theta, grad, cfg: OptimizerConfig) -> tuple[AdamState, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape or state.m.shape != grad.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad**2
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    return AdamState(m, v, t), theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def sgd_step(theta, grad, cfg: OptimizerConfig) -> np.ndarray:
    return np.asarray(theta, dtype=float) - cfg.lr * np.asarray(grad, dtype=float)


# -- datasets and metrics --------------------------------------------------

def _sample_T(T_range, rng) -> float:
    lo, hi = T_range
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _input_state(kind: str, n: int, rng) -> tuple[StateVector, np.ndarray | None]:
    if kind == "plus":
        return plus_state(n), None
    if kind == "zero":
        return basis_state("0" * n), None
    if kind == "random":
        ang = random_angles(n, rng)
        return rotated_plus_state(ang), ang
    raise ValueError(f"unknown input-state kind {kind!r}")


def generate_hamlearn_dataset(target: ParametricHamiltonian, n_samples: int, rng: np.random.Generator,
                              init_state: str = "plus", T_range=(1.0, 2.0),
                              cfg: PropagatorConfig | None = None) -> list[HamlearnSample]:
    """Inputs, times and exact target outputs sigma_i(T_i) = U(0, T_i) rho_i U^dagger."""
    n = len(target.dims)
    out = []
    for _ in range(n_samples):
        psi, ang = _input_state(init_state, n, rng)
        T = _sample_T(T_range, rng)
        evo = GridEvolution(target, np.zeros(0), [], T, cfg)
        sigma = StateVector(evo.final_vector(psi.amplitudes), psi.dims)
        out.append(HamlearnSample(psi, T, sigma, ang))
    return out


def dataset_to_json(samples: Sequence[HamlearnSample]) -> str:
    """Inputs as rotation angles (or null for fixed inputs) plus times."""
    rows = [{"angles": None if s.angles is None else np.asarray(s.angles).tolist(), "T": s.T}
            for s in samples]
    return json.dumps({"samples": rows})


def dataset_from_json(text: str, target: ParametricHamiltonian, fixed_input: str = "plus",
                      cfg: PropagatorConfig | None = None) -> list[HamlearnSample]:
    n = len(target.dims)
    out = []
    for row in json.loads(text)["samples"]:
        if row["angles"] is None:
            psi, ang = _input_state(fixed_input, n, None)
        else:
            ang = np.asarray(row["angles"], dtype=float)
            psi = rotated_plus_state(ang)
        T = float(row["T"])
        evo = GridEvolution(target, np.zeros(0), [], T, cfg)
        out.append(HamlearnSample(psi, T, StateVector(evo.final_vector(psi.amplitudes), psi.dims), ang))
    return out


class TestProbe:
    """Fixed probe set (phi_i, T_i) with the target's outputs precomputed."""

    def __init__(self, target: ParametricHamiltonian, M_s: int, rng: np.random.Generator,
                 T_range=(1.0, 2.0), cfg: PropagatorConfig | None = None):
        if M_s < 1:
            raise ValueError("need at least one probe state")
        n = len(target.dims)
        self.cfg = cfg or PropagatorConfig()
        self.phis = np.stack([_input_state("random", n, rng)[0].amplitudes for _ in range(M_s)])
        self.times = np.array([_sample_T(T_range, rng) for _ in range(M_s)])
        self.order = np.argsort(self.times, kind="stable")
        self.targets = self._outputs(target, np.zeros(0))

    def _outputs(self, H: ParametricHamiltonian, theta) -> np.ndarray:
        ts = self.times[self.order]
        evo = GridEvolution(H, theta, ts, float(ts[-1]), self.cfg)
        us = evo.unitaries()
        out = np.empty_like(self.phis)
        out[self.order] = np.einsum("nij,nj->ni", us, self.phis[self.order])
        return out

    def error(self, ansatz: ParametricHamiltonian, theta) -> float:
        model = self._outputs(ansatz, np.asarray(theta, dtype=float))
        fid = np.abs(np.sum(model.conj() * self.targets, axis=1)) ** 2
        return float(min(1.0, max(0.0, 1.0 - fid.mean())))


def test_error(theta, target: ParametricHamiltonian, ansatz: ParametricHamiltonian, M_s: int,
               rng: np.random.Generator, T_range=(1.0, 2.0),
               cfg: PropagatorConfig | None = None) -> float:
    """Mean infidelity 1 - |<phi|U_theta^dagger U|phi>|^2 over random probes and times."""
    return TestProbe(target, M_s, rng, T_range, cfg).error(ansatz, theta)


test_error.__test__ = False  # not a pytest test
TestProbe.__test__ = False


# -- configuration ---------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one training run.

    ``model`` is one of single-qubit, hydrogen, isingL, td-isingL or decay.
    ``T_range`` is [lo, hi]; equal ends mean a fixed time.
    """

    task: str = "state-prep"
    model: str = "single-qubit"
    iterations: int = 3000
    optimizer: str = "sgd"
    lr: float = 1e-2
    batch_size: int = 1
    init_state: str = "zero"
    T_range: tuple = (1.0, 1.0)
    grid_rule: str = "trapezoid"
    ds: float = 0.1
    shots: object = None
    seed: int = 0
    model_seed: int = 0
    propagator: str = "exact"
    max_step: float | None = 0.01
    estimator: str = "theorem2"
    clock_cells: int = 20
    eval_every: int = 10
    test_samples: int = 50
    init: str = "zeros"
    init_scale: float = 0.1
    theta0: list | None = None
    network_width: int = 2
    obs_per_sample: int | None = None
    record_weight: float | None = None
    normalise_grad: bool = False
    pool_size: int | None = None
    ode_a: float = 0.7
    ode_times: tuple = (1.0,)
    xi_points: int = 512
    xi_half_width: float = 16.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")
        if self.estimator not in ("theorem2", "theorem3"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        self.T_range = tuple(float(t) for t in self.T_range)
        self.ode_times = tuple(float(t) for t in self.ode_times)
        if len(self.T_range) != 2 or self.T_range[0] > self.T_range[1] or self.T_range[0] <= 0:
            raise ValueError("T_range must be [lo, hi] with 0 < lo <= hi")
        self.shots = parse_shots(self.shots)
        OptimizerConfig(self.optimizer, self.lr)
        PropagatorConfig(self.propagator, self.max_step)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["T_range"] = list(self.T_range)
        d["ode_times"] = list(self.ode_times)
        d["shots"] = shots_label(self.shots)
        return d

    def replace(self, **kw) -> "ExperimentConfig":
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)


def preset(task: str, model: str = "") -> ExperimentConfig:
    """Hyperparameters of the reference experiments (learning rate, inputs, times, batch)."""
    if task == "state-prep":
        return ExperimentConfig()
    if task == "ham-learn":
        model = model or "ising2"
        if model.startswith("td-ising"):
            return ExperimentConfig(task, model, iterations=1500, optimizer="adam", lr=2e-2,
                                    batch_size=10, init_state="random", T_range=(1.0, 2.0),
                                    init="sine", eval_every=25)
        return ExperimentConfig(task, model, iterations=1000, optimizer="adam", lr=1e-2,
                                batch_size=1, init_state="plus", T_range=(1.0, 2.0),
                                init="normal", eval_every=10)
    if task == "obs-learn":
        model = model or "ising2"
        if model.startswith("td-ising"):
            return ExperimentConfig(task, model, iterations=1500, optimizer="adam", lr=2e-2,
                                    batch_size=10, init_state="random", T_range=(1.0, 2.0),
                                    init="sine", eval_every=25)
        return ExperimentConfig(task, model, iterations=2000, optimizer="adam", lr=8e-3,
                                batch_size=1, init_state="random", T_range=(1.0, 2.0),
                                init="normal", eval_every=20)
    if task == "ode-learn":
        return ExperimentConfig(task, "decay", iterations=200, optimizer="adam", lr=2e-2,
                                T_range=(1.0, 1.0), theta0=[0.3], eval_every=1)
    raise ValueError(f"unknown task {task!r}")


def build_model(name: str, rng: np.random.Generator, width: int = 2) -> Model:
    if name == "single-qubit":
        return Model("single-qubit", single_qubit_ansatz(), single_qubit_ansatz(),
                     np.array([0.0, np.pi / 4, 0.0]))
    if name == "hydrogen":
        return builtin_hydrogen()
    if name.startswith("td-ising"):
        return builtin_td_ising(int(name[len("td-ising"):] or 2), width, rng)
    if name.startswith("ising"):
        return builtin_ising(int(name[len("ising"):] or 2), rng)
    raise ValueError(f"unknown model {name!r}")


# -- run record ------------------------------------------------------------

@dataclass
class TrainingRun:
    config: ExperimentConfig
    iterations: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    test_errors: list[float | None] = field(default_factory=list)
    grad_norms: list[float | None] = field(default_factory=list)
    stderr_norms: list[float | None] = field(default_factory=list)
    thetas: list[np.ndarray] = field(default_factory=list)
    elapsed_ms: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    def append(self, it, loss, test_err, grad_norm, stderr_norm, theta, elapsed):
        self.iterations.append(int(it))
        self.losses.append(float(loss))
        self.test_errors.append(None if test_err is None else float(test_err))
        self.grad_norms.append(None if grad_norm is None else float(grad_norm))
        self.stderr_norms.append(None if stderr_norm is None else float(stderr_norm))
        self.thetas.append(np.array(theta, dtype=float))
        self.elapsed_ms.append(float(elapsed))

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def final_test_error(self) -> float:
        return self.test_errors[-1]

    def to_csv(self, timing: bool = False) -> str:
        """CSV text; elapsed_ms stays empty unless ``timing`` so reruns are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        shots = shots_label(self.config.shots)
        for i in range(len(self.iterations)):
            w.writerow([
                self.iterations[i],
                _fmt(self.losses[i]),
                _fmt(self.test_errors[i]),
                _fmt(self.grad_norms[i]),
                shots,
                f"{self.elapsed_ms[i]:.3f}" if timing else "",
            ])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "final_theta": self.final_theta.tolist(),
            "final_loss": self.losses[-1],
            "final_test_error": self.final_test_error,
            "iterations": self.config.iterations,
        }


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# -- tasks -----------------------------------------------------------------

class _Task:
    """Loss, gradient and test metric for one experiment type."""

    def __init__(self, cfg: ExperimentConfig, rngs: dict):
        self.cfg = cfg
        self.rngs = rngs
        self.prop = PropagatorConfig(cfg.propagator, cfg.max_step)

    def grid(self, T: float) -> TimeGrid:
        return TimeGrid.make(self.cfg.grid_rule, T, ds=self.cfg.ds, rng=self.rngs["data"])

    def sample_gradient(self, H, theta, psi0, T, seed_fn):
        """Evolve psi0 to T, build the seed from the final state and estimate the gradient."""
        cfg = self.cfg
        if cfg.estimator == "theorem3":
            evo = GridEvolution(H, theta, [], T, self.prop)
            final = StateVector(evo.final_vector(psi0.amplitudes), psi0.dims)
            loss, seed = seed_fn(final)
            reg = SRegister.build(T, cfg.clock_cells)
            g = theorem3_gradient(H, theta, psi0, seed, T, reg, cfg.shots, self.rngs["shots"])
            return loss, g
        grid = self.grid(T)
        evo = GridEvolution(H, theta, grid.points, T, self.prop)
        final = StateVector(evo.final_vector(psi0.amplitudes), psi0.dims)
        loss, seed = seed_fn(final)
        if isinstance(seed, dict):
            raise TypeError("seed_fn must return a single seed")
        g = theorem2_gradient(H, theta, psi0, seed, T, grid, cfg.shots, self.rngs["shots"],
                              self.prop, evolution=evo)
        return loss, g


class _StatePrep(_Task):
    def __init__(self, cfg, rngs):
        super().__init__(cfg, rngs)
        self.H = single_qubit_ansatz()
        self.psi0 = basis_state("0")
        self.sigma = plus_state(1)
        self.T = cfg.T_range[0]
        self.n_params = 3

    def loss_and_grad(self, theta):
        return self.sample_gradient(self.H, theta, self.psi0, self.T,
                                    lambda f: stateprep_loss_and_seed(f, self.sigma))

    def metric(self, theta):
        evo = GridEvolution(self.H, theta, [], self.T)
        v = evo.final_vector(self.psi0.amplitudes)
        return 1.0 - abs(np.vdot(self.sigma.amplitudes, v)) ** 2


class _Learn(_Task):
    def __init__(self, cfg, rngs):
        super().__init__(cfg, rngs)
        self.model = build_model(cfg.model, np.random.default_rng(cfg.model_seed), cfg.network_width)
        self.H = self.model.ansatz
        self.n_params = self.H.n_params
        self.n = self.model.n_qubits
        self.probe = TestProbe(self.model.target, cfg.test_samples, rngs["probe"], cfg.T_range)
        self.pool = None
        if cfg.pool_size:
            self.pool = generate_hamlearn_dataset(self.model.target, cfg.pool_size, rngs["data"],
                                                  cfg.init_state, cfg.T_range, self.prop)

    def batch(self) -> list[HamlearnSample]:
        r = self.rngs["data"]
        if self.pool is not None:
            idx = r.integers(len(self.pool), size=self.cfg.batch_size)
            return [self.pool[i] for i in idx]
        return generate_hamlearn_dataset(self.model.target, self.cfg.batch_size, r,
                                         self.cfg.init_state, self.cfg.T_range, self.prop)

    def metric(self, theta):
        return self.probe.error(self.H, theta)


class _HamLearn(_Learn):
    def loss_and_grad(self, theta):
        batch = self.batch()
        w = 1.0 / len(batch)
        total, grads = 0.0, []
        for s in batch:
            def seed_fn(final, s=s):
                l, seeds = hamlearn_loss_and_seeds([s], [final])
                return l * w, seeds[0].scaled(w)
            l, g = self.sample_gradient(self.H, theta, s.rho0, s.T, seed_fn)
            total += l
            grads.append(g)
        return total, _sum_estimates(grads)


def _local_paulis(n: int) -> list[str]:
    out = []
    for q in range(n):
        for p in "XYZ":
            out.append("".join(p if j == q else "I" for j in range(n)))
    return out


class _ObsLearn(_Learn):
    def loss_and_grad(self, theta):
        cfg = self.cfg
        batch = self.batch()
        labels = _local_paulis(self.n)
        n_rec = cfg.obs_per_sample or len(labels)
        weight = cfg.record_weight if cfg.record_weight is not None else 1.0 / (len(batch) * n_rec)
        total, grads = 0.0, []
        for i, s in enumerate(batch):
            if n_rec == len(labels):
                chosen = labels
            else:
                chosen = [labels[j] for j in self.rngs["data"].choice(len(labels), n_rec, replace=False)]
            sig = s.sigma.amplitudes
            recs = []
            for lab in chosen:
                p = PauliString(lab)
                val = float(np.real(np.vdot(sig, p.matrix() @ sig)))
                recs.append(ObservableRecord(p, val, i, s.T))

            def seed_fn(final, recs=recs, i=i):
                l, seeds = observable_loss_and_seed(recs, {i: final}, weight)
                return l, seeds[i]
            l, g = self.sample_gradient(self.H, theta, s.rho0, s.T, seed_fn)
            total += l
            grads.append(g)
        return total, _sum_estimates(grads)


class _OdeLearn(_Task):
    """Learn the decay rate a of du_0/dt = -a u_0 from normalised populations."""

    def __init__(self, cfg, rngs):
        super().__init__(cfg, rngs)
        self.xi = XiRegister(cfg.xi_points, cfg.xi_half_width)
        self.H = dilate(decay_system(), self.xi)
        self.n_params = 1
        self.v0 = initial_state(np.ones(2) / np.sqrt(2), self.xi)
        obs = Observable(np.diag([1.0, 0.0]))
        self.records = {T: [CollocationRecord(obs, decay_value(cfg.ode_a, T))] for T in cfg.ode_times}

    def loss_and_grad(self, theta):
        total, grads = 0.0, []
        w = 1.0 / len(self.records)
        for T, recs in self.records.items():
            def seed_fn(final, recs=recs):
                l, seed = ode_loss_and_seed(recs, final, self.xi)
                return l * w, seed.scaled(w)
            l, g = self.sample_gradient(self.H, theta, self.v0, T, seed_fn)
            total += l
            grads.append(g)
        return total, _sum_estimates(grads)

    def metric(self, theta):
        return abs(float(theta[0]) - self.cfg.ode_a)


def _sum_estimates(grads: Sequence[GradientEstimate]) -> GradientEstimate:
    vals = np.sum([g.values for g in grads], axis=0)
    se = np.sqrt(np.sum([g.stderr**2 for g in grads], axis=0))
    return GradientEstimate(vals, se, dict(grads[0].metadata))


_TASK_TYPES = {"state-prep": _StatePrep, "ham-learn": _HamLearn, "obs-learn": _ObsLearn,
               "ode-learn": _OdeLearn}


def make_rngs(seed: int) -> dict:
    names = ("data", "shots", "init", "probe")
    return {name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
            for i, name in enumerate(names)}


def initial_theta(cfg: ExperimentConfig, n_params: int, rng: np.random.Generator,
                  H: ParametricHamiltonian | None = None) -> np.ndarray:
    """Starting point. ``sine`` draws sine-network phases and frequencies from U(-pi, pi)
    and every other entry (amplitudes, couplings, bias) from N(0, init_scale^2)."""
    if cfg.theta0 is not None:
        theta = np.asarray(cfg.theta0, dtype=float)
        if theta.shape != (n_params,):
            raise ValueError(f"theta0 needs {n_params} entries")
        return theta
    if cfg.init == "zeros":
        return np.zeros(n_params)
    if cfg.init == "normal":
        return cfg.init_scale * rng.normal(size=n_params)
    if cfg.init == "sine":
        theta = cfg.init_scale * rng.normal(size=n_params)
        for term in (H.terms if H is not None else ()):
            if isinstance(term.schedule, SineNetwork):
                m = term.schedule.width
                idx = list(term.schedule.param_indices)
                theta[idx[m:3 * m]] = rng.uniform(-np.pi, np.pi, size=2 * m)
                theta[idx[3 * m]] = 0.0
        return theta
    raise ValueError(f"unknown init {cfg.init!r}")


def train(cfg: ExperimentConfig, progress: Callable[[int, float], None] | None = None) -> TrainingRun:
    """Run the optimisation loop; rows are recorded before each step plus a final row."""
    rngs = make_rngs(cfg.seed)
    task = _TASK_TYPES[cfg.task](cfg, rngs)
    theta = initial_theta(cfg, task.n_params, rngs["init"], getattr(task, "H", None))
    opt = OptimizerConfig(cfg.optimizer, cfg.lr)
    adam = AdamState.zeros(task.n_params)
    run = TrainingRun(cfg)
    start = time.perf_counter()
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        loss, g = task.loss_and_grad(theta)
        if not (math.isfinite(loss) and np.all(np.isfinite(g.values))):
            raise FloatingPointError(f"non-finite loss or gradient at iteration {it}, theta={theta}")
        grad = g.values
        if cfg.normalise_grad:
            nrm = np.linalg.norm(grad)
            grad = grad / nrm if nrm > 0 else grad
        test_err = task.metric(theta) if it % cfg.eval_every == 0 else None
        run.append(it, loss, test_err, np.linalg.norm(g.values), np.linalg.norm(g.stderr), theta,
                   1e3 * (time.perf_counter() - t0))
        if opt.variant == "adam":
            adam, theta = adam_step(adam, theta, grad, opt)
        else:
            theta = sgd_step(theta, grad, opt)
        if progress:
            progress(it, loss)
    t0 = time.perf_counter()
    final_loss, _ = task.loss_and_grad(theta)
    run.append(cfg.iterations, final_loss, task.metric(theta), None, None, theta,
               1e3 * (time.perf_counter() - t0))
    run.wall_time = time.perf_counter() - start
    return run
