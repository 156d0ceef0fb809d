"""Acceptance suite: each test covers one numbered criterion and records a pass/fail line.

Long-running training reproductions dominate the runtime (under 10 minutes
on one core); they use the same presets and replicate seeds as the CLI.
"""
import itertools
import time

import numpy as np
import pytest
from scipy.linalg import expm

from qnode.adjoint import AdjointSeed, TimeGrid, theorem2_gradient
from qnode.checks import (
    FAMILIES,
    golden_values,
    grad_check,
    grid_sweep,
    random_hamiltonian,
    random_instance,
    shot_sweep,
    triple_check,
)
from qnode.cli import main, replicate_seed
from qnode.continuous import GFunction, SRegister, bound_check, theorem3_gradient
from qnode.evolution import evolve_state
from qnode.hamiltonians import network_schedule_values
from qnode.losses import ObservableRecord, observable_loss_and_seed, purity_loss_and_seed
from qnode.quantum import PauliString, random_density, random_hermitian, random_statevector
from qnode.schrodinger import XiRegister, dilate, hermitian_system, initial_state, recover
from qnode.training import ExperimentConfig, build_model, preset, train

pytestmark = pytest.mark.acceptance
REPLICATES = 5


def replicate_runs(task, model, **kw):
    cfg = preset(task, model).replace(**kw)
    return [train(cfg.replace(seed=replicate_seed(0, r))) for r in range(REPLICATES)]


def evaluated(run):
    """Iterations at which the test error was evaluated, and those errors."""
    pairs = [(i, e) for i, e in zip(run.iterations, run.test_errors) if e is not None]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def test_criterion_01_triple_equivalence(criterion):
    start = time.perf_counter()
    report = grad_check(50, np.random.default_rng(np.random.SeedSequence(0)), tol=1e-5)
    elapsed = time.perf_counter() - start
    worst = report["checks"]["triple_equivalence"]["max_abs_diff"]
    fams = {r["family"] for r in report["instances"]}
    ok = worst <= 1e-5 and elapsed < 120 and fams == set(FAMILIES)
    criterion(1, ok, f"50 instances, worst pairwise diff {worst:.2e} (tol 1e-5), {elapsed:.0f}s (limit 120s)")
    assert ok


def test_criterion_02_golden_values(criterion):
    gold = golden_values()
    origin = np.max(np.abs(np.array(gold["origin"]["gradient"]) - [0.0, -1.0, 0.0]))
    optimum = np.max(np.abs(gold["optimum"]["gradient"]))
    loss = gold["optimum"]["loss"]
    ok = origin < 1e-9 and optimum < 1e-9 and loss < 1e-12
    criterion(2, ok, f"origin err {origin:.1e}, optimum |g| {optimum:.1e}, optimum loss {loss:.1e}")
    assert ok


def test_criterion_03_state_prep(criterion):
    start = time.perf_counter()
    exact = train(ExperimentConfig(shots=None))
    its, err = evaluated(exact)
    below = its[err < 1e-4]
    monotone = bool(np.all(np.diff(err) <= 1e-15))
    noisy = replicate_runs("state-prep", "", shots=10)
    its, _ = evaluated(noisy[0])
    med = np.median([evaluated(r)[1] for r in noisy], axis=0)
    # plateau: the mean of the median curve over the last two 500-iteration windows agrees
    # within a factor of 3 and sits far above the exact-shot run, so noise sets the floor
    late = med[(its >= 2000) & (its < 2500)].mean()
    later = med[its >= 2500].mean()
    plateau = 1 / 3 <= later / late <= 3 and later > 100 * err[-1]
    elapsed = time.perf_counter() - start
    ok = (below.size > 0 and below[0] <= 3000 and monotone and med[-1] < 1e-1 and plateau and elapsed < 300)
    first = int(below[0]) if below.size else -1
    criterion(3, ok, f"exact: below 1e-4 at iteration {first}, monotone={monotone}; "
                     f"10 shots: median final {med[-1]:.1e}, window means {late:.1e}->{later:.1e}; "
                     f"{elapsed:.0f}s (limit 300s)")
    assert ok


def test_criterion_04_ising(criterion):
    start = time.perf_counter()
    meds = {}
    for model in ("ising2", "ising3"):
        meds[model] = float(np.median([r.final_test_error for r in replicate_runs("ham-learn", model)]))
    elapsed = time.perf_counter() - start
    ok = all(m < 1e-3 for m in meds.values()) and elapsed < 900
    criterion(4, ok, ", ".join(f"{k} median {v:.1e}" for k, v in meds.items())
              + f" (tol 1e-3), {elapsed:.0f}s (limit 900s)")
    assert ok


def test_criterion_05_hydrogen(criterion):
    med = float(np.median([r.final_test_error for r in replicate_runs("ham-learn", "hydrogen")]))
    ok = med < 1e-3
    criterion(5, ok, f"hydrogen median test error {med:.1e} (tol 1e-3)")
    assert ok


def test_criterion_06_td_ising(criterion):
    runs = replicate_runs("ham-learn", "td-ising2")
    model = build_model("td-ising2", np.random.default_rng(runs[0].config.model_seed))
    ts = np.linspace(0.0, 2.0, 201)
    devs = [float(np.max(np.abs(network_schedule_values(model, r.final_theta, ts) - np.sin(np.pi * ts))))
            for r in runs]
    med = float(np.median([r.final_test_error for r in runs]))
    good = sum(d < 0.1 for d in devs)
    ok = med < 1e-2 and good >= 3
    criterion(6, ok, f"median test error {med:.1e} (tol 1e-2), schedule max dev < 0.1 in {good}/5 "
                     f"({', '.join(f'{d:.3f}' for d in devs)})")
    assert ok


def test_criterion_07_clock_register(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        H = random_hamiltonian(int(rng.integers(1, 3)), rng, time_dependent=False)
        theta = rng.normal(size=H.n_params)
        d = H.dim
        rho0 = random_density(d, rng) if rng.integers(2) else random_statevector(d, rng)
        seed = AdjointSeed.single(-1.0, random_statevector(d, rng))
        T, n = float(rng.uniform(0.5, 1.5)), int(rng.integers(5, 30))
        a = theorem3_gradient(H, theta, rho0, seed, T, SRegister.build(T, n)).values
        b = theorem2_gradient(H, theta, rho0, seed, T, TimeGrid.midpoint(T, n_points=n)).values
        worst = max(worst, float(np.max(np.abs(a - b))))
    held = 0
    for _ in range(100):
        H = random_hamiltonian(int(rng.integers(1, 3)), rng, time_dependent=False)
        theta = rng.normal(size=H.n_params)
        d = H.dim
        seed = AdjointSeed.single(-1.0, random_statevector(d, rng))
        g = GFunction("raised-cosine", float(rng.uniform(0.05, 0.4)))
        held += bound_check(H, theta, random_statevector(d, rng), seed, 1.0, g, n_cells=100)[2]
    ok = worst < 1e-10 and held == 100
    criterion(7, ok, f"top-hat vs midpoint worst {worst:.1e} (tol 1e-10); bound held on {held}/100")
    assert ok


def test_criterion_08_scaling(criterion):
    shots = shot_sweep(np.random.default_rng(np.random.SeedSequence(0)))
    grid = grid_sweep(np.random.default_rng(np.random.SeedSequence(0)))
    ok = shots["pass"] and grid["pass"]
    criterion(8, ok, f"shot slope {shots['slope']:.3f} (-0.5 +/- 0.1); quadrature slopes "
                     f"{grid['slope_trapezoid']:.3f}/{grid['slope_midpoint']:.3f} (-2 +/- 0.2)")
    assert ok


def test_criterion_09_schrodingerisation(criterion):
    run = train(preset("ode-learn"))
    a_err = run.final_test_error
    xi = XiRegister()
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(5):
        h = random_hermitian(2, rng)
        u0 = random_statevector(2, rng).amplitudes
        vT = evolve_state(initial_state(u0, xi), dilate(hermitian_system(h), xi), np.zeros(0), 0.0, 1.0)
        rho, _ = recover(vT, xi)
        u = expm(-1j * h) @ u0
        worst = max(worst, float(np.max(np.abs(rho.entries - np.outer(u, u.conj())))))
    ok = a_err < 1e-2 and worst < 1e-6
    criterion(9, ok, f"|a_hat - 0.7| = {a_err:.1e} (tol 1e-2); Hermitian recovery {worst:.1e} (tol 1e-6)")
    assert ok


def test_criterion_10_seed_reconstruction(criterion):
    rng = np.random.default_rng(10)
    worst = 0.0
    for letter, coeff in itertools.product("XYZ", (1.0, -0.6, 1.7)):
        rho = random_density(2, rng)
        rec = ObservableRecord(PauliString(letter, coeff), 0.3 * coeff, 0, 1.0)
        _, seeds = observable_loss_and_seed([rec], {0: rho})
        expected = 2 * (np.real(np.trace(rec.matrix() @ rho.entries)) - rec.value) * rec.matrix()
        worst = max(worst, float(np.max(np.abs(seeds[0].operator() - expected))))
    paulis = ["".join(p) for p in itertools.product("IXYZ", repeat=2)][1:]
    for _ in range(100):
        rho = random_density(4, rng)
        recs = []
        for _ in range(int(rng.integers(1, 4))):
            p = PauliString(paulis[rng.integers(len(paulis))], float(rng.uniform(-1.5, 1.5)))
            recs.append(ObservableRecord(p, float(rng.uniform(-1, 1) * abs(p.coeff)), 0, 1.0))
        _, seeds = observable_loss_and_seed(recs, {0: rho})
        expected = sum(2 / len(recs) * (np.real(np.trace(r.matrix() @ rho.entries)) - r.value) * r.matrix()
                       for r in recs)
        worst = max(worst, float(np.max(np.abs(seeds[0].operator() - expected))))
        _, ps = purity_loss_and_seed(rho, 2)
        red = np.einsum("ikjk->ij", rho.entries.reshape(2, 2, 2, 2))
        worst = max(worst, float(np.max(np.abs(ps.operator() + 2 * np.kron(red, np.eye(2))))))
    fd_worst = 0.0
    for i in range(10):
        fam = ("observable", "purity")[i % 2]
        row = triple_check(random_instance(fam, 1 + i % 2, rng))
        fd_worst = max(fd_worst, row["t2_vs_fd"])
    ok = worst < 1e-10 and fd_worst < 1e-5
    criterion(10, ok, f"reconstruction worst {worst:.1e} (tol 1e-10); finite differences {fd_worst:.1e} (tol 1e-5)")
    assert ok


def test_criterion_11_reproducible_csv(criterion, tmp_path):
    invocations = [
        ["state-prep", "--shots", "10,inf", "--iterations", "30"],
        ["ham-learn", "--model", "ising2,td-ising2", "--iterations", "3"],
        ["obs-learn", "--model", "hydrogen", "--shots", "100", "--iterations", "3"],
        ["ode-learn", "--iterations", "3"],
        ["grad-check", "--instances", "4"],
        ["scaling-study", "--sweep", "shots"],
    ]
    mismatched = []
    for k, argv in enumerate(invocations):
        dirs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / str(k)
            extra = ["--replicates", "2"] if argv[0] not in ("grad-check", "scaling-study") else []
            assert main([*argv, *extra, "--seed", "11", "--out", str(out)]) == 0
            dirs.append(out)
        files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
        assert files
        mismatched += [str(f) for f in files if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
    ok = not mismatched
    criterion(11, ok, f"{len(invocations)} invocations rerun, mismatched CSVs: {mismatched or 'none'}")
    assert ok
