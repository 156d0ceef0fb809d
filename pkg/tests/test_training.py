import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from qnode.hamiltonians import SineNetwork, builtin_ising, builtin_td_ising
from qnode.training import (
    CSV_COLUMNS,
    AdamState,
    ExperimentConfig,
    OptimizerConfig,
    TestProbe,
    _StatePrep,
    adam_step,
    build_model,
    dataset_from_json,
    dataset_to_json,
    generate_hamlearn_dataset,
    initial_theta,
    make_rngs,
    preset,
    sgd_step,
    train,
)

seeds = st.integers(0, 2**32 - 1)


def test_adam_first_step_is_lr_times_sign():
    cfg = OptimizerConfig("adam", 0.05)
    state, theta = adam_step(AdamState.zeros(3), np.zeros(3), np.array([2.0, -0.1, 0.0]), cfg)
    assert np.allclose(theta, [-0.05, 0.05, 0.0], atol=1e-8)
    assert state.t == 1


def test_adam_minimises_quadratic():
    cfg = OptimizerConfig("adam", 0.05)
    state, theta = AdamState.zeros(2), np.array([1.0, -2.0])
    for _ in range(2000):
        state, theta = adam_step(state, theta, 2 * (theta - [0.3, 0.4]), cfg)
    assert np.allclose(theta, [0.3, 0.4], atol=1e-3)


def test_sgd_step():
    assert np.allclose(sgd_step([1.0, 2.0], [0.5, -1.0], OptimizerConfig("sgd", 0.1)), [0.95, 2.1])


def test_optimizer_validation():
    with pytest.raises(ValueError):
        OptimizerConfig("rmsprop")
    with pytest.raises(ValueError):
        OptimizerConfig("adam", 0.0)
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3), OptimizerConfig())


def test_dataset_outputs_match_matrix_exponential(rng):
    m = builtin_ising(2, np.random.default_rng(1))
    samples = generate_hamlearn_dataset(m.target, 4, rng, "random", (1.0, 2.0))
    Hm = m.target.matrix(0.0, np.zeros(0))
    for s in samples:
        assert 1.0 <= s.T <= 2.0
        expect = expm(-1j * s.T * Hm) @ s.rho0.amplitudes
        assert np.max(np.abs(s.sigma.amplitudes - expect)) < 1e-10


def test_dataset_json_round_trip(rng):
    m = builtin_td_ising(2, 2, np.random.default_rng(0))
    for kind in ("random", "plus"):
        samples = generate_hamlearn_dataset(m.target, 3, rng, kind, (1.0, 2.0))
        back = dataset_from_json(dataset_to_json(samples), m.target)
        for a, b in zip(samples, back):
            assert a.T == b.T
            assert np.allclose(a.rho0.amplitudes, b.rho0.amplitudes, atol=1e-14)
            assert np.allclose(a.sigma.amplitudes, b.sigma.amplitudes, atol=1e-12)


@pytest.mark.parametrize("name", ["hydrogen", "ising2", "td-ising2"])
def test_probe_error_vanishes_at_truth(name, rng):
    m = build_model(name, np.random.default_rng(0))
    probe = TestProbe(m.target, 10, rng)
    assert probe.error(m.ansatz, m.theta_star) < 1e-10
    err = probe.error(m.ansatz, m.theta_star + 0.3)
    assert 1e-4 < err <= 1.0


def test_config_round_trip_and_validation():
    cfg = preset("ham-learn", "ising3").replace(shots=1000)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.shots == 1000
    assert ExperimentConfig.from_json('{"shots": "inf"}').shots is None
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"learning_rate": 1.0})
    with pytest.raises(ValueError):
        ExperimentConfig(T_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        ExperimentConfig(task="classify")
    with pytest.raises(ValueError):
        ExperimentConfig(shots=0)


def test_initial_theta_options(rng):
    m = builtin_td_ising(2, 2, np.random.default_rng(0))
    n = m.ansatz.n_params
    assert np.array_equal(initial_theta(ExperimentConfig(), 3, rng), np.zeros(3))
    assert np.array_equal(initial_theta(ExperimentConfig(theta0=[1, 2, 3]), 3, rng), [1, 2, 3])
    with pytest.raises(ValueError):
        initial_theta(ExperimentConfig(theta0=[1.0]), 3, rng)
    with pytest.raises(ValueError):
        initial_theta(ExperimentConfig(init="uniform"), 3, rng)
    theta = initial_theta(ExperimentConfig(init="sine"), n, rng, m.ansatz)
    net = m.ansatz.terms[-1].schedule
    assert isinstance(net, SineNetwork)
    idx = list(net.param_indices)
    assert np.all(np.abs(theta[idx[2:6]]) <= np.pi)
    assert theta[idx[6]] == 0.0


def test_rng_streams_are_independent():
    a = make_rngs(3)
    b = make_rngs(3)
    assert a["data"].random() == b["data"].random()
    assert make_rngs(3)["data"].random() != make_rngs(3)["shots"].random()


def test_state_prep_run_is_reproducible_and_decreases():
    cfg = ExperimentConfig(iterations=40, lr=0.5, shots=100, seed=4)
    a, b = train(cfg), train(cfg)
    assert a.to_csv() == b.to_csv()
    assert a.losses[-1] < a.losses[0]
    lines = a.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 42
    assert all(line.endswith(",100,") for line in lines[1:])
    assert train(cfg.replace(seed=5)).to_csv() != a.to_csv()


def test_timing_column_only_when_requested():
    run = train(ExperimentConfig(iterations=2))
    assert run.to_csv().splitlines()[1].endswith(",inf,")
    assert not run.to_csv(timing=True).splitlines()[1].endswith(",")


def test_clock_estimator_trains():
    run = train(ExperimentConfig(iterations=30, lr=0.5, estimator="theorem3", clock_cells=10))
    assert run.losses[-1] < 0.5 * run.losses[0]


def test_non_finite_gradient_aborts(monkeypatch):
    monkeypatch.setattr(_StatePrep, "loss_and_grad", lambda self, th: (float("nan"), None))
    with pytest.raises(FloatingPointError):
        train(ExperimentConfig(iterations=3))


def test_ham_learn_loss_small_at_truth():
    cfg = preset("ham-learn", "ising2").replace(iterations=0, theta0=None)
    m = build_model("ising2", np.random.default_rng(cfg.model_seed))
    run = train(cfg.replace(theta0=m.theta_star.tolist()))
    assert run.losses[-1] < 1e-12 and run.final_test_error < 1e-12


def test_obs_learn_short_run_improves():
    cfg = preset("obs-learn", "ising2").replace(iterations=60, eval_every=30, lr=0.05)
    run = train(cfg)
    assert run.final_test_error < run.test_errors[0]


def test_ode_learn_moves_toward_rate():
    cfg = preset("ode-learn").replace(iterations=20, xi_points=128)
    run = train(cfg)
    assert run.final_test_error < run.test_errors[0]
    assert run.summary()["final_theta"][0] > 0.3


@given(seeds)
def test_probe_error_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    m = builtin_ising(2, rng)
    err = TestProbe(m.target, 5, rng).error(m.ansatz, rng.normal(size=1))
    assert 0.0 <= err <= 1.0
