import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from repopt.core import (ExplorationParams, FeasibleSet, HalfSpace, InfeasibleOracleOutput,
                         RunState, Trajectory, augmented_iteration, budget_bound,
                         check_run_invariants, rep_step, run, step_budget)
from repopt.oracles import DcaOracle, ProxLinearOracle
from repopt.problems import LtsInstance, generate_lts, generate_relu, generate_trimmed_lasso
from repopt.samplers import DirectionSampler, StepSampler


class Counting:
    def __init__(self, f):
        self.f, self.calls = f, 0

    def __call__(self, x):
        self.calls += 1
        return self.f(x)


def fixed_dir(v):
    return lambda rng, n: np.asarray(v, dtype=float)


def fixed_step(t):
    return lambda rng: float(t)


sq = lambda x: float(x @ x)
P = ExplorationParams()
rng0 = np.random.default_rng(0)


class StubOracle:
    def __init__(self, fn):
        self.fn = fn

    def propose(self, x):
        return self.fn(x)


class Quadratic:
    """h(x) = ||x - c||^2 as a minimal problem with ``n`` and ``__call__``."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.n = self.c.size

    def __call__(self, x):
        d = x - self.c
        return float(d @ d)


# --- REP ---------------------------------------------------------------------

def test_rep_accepts_descent():
    x = np.array([1.0])
    out = rep_step(x, 1.0, sq, FeasibleSet(1), fixed_dir([-1.0]), fixed_step(1.0), P, rng0)
    assert out.accepted and out.t_ex == 1.0 and out.y[0] == 0.0 and out.h_y == 0.0


@given(st.floats(1e-6, 1.0), st.sampled_from([-1.0, 1.0]))
def test_rep_rejects_at_global_min(t, v):
    x = np.zeros(1)
    out = rep_step(x, 0.0, sq, FeasibleSet(1), fixed_dir([v]), fixed_step(t), P, rng0)
    assert not out.accepted and out.t_ex == 0.0 and out.y is x


def test_rep_infeasible_candidate_skips_evaluation():
    h = Counting(sq)
    C = HalfSpace([1.0], 0.5)
    x = np.zeros(1)
    out = rep_step(x, 0.0, h, C, fixed_dir([1.0]), fixed_step(1.0), P, rng0)
    assert not out.accepted and out.t_ex == 0.0 and out.y is x
    assert h.calls == 0 and out.evaluations == 0


def test_rep_nan_is_rejection_with_anomaly():
    x = np.array([1.0])
    out = rep_step(x, 1.0, lambda y: math.nan, FeasibleSet(1), fixed_dir([-1.0]),
                   fixed_step(0.5), P, rng0)
    assert not out.accepted and out.anomaly and out.h_y == 1.0 and out.y is x


def test_rep_acceptance_is_strict():
    # h(y) + gamma/2 t^2 == h(x) exactly must be rejected
    h = lambda y: 0.5
    out = rep_step(np.zeros(1), 1.0, h, FeasibleSet(1), fixed_dir([1.0]), fixed_step(1.0),
                   P, rng0)
    assert not out.accepted


def test_rep_disabled_samples_nothing():
    rng = np.random.default_rng(3)
    state = rng.bit_generator.state
    out = rep_step(np.ones(2), 2.0, sq, FeasibleSet(2), DirectionSampler(), StepSampler(1.0),
                   ExplorationParams(exploration_enabled=False), rng)
    assert not out.accepted and rng.bit_generator.state == state


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0.1, 5.0), st.floats(0.1, 3.0))
@settings(max_examples=100, deadline=None)
def test_rep_soundness(seed, n, gamma, r):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n)
    h = Quadratic(c)
    x = rng.standard_normal(n) * 2
    params = ExplorationParams(gamma, r)
    out = rep_step(x, h(x), h, FeasibleSet(n), DirectionSampler(), StepSampler(r), params, rng)
    assert abs(np.linalg.norm(out.v_ex) - 1.0) <= 1e-12
    assert 0.0 <= out.t_hat <= r
    assert out.accepted == (out.t_ex == out.t_hat and out.t_ex > 0)
    if out.accepted:
        assert np.array_equal(out.y, x + out.t_hat * out.v_ex)
        assert out.h_y + 0.5 * gamma * out.t_ex ** 2 < h(x)
    else:
        assert out.y is x and out.h_y == h(x)


def test_exploration_params_validation():
    with pytest.raises(ValueError):
        ExplorationParams(gamma=0.0)
    with pytest.raises(ValueError):
        ExplorationParams(r=math.inf)
    with pytest.raises(ValueError):
        ExplorationParams(r=-1.0)


# --- augmented iteration ---------------------------------------------------------

def _state(x, h):
    return RunState(0, np.asarray(x, float), h(np.asarray(x, float)), rng=np.random.default_rng(1))


def test_greedy_prefers_lower_value():
    # y = 0 (h = 3 via offset), z with h = 2
    h = lambda u: float(u[0] ** 2) + (3.0 if u[0] == 0.0 else 0.0)
    st0 = _state([1.0], lambda u: 10.0)
    st0.h_x = 10.0
    oracle = StubOracle(lambda x: np.array([np.sqrt(2.0)]))
    new, rec, rep = augmented_iteration(st0, oracle, h, FeasibleSet(1), fixed_dir([-1.0]),
                                        fixed_step(1.0), P)
    assert rep.accepted and rep.h_y == 3.0
    assert new.x[0] == np.sqrt(2.0) and not rec.took_exploration


def test_greedy_tie_goes_to_oracle():
    h = lambda u: float(abs(u[0]))
    st0 = _state([2.0], h)
    oracle = StubOracle(lambda x: np.array([-1.0]))   # h = 1, same as y = 1
    new, rec, rep = augmented_iteration(st0, oracle, h, FeasibleSet(1), fixed_dir([-1.0]),
                                        fixed_step(1.0), ExplorationParams(gamma=1e-3))
    assert rep.accepted and rep.h_y == 1.0
    assert new.x[0] == -1.0 and not rec.took_exploration


def test_greedy_takes_exploration_when_strictly_better():
    h = lambda u: float(u[0] ** 2)
    st0 = _state([1.0], h)
    new, rec, _ = augmented_iteration(st0, StubOracle(lambda x: x.copy()), h, FeasibleSet(1),
                                      fixed_dir([-1.0]), fixed_step(1.0), P)
    assert new.x[0] == 0.0 and rec.took_exploration and new.sum_sq_steps == 1.0
    assert new.h_x <= min(st0.h_x, rec.h_z)


def test_disabled_exploration_is_plain_oracle_step():
    h = lambda u: float(u @ u)
    st0 = _state([1.0, 1.0], h)
    z = np.array([0.5, 0.5])
    new, rec, rep = augmented_iteration(st0, StubOracle(lambda x: z), h, FeasibleSet(2),
                                        DirectionSampler(), StepSampler(1.0),
                                        ExplorationParams(exploration_enabled=False))
    assert rep.y is st0.x and np.array_equal(new.x, z) and new.sum_sq_steps == 0.0


def test_infeasible_oracle_output_is_an_error():
    C = HalfSpace([1.0], 1.0)
    st0 = _state([0.0], sq)
    with pytest.raises(InfeasibleOracleOutput):
        augmented_iteration(st0, StubOracle(lambda x: np.array([5.0])), sq, C,
                            DirectionSampler(), StepSampler(1.0), P)


# --- runs ----------------------------------------------------------------------

def test_run_rejects_zero_iterations():
    with pytest.raises(ValueError):
        run(Quadratic([1.0]), StubOracle(lambda x: x), DirectionSampler(), StepSampler(1.0),
            P, 0, seed=0)


def test_run_is_deterministic(tmp_path):
    inst = generate_lts(30, 5, 3, 10.0, np.random.default_rng(2))
    oracle = DcaOracle(inst)
    a = run(inst, oracle, DirectionSampler(), StepSampler(1.0), P, 40, seed=7)
    b = run(inst, oracle, DirectionSampler(), StepSampler(1.0), P, 40, seed=7)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(a.x_final, b.x_final)


def test_run_at_oracle_fixed_point_is_constant():
    b = np.array([1.0, 2.0, 30.0])
    inst = LtsInstance(np.eye(3), b, 1)
    x0 = np.array([1.0, 2.0, 0.0])           # DCA fixed point: outlier row dropped
    traj = run(inst, DcaOracle(inst), DirectionSampler(), StepSampler(1.0),
               ExplorationParams(exploration_enabled=False), 20, seed=0, x0=x0)
    assert np.all(traj.h_x == traj.h_x[0]) and np.all(traj.residual == 0.0)
    assert np.array_equal(traj.x_final, x0)


def test_step_budget_examples():
    z = np.zeros(3)
    t = Trajectory(z + 1, z + 1, np.zeros(3, bool), z.copy(), z.copy(), np.zeros(3, bool),
                   np.zeros(1), 1.0)
    assert step_budget(t) == 0.0
    t1 = Trajectory(np.array([1.0]), np.array([1.0]), np.array([True]), np.array([0.5]),
                    np.zeros(1), np.array([True]), np.zeros(1), 0.5)
    assert step_budget(t1) == 0.25
    assert budget_bound(t1, P) == pytest.approx(1.0)
    empty = Trajectory(np.zeros(0), np.zeros(0), np.zeros(0, bool), np.zeros(0), np.zeros(0),
                       np.zeros(0, bool), np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        step_budget(empty)


def test_check_run_invariants_detects_violations():
    bad = Trajectory(np.array([1.0, 2.0]), np.ones(2), np.zeros(2, bool), np.zeros(2),
                     np.zeros(2), np.zeros(2, bool), np.zeros(1), 2.0)
    assert not check_run_invariants(bad, P)
    greedy = Trajectory(np.array([1.0]), np.ones(1), np.array([True]), np.array([1.0]),
                        np.zeros(1), np.array([True]), np.zeros(1), 0.9)
    assert not check_run_invariants(greedy, P)    # 1 > 2 * 0.1


@pytest.mark.parametrize("family", ["trimmed_lasso", "lts", "relu"])
@given(seed=st.integers(0, 2**31), gamma=st.floats(0.2, 5.0), r=st.floats(0.1, 3.0))
@settings(max_examples=8, deadline=None)
def test_invariants_on_real_runs(family, seed, gamma, r):
    rng = np.random.default_rng(seed)
    if family == "trimmed_lasso":
        inst = generate_trimmed_lasso(10, 20, 3, 0.1, rng, design="normalized")
        oracle, sampler = DcaOracle(inst), DirectionSampler("gauss_axis", 30.0)
    elif family == "lts":
        inst = generate_lts(20, 4, 3, 10.0, rng)
        oracle, sampler = DcaOracle(inst), DirectionSampler()
    else:
        inst = generate_relu(20, 4, 0.3, 2.0, rng)
        oracle, sampler = ProxLinearOracle(inst), DirectionSampler()
    params = ExplorationParams(gamma, r)
    traj = run(inst, oracle, sampler, StepSampler(r), params, 60, seed=seed)
    assert check_run_invariants(traj, params)
    assert step_budget(traj) <= budget_bound(traj, params) * (1 + 1e-9) + 1e-12


def test_pathological_oracle_rep_alone_descends():
    h = Quadratic([3.0, -2.0, 1.0])
    traj = run(h, StubOracle(lambda x: x.copy()), DirectionSampler(), StepSampler(1.0), P,
               500, seed=4)
    assert check_run_invariants(traj, P)
    assert traj.n_accepted > 0 and traj.h_final < 0.5 * traj.h0
    assert np.all(traj.took_exploration == traj.rep_accepted)


def test_trajectory_csv_round_trip(tmp_path):
    inst = generate_relu(15, 3, 0.2, 2.0, np.random.default_rng(8))
    traj = run(inst, ProxLinearOracle(inst), DirectionSampler(), StepSampler(1.0), P, 25, seed=1)
    p = tmp_path / "t.csv"
    traj.to_csv(p)
    assert p.read_text().splitlines()[0] == ",".join(Trajectory.COLUMNS)
    back = Trajectory.read_csv(p)
    assert np.array_equal(back["k"], np.arange(25))
    for col in ("h_x", "h_z", "t_ex", "residual"):
        assert np.array_equal(back[col], getattr(traj, col))
    assert np.array_equal(back["rep_accepted"], traj.rep_accepted)
