"""Random exploration step and the greedy augmented loop.

One augmented iteration runs the base oracle and one exploration step from the
same point and keeps whichever candidate has the smaller objective. With
exploration disabled the loop reduces to plain oracle iteration, which is the
"base" arm of the experiments.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .samplers import DirectionSampler, StepSampler


class FeasibleSet:
    """Membership predicate for a closed convex set in R^n (here: all of R^n)."""

    def __init__(self, n: int):
        self.n = n

    def contains(self, x) -> bool:
        return True


class HalfSpace(FeasibleSet):
    """{x : <a, x> <= beta}."""

    def __init__(self, a, beta: float):
        self.a = np.asarray(a, dtype=float)
        self.beta = float(beta)
        super().__init__(self.a.size)

    def contains(self, x) -> bool:
        return float(self.a @ x) <= self.beta


class InfeasibleOracleOutput(RuntimeError):
    pass


# objective values closer than this (relative) are a tie in the greedy selection
TIE_RTOL = 1e-14


@dataclass(frozen=True)
class ExplorationParams:
    gamma: float = 1.0
    r: float = 1.0
    exploration_enabled: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"r must be positive and finite, got {self.r}")


@dataclass
class RepOutcome:
    v_ex: np.ndarray | None
    t_hat: float
    t_ex: float
    y: np.ndarray
    h_y: float
    accepted: bool
    anomaly: bool = False
    evaluations: int = 0


def rep_step(x, h_x, objective, feasible, dir_sampler, step_sampler,
             params: ExplorationParams, rng: np.random.Generator) -> RepOutcome:
    """One exploration step: a single sampled direction and step, no resampling.

    The candidate ``x + t v`` is accepted iff it is feasible and
    ``h(x + t v) + gamma/2 t^2 < h(x)``. A non-finite objective value at the
    candidate counts as a rejection and sets ``anomaly``.
    """
    if not params.exploration_enabled:
        return RepOutcome(None, 0.0, 0.0, x, h_x, False)
    v = dir_sampler(rng, x.size)
    t_hat = step_sampler(rng)
    cand = x + t_hat * v
    if not feasible.contains(cand):
        return RepOutcome(v, t_hat, 0.0, x, h_x, False)
    h_c = objective(cand)
    if not math.isfinite(h_c):
        return RepOutcome(v, t_hat, 0.0, x, h_x, False, anomaly=True, evaluations=1)
    if h_c + 0.5 * params.gamma * t_hat * t_hat < h_x:
        return RepOutcome(v, t_hat, t_hat, cand, h_c, True, evaluations=1)
    return RepOutcome(v, t_hat, 0.0, x, h_x, False, evaluations=1)


@dataclass
class RunState:
    k: int
    x: np.ndarray
    h_x: float
    sum_sq_steps: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


@dataclass
class IterationRecord:
    h_x: float
    h_z: float
    rep_accepted: bool
    t_ex: float
    residual: float
    took_exploration: bool


def augmented_iteration(state: RunState, oracle, objective, feasible, dir_sampler,
                        step_sampler, params: ExplorationParams
                        ) -> tuple[RunState, IterationRecord, RepOutcome]:
    """x+ = argmin{h(y), h(z)} over the exploration point y and oracle point z.

    Ties go to the oracle point; values within ``TIE_RTOL`` (relative) count
    as ties, since near a fixed point the true decrease falls below the
    rounding error of h.
    """
    x = state.x
    rep = rep_step(x, state.h_x, objective, feasible, dir_sampler, step_sampler,
                   params, state.rng)
    z = oracle.propose(x)
    if not feasible.contains(z):
        raise InfeasibleOracleOutput(f"oracle returned an infeasible point at k={state.k}")
    h_z = objective(z)
    residual = float(np.linalg.norm(x - z))
    if not math.isfinite(h_z):
        # treat like a failed proposal: the oracle point is unusable
        h_z, z = math.inf, x
    took_y = rep.h_y < h_z - TIE_RTOL * max(abs(rep.h_y), abs(h_z))
    if took_y:
        x_new, h_new = rep.y, rep.h_y
    else:
        x_new, h_new = z, h_z
    rec = IterationRecord(state.h_x, h_z, rep.accepted, rep.t_ex, residual, took_y)
    new_state = RunState(state.k + 1, x_new, h_new,
                         state.sum_sq_steps + rep.t_ex * rep.t_ex, state.rng)
    return new_state, rec, rep


@dataclass
class Trajectory:
    """Per-iteration log of one run.

    Row ``k`` holds ``h(x^k)``, ``h(z^{k+1})``, the exploration outcome and the
    oracle residual ``||x^k - z^{k+1}||``.
    """

    h_x: np.ndarray
    h_z: np.ndarray
    rep_accepted: np.ndarray
    t_ex: np.ndarray
    residual: np.ndarray
    took_exploration: np.ndarray
    x_final: np.ndarray
    h_final: float
    anomalies: int = 0

    COLUMNS = ("k", "h_x", "h_z", "rep_accepted", "t_ex", "residual")

    def __len__(self) -> int:
        return self.h_x.size

    @property
    def h0(self) -> float:
        return float(self.h_x[0])

    @property
    def n_accepted(self) -> int:
        return int(self.rep_accepted.sum())

    def objective_path(self) -> np.ndarray:
        """h(x^0), ..., h(x^N)."""
        return np.append(self.h_x, self.h_final)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for k in range(len(self)):
                w.writerow([k, f"{self.h_x[k]:.17g}", f"{self.h_z[k]:.17g}",
                            int(self.rep_accepted[k]), f"{self.t_ex[k]:.17g}",
                            f"{self.residual[k]:.17g}"])

    @staticmethod
    def read_csv(path) -> dict:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return {
            "k": np.array([int(r["k"]) for r in rows]),
            "h_x": np.array([float(r["h_x"]) for r in rows]),
            "h_z": np.array([float(r["h_z"]) for r in rows]),
            "rep_accepted": np.array([r["rep_accepted"] == "1" for r in rows]),
            "t_ex": np.array([float(r["t_ex"]) for r in rows]),
            "residual": np.array([float(r["residual"]) for r in rows]),
        }


def run(problem, oracle, dir_sampler: DirectionSampler, step_sampler: StepSampler,
        params: ExplorationParams, N: int, seed: int, x0=None,
        feasible: FeasibleSet | None = None) -> Trajectory:
    """Run ``N`` augmented iterations from ``x0`` (default: the origin)."""
    if N < 1:
        raise ValueError(f"iteration count must be >= 1, got {N}")
    n = problem.n
    feasible = feasible or FeasibleSet(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if not feasible.contains(x):
        raise ValueError("initial point is infeasible")
    state = RunState(0, x, problem(x), rng=np.random.default_rng(seed))
    h_x = np.empty(N)
    h_z = np.empty(N)
    acc = np.zeros(N, dtype=bool)
    t_ex = np.zeros(N)
    res = np.empty(N)
    took = np.zeros(N, dtype=bool)
    anomalies = 0
    for k in range(N):
        state, rec, rep = augmented_iteration(state, oracle, problem, feasible,
                                              dir_sampler, step_sampler, params)
        h_x[k], h_z[k], acc[k] = rec.h_x, rec.h_z, rec.rep_accepted
        t_ex[k], res[k], took[k] = rec.t_ex, rec.residual, rec.took_exploration
        anomalies += rep.anomaly
    return Trajectory(h_x, h_z, acc, t_ex, res, took, state.x, state.h_x, anomalies)


def step_budget(traj: Trajectory, params: ExplorationParams | None = None) -> float:
    """Cumulative squared accepted exploration step."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return float(np.sum(traj.t_ex ** 2))


def budget_bound(traj: Trajectory, params: ExplorationParams) -> float:
    """(2/gamma)(h(x^0) - h(x^N)), an upper bound on the step budget."""
    return 2.0 / params.gamma * (traj.h0 - traj.h_final)


def check_run_invariants(traj: Trajectory, params: ExplorationParams,
                         rtol: float = 1e-9) -> bool:
    """Monotone objective path and step budget within its bound, both up to
    ``rtol`` relative to the initial objective."""
    path = traj.objective_path()
    slack = rtol * max(abs(traj.h0), abs(traj.h_final), 1.0)
    monotone = bool(np.all(np.diff(path) <= slack))
    return monotone and step_budget(traj) <= budget_bound(traj, params) + slack
