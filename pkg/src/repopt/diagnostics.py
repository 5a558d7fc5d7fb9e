"""Exact d-stationarity certifiers for the benchmark families.

For h = f - g with f, g convex, x is d-stationary iff the subdifferential of
g at x is contained in that of f. Each certifier evaluates a closed-form
measure of how badly that inclusion fails; zero (up to ``eps``) means pass.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .problems import LtsInstance, ReluInstance, TrimmedLassoInstance
from .samplers import sample_sphere

LTS_SEED_OFFSET = 0x5EED


@dataclass(frozen=True)
class CertifierTolerances:
    eps: float = 1e-6
    delta_tie: float = 1e-10
    lts_enum_cap: int = 8192
    lts_random_completions: int = 256
    relu_vertex_cap: int = 16


@dataclass
class DStatReport:
    family: str
    passed: bool
    gap: float
    tie_set_size: int = 0
    per_coordinate_deltas: np.ndarray | None = None
    anomaly: str | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        gap = self.gap if math.isfinite(self.gap) else None
        return {"family": self.family, "pass": self.passed, "gap": gap,
                "tie_set_size": self.tie_set_size, "anomaly": self.anomaly}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# --- trimmed lasso ------------------------------------------------------------

def _tl_sq_dist(x: np.ndarray, r: np.ndarray, lam: float, p: np.ndarray) -> np.ndarray:
    """Squared coordinate distances D_i(p_i)^2 between the worst subgradient of
    g compatible with top-k indicators ``p`` and the coordinate set of df."""
    zero = x == 0.0
    d_zero = np.maximum(0.0, np.abs(r) - lam * (1.0 - p)) ** 2
    d_nz = (lam * np.sign(x) * (p - 1.0) - r) ** 2
    return np.where(zero, d_zero, d_nz)


def tl_partition(x: np.ndarray, k: int, delta_tie: float):
    mag = np.abs(x)
    tau = np.sort(mag)[::-1][k - 1]
    high = np.flatnonzero(mag > tau + delta_tie)
    tie = np.flatnonzero(np.abs(mag - tau) <= delta_tie)
    low = np.flatnonzero(mag < tau - delta_tie)
    return tau, high, tie, low


def certify_trimmed_lasso(inst: TrimmedLassoInstance, x,
                          tol: CertifierTolerances = CertifierTolerances()) -> DStatReport:
    x = np.asarray(x, dtype=float)
    lam, k = inst.lam, inst.k
    r = inst.A.T @ (inst.A @ x - inst.b)
    _, high, tie, _ = tl_partition(x, k, tol.delta_tie)
    p = np.zeros(inst.n)
    p[high] = 1.0
    ambiguous = high.size < k < high.size + tie.size
    if ambiguous:
        n_pick = k - high.size
        gain = _tl_sq_dist(x[tie], r[tie], lam, np.ones(tie.size)) - \
            _tl_sq_dist(x[tie], r[tie], lam, np.zeros(tie.size))
        chosen = tie[np.argsort(-gain, kind="stable")[:n_pick]]
        p[chosen] = 1.0
    else:
        p[tie] = 1.0
    delta = np.sqrt(_tl_sq_dist(x, r, lam, p))
    gap = float(np.sqrt(np.sum(delta ** 2)))
    return DStatReport("trimmed_lasso", bool(np.all(delta <= tol.eps)), gap,
                       tie_set_size=int(tie.size) if ambiguous else 0,
                       per_coordinate_deltas=delta,
                       details={"ambiguous": bool(ambiguous)})


# --- least trimmed squares ----------------------------------------------------

def _completions_random(tie: np.ndarray, n_pick: int, count: int, rng):
    for _ in range(count):
        yield np.sort(rng.choice(tie, size=n_pick, replace=False))


def certify_lts(inst: LtsInstance, x, tol: CertifierTolerances = CertifierTolerances(),
                seed: int = 0) -> DStatReport:
    x = np.asarray(x, dtype=float)
    A, q = inst.A, inst.q
    r = A @ x - inst.b
    s = r * r
    tau = np.sort(s)[::-1][q - 1]
    band = tol.delta_tie * max(1.0, tau)
    above = np.flatnonzero(s > tau + band)
    tie = np.flatnonzero(np.abs(s - tau) <= band)
    grad_f = A.T @ r

    def grad_g(T):
        w = np.zeros_like(r)
        w[T] = r[T]
        return A.T @ w

    n_pick = q - above.size
    ambiguous = above.size < q < above.size + tie.size
    ref = np.concatenate([above, tie[:n_pick]])
    g_ref = grad_g(ref)
    match = float(np.linalg.norm(grad_f - g_ref))
    if not ambiguous:
        return DStatReport("lts", match <= tol.eps, match)
    if match > tol.eps:
        return DStatReport("lts", False, match, tie_set_size=int(tie.size),
                           details={"stage": "reference_completion"})

    n_comp = math.comb(tie.size, n_pick)
    if n_comp <= tol.lts_enum_cap:
        completions = (np.array(c, dtype=int) for c in itertools.combinations(tie, n_pick))
        exhaustive = True
    else:
        rng = np.random.default_rng(seed + LTS_SEED_OFFSET)
        extremes = [tie[:n_pick], tie[-n_pick:]]
        completions = itertools.chain(
            extremes, _completions_random(tie, n_pick, tol.lts_random_completions, rng))
        exhaustive = False
    witness = 0.0
    for c in completions:
        witness = max(witness, float(np.linalg.norm(grad_g(np.concatenate([above, c])) - g_ref)))
    gap = max(match, witness)
    return DStatReport("lts", gap <= tol.eps, gap, tie_set_size=int(tie.size),
                       details={"exhaustive": exhaustive, "completions": n_comp})


# --- box-constrained least squares --------------------------------------------

def box_constrained_lsq(G, target, dim_p: int | None = None, tol: float = 1e-10,
                        max_iter: int = 10_000) -> tuple[np.ndarray, float]:
    """min ||target - G mu|| over mu in [0, 1]^p by projected gradient.

    The projected-gradient iterate is polished with a bounded-variable
    least-squares solve; whichever residual is smaller is returned.
    """
    target = np.asarray(target, dtype=float)
    G = np.asarray(G, dtype=float).reshape(target.size, -1)
    p = G.shape[1] if dim_p is None else dim_p
    if p == 0:
        return np.zeros(0), float(np.linalg.norm(target))
    L = float(np.linalg.norm(G, 2) ** 2)
    if L == 0.0:
        return np.zeros(p), float(np.linalg.norm(target))
    mu = np.clip(np.linalg.lstsq(G, target, rcond=None)[0], 0.0, 1.0)
    step = 1.0 / L
    for _ in range(max_iter):
        grad = G.T @ (G @ mu - target)
        nxt = np.clip(mu - step * grad, 0.0, 1.0)
        if np.linalg.norm(nxt - mu) <= tol:
            mu = nxt
            break
        mu = nxt
    res = float(np.linalg.norm(target - G @ mu))
    polish = scipy.optimize.lsq_linear(G, target, bounds=(0.0, 1.0), method="bvls")
    mu_b = np.clip(polish.x, 0.0, 1.0)
    res_b = float(np.linalg.norm(target - G @ mu_b))
    if res_b < res:
        return mu_b, res_b
    return mu, res


# --- ReLU regression ----------------------------------------------------------

def certify_relu(inst: ReluInstance, x, tol: CertifierTolerances = CertifierTolerances()
                 ) -> DStatReport:
    x = np.asarray(x, dtype=float)
    A, alpha, beta = inst.A, inst.alpha, inst.beta
    z = A @ x
    tau = 1e-6 * max(1.0, float(np.abs(z).max()))
    plus = z > tau
    kink = np.abs(z) <= tau
    i0a = np.flatnonzero(kink & (alpha > 0))
    i0b = np.flatnonzero(kink & (beta > 0))
    g0 = A[plus].T @ beta[plus]
    f0 = A[plus].T @ (z[plus] + alpha[plus])
    D = g0 - f0
    G_beta = (A[i0b] * beta[i0b, None]).T
    F_alpha = (A[i0a] * alpha[i0a, None]).T
    if i0b.size > tol.relu_vertex_cap:
        return DStatReport("relu", False, math.inf, tie_set_size=int(i0b.size),
                           anomaly="tie_cap_exceeded")
    gamma = 0.0
    for bits in itertools.product((0.0, 1.0), repeat=i0b.size):
        target = D + G_beta @ np.array(bits) if i0b.size else D
        _, res = box_constrained_lsq(F_alpha, target)
        gamma = max(gamma, res)
    return DStatReport("relu", gamma <= tol.eps, gamma, tie_set_size=int(i0a.size + i0b.size),
                       details={"kink_alpha": int(i0a.size), "kink_beta": int(i0b.size)})


CERTIFIERS = {
    "trimmed_lasso": certify_trimmed_lasso,
    "lts": certify_lts,
    "relu": certify_relu,
}


def certify(inst, x, tol: CertifierTolerances = CertifierTolerances(), seed: int = 0
            ) -> DStatReport:
    if inst.family == "lts":
        return certify_lts(inst, x, tol, seed=seed)
    return CERTIFIERS[inst.family](inst, x, tol)


# --- brute-force validation oracle ----------------------------------------------

def brute_force_dstat_check(objective, x, n_dirs: int, t_probe: float,
                            rng: np.random.Generator | None = None) -> float:
    """Smallest forward-difference slope (h(x + t d) - h(x)) / t over random
    unit directions d, taken at the finest probe t = t_probe / 100."""
    if not t_probe > 0:
        raise ValueError("t_probe must be positive")
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=float)
    h0 = objective(x)
    t = t_probe / 100.0
    best = math.inf
    for _ in range(n_dirs):
        d = sample_sphere(rng, x.size)
        best = min(best, (objective(x + t * d) - h0) / t)
    return best
