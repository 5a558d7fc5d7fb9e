"""Benchmark objectives: trimmed lasso, least trimmed squares, ReLU regression.

Each instance is an immutable dataclass holding its data and exposing the
objective value together with the pieces of its DC (or composite) structure
that the oracles and certifiers need.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


def top_k_sum(values, k: int) -> float:
    """Sum of the ``k`` largest entries."""
    v = np.asarray(values, dtype=float).ravel()
    if not 0 <= k <= v.size:
        raise ValueError(f"k={k} out of range for vector of length {v.size}")
    if k == 0:
        return 0.0
    if k == v.size:
        return float(v.sum())
    return float(np.partition(v, v.size - k)[v.size - k:].sum())


def _bottom_sum(values: np.ndarray, count: int) -> float:
    # sum of the `count` smallest entries; avoids the cancellation in total - top
    if count <= 0:
        return 0.0
    if count >= values.size:
        return float(values.sum())
    return float(np.partition(values, count - 1)[:count].sum())


def top_k_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties broken toward the lowest index."""
    order = np.argsort(-np.asarray(values, dtype=float), kind="stable")
    return np.sort(order[:k])


def spectral_norm_sq(A: np.ndarray, iters: int = 50) -> float:
    """Power-iteration estimate of ||A||_2^2 from a fixed start vector."""
    n = A.shape[1]
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        est = float(v @ w)
        v = w / nrm
    # power iteration underestimates; guard the step size with a small margin
    return est * (1.0 + 1e-6)


class _LinearData:
    A: np.ndarray
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        return self.A.T @ self.A

    @cached_property
    def Atb(self) -> np.ndarray:
        return self.A.T @ self.b

    @cached_property
    def lipschitz(self) -> float:
        return spectral_norm_sq(self.A)

    def residual(self, x) -> np.ndarray:
        return self.A @ x - self.b

    def _check(self):
        object.__setattr__(self, "A", np.ascontiguousarray(self.A, dtype=float))
        object.__setattr__(self, "b", np.ascontiguousarray(self.b, dtype=float).ravel())
        if self.A.ndim != 2 or self.A.shape[0] != self.b.size:
            raise ValueError(f"inconsistent shapes A{self.A.shape}, b({self.b.size},)")


@dataclass(frozen=True, eq=False)
class TrimmedLassoInstance(_LinearData):
    """h(x) = 0.5||Ax - b||^2 + lam * (||x||_1 - top_k(|x|)).

    ``mu`` adds (mu/2)||x||^2 to both convex parts of the DC split; h is
    unchanged but the split becomes strongly convex.
    """

    A: np.ndarray
    b: np.ndarray
    lam: float
    k: int
    mu: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    family = "trimmed_lasso"

    def __post_init__(self):
        self._check()
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"k must lie in [1, {self.n}], got {self.k}")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    def __call__(self, x) -> float:
        return eval_trimmed_lasso(self, x)

    def f1(self, x) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ r) + 0.5 * self.mu * float(x @ x) + self.lam * float(np.abs(x).sum())

    def f2(self, x) -> float:
        return self.lam * top_k_sum(np.abs(x), self.k) + 0.5 * self.mu * float(x @ x)

    def f2_subgradient(self, x) -> np.ndarray:
        return trimmed_lasso_g_subgradient(self, x) + self.mu * np.asarray(x, dtype=float)

    def params(self) -> dict:
        return {"lam": self.lam, "k": self.k, "mu": self.mu}


@dataclass(frozen=True, eq=False)
class LtsInstance(_LinearData):
    """h(x) = 0.5||Ax - b||^2 - 0.5 * top_q((Ax - b)^2)."""

    A: np.ndarray
    b: np.ndarray
    q: int
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    family = "lts"

    def __post_init__(self):
        self._check()
        if not 1 <= self.q <= self.m:
            raise ValueError(f"q must lie in [1, {self.m}], got {self.q}")

    def __call__(self, x) -> float:
        return eval_lts(self, x)

    def f1(self, x) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def f2(self, x) -> float:
        r = self.residual(x)
        return 0.5 * top_k_sum(r * r, self.q)

    def f2_subgradient(self, x) -> np.ndarray:
        return lts_g_subgradient(self, x)

    def params(self) -> dict:
        return {"q": self.q}


@dataclass(frozen=True, eq=False)
class ReluInstance(_LinearData):
    """h(x) = 0.5 * sum_i (max(0, a_i^T x) - b_i)^2, a composite c(Ax)."""

    A: np.ndarray
    b: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    family = "relu"

    def __post_init__(self):
        self._check()

    @cached_property
    def alpha(self) -> np.ndarray:
        return np.where(self.b < 0, -self.b, 0.0)

    @cached_property
    def beta(self) -> np.ndarray:
        return np.where(self.b > 0, self.b, 0.0)

    def __call__(self, x) -> float:
        return eval_relu(self, x)

    def outer(self, u) -> float:
        """The outer function c(u) = 0.5 * sum (max(0, u) - b)^2."""
        d = np.maximum(u, 0.0) - self.b
        return 0.5 * float(d @ d)

    def outer_grad(self, u) -> np.ndarray:
        # active-branch derivative at the kink (relu'(0) = 1); with 0 here every
        # gradient-based oracle would stall at the origin, where all rows kink
        return np.where(u >= 0, u - self.b, 0.0)

    def gradient(self, x) -> np.ndarray:
        return self.A.T @ self.outer_grad(self.A @ x)

    def params(self) -> dict:
        return {}


# --- evaluation ---------------------------------------------------------------

def eval_trimmed_lasso(inst: TrimmedLassoInstance, x) -> float:
    x = np.asarray(x, dtype=float)
    r = inst.A @ x - inst.b
    # ||x||_1 - top_k(|x|) is the sum of the n-k smallest magnitudes
    return 0.5 * float(r @ r) + inst.lam * _bottom_sum(np.abs(x), inst.n - inst.k)


def trimmed_lasso_g_subgradient(inst: TrimmedLassoInstance, x) -> np.ndarray:
    """lam * sign(x) on a top-k magnitude set (lowest-index ties), zero elsewhere."""
    x = np.asarray(x, dtype=float)
    idx = top_k_indices(np.abs(x), inst.k)
    g = np.zeros_like(x)
    g[idx] = inst.lam * np.sign(x[idx])
    return g


def eval_lts(inst: LtsInstance, x) -> float:
    r = inst.A @ np.asarray(x, dtype=float) - inst.b
    return 0.5 * _bottom_sum(r * r, inst.m - inst.q)


def lts_g_subgradient(inst: LtsInstance, x) -> np.ndarray:
    """A^T w with w = residual on a top-q squared-residual set, zero elsewhere."""
    r = inst.A @ np.asarray(x, dtype=float) - inst.b
    idx = top_k_indices(r * r, inst.q)
    w = np.zeros_like(r)
    w[idx] = r[idx]
    return inst.A.T @ w


def eval_relu(inst: ReluInstance, x) -> float:
    return inst.outer(inst.A @ np.asarray(x, dtype=float))


def relu_dc_parts(inst: ReluInstance, x) -> tuple[float, float]:
    """Values (f(x), g(x)) of the split h = f - g used by the certifier."""
    p = np.maximum(inst.A @ np.asarray(x, dtype=float), 0.0)
    f = 0.5 * float(p @ p) + float(inst.alpha @ p) + 0.5 * float(inst.b @ inst.b)
    g = float(inst.beta @ p)
    # b = beta - alpha; the constant 0.5||b||^2 sits in f so that h = f - g exactly
    return f, g


# --- generators ---------------------------------------------------------------

def _design(rng: np.random.Generator, m: int, n: int, scaling: str) -> np.ndarray:
    A = rng.standard_normal((m, n))
    if scaling == "standard":
        return A
    if scaling == "normalized":
        return A / math.sqrt(m)
    raise ValueError(f"unknown design scaling {scaling!r}")


def generate_trimmed_lasso(m: int, n: int, k: int, noise_std: float,
                           rng: np.random.Generator, lam: float = 1.0,
                           design: str = "standard", seed: int | None = None
                           ) -> TrimmedLassoInstance:
    A = _design(rng, m, n, design)
    support = np.sort(rng.choice(n, size=k, replace=False))
    x_star = np.zeros(n)
    x_star[support] = rng.choice([-1.0, 1.0], size=k)
    b = A @ x_star + noise_std * rng.standard_normal(m)
    meta = {"noise_std": noise_std, "design": design,
            "support": support.tolist(), "x_star": x_star.tolist()}
    return TrimmedLassoInstance(A, b, lam=lam, k=k, seed=seed, meta=meta)


def generate_lts(m: int, n: int, q: int, outlier_std: float,
                 rng: np.random.Generator, clean_std: float = 4.0,
                 seed: int | None = None) -> LtsInstance:
    A = rng.standard_normal((m, n))
    x_star = rng.standard_normal(n)
    clean = A @ x_star
    b = clean + clean_std * rng.standard_normal(m)
    outliers = np.sort(rng.choice(m, size=q, replace=False))
    b[outliers] = clean[outliers] + outlier_std * rng.standard_normal(q)
    meta = {"clean_std": clean_std, "outlier_std": outlier_std,
            "outliers": outliers.tolist(), "x_star": x_star.tolist()}
    return LtsInstance(A, b, q=q, seed=seed, meta=meta)


def generate_relu(m: int, n: int, q_param: float, rho_b: float,
                  rng: np.random.Generator, noise_std: float = 0.1,
                  corruption: str = "mirror", design: str = "standard",
                  seed: int | None = None) -> ReluInstance:
    """Teacher-student ReLU regression with a corrupted fraction of labels.

    Clean targets are relu(a_i'x*) + noise with x* ~ N(0, I). A uniformly
    chosen ceil(q_param * m) subset of rows is corrupted:

    - ``"mirror"``: b_i = rho_b |a_i'x* + noise|, a positive label that
      contradicts the teacher wherever it is inactive;
    - ``"negate"``: b_i = -|b_i|, after which all of b is scaled by rho_b.
    """
    if corruption not in ("mirror", "negate"):
        raise ValueError(f"unknown corruption {corruption!r}")
    if not 0.0 <= q_param <= 1.0:
        raise ValueError(f"q_param must lie in [0, 1], got {q_param}")
    A = _design(rng, m, n, design)
    x_star = rng.standard_normal(n)
    u = A @ x_star
    b = np.maximum(u, 0.0) + noise_std * rng.standard_normal(m)
    n_bad = int(math.ceil(q_param * m))
    bad = np.sort(rng.choice(m, size=n_bad, replace=False))
    if corruption == "mirror":
        b[bad] = rho_b * np.abs(u[bad] + noise_std * rng.standard_normal(n_bad))
    else:
        b[bad] = -np.abs(b[bad])
        b *= rho_b
    meta = {"q_param": q_param, "rho_b": rho_b, "noise_std": noise_std,
            "corruption": corruption, "design": design,
            "corrupted_rows": bad.tolist(), "x_star": x_star.tolist()}
    return ReluInstance(A, b, seed=seed, meta=meta)


# --- serialization ------------------------------------------------------------

_FAMILIES = {
    "trimmed_lasso": TrimmedLassoInstance,
    "lts": LtsInstance,
    "relu": ReluInstance,
}


def instance_to_dict(inst) -> dict:
    return {
        "type": inst.family,
        "m": inst.m,
        "n": inst.n,
        "params": {**inst.params(), "generator": inst.meta},
        "seed": inst.seed,
        "A": inst.A.tolist(),
        "b": inst.b.tolist(),
    }


def instance_from_dict(d: dict):
    try:
        cls = _FAMILIES[d["type"]]
    except KeyError:
        raise ValueError(f"unknown instance type {d.get('type')!r}") from None
    params = dict(d.get("params", {}))
    meta = params.pop("generator", {})
    A = np.asarray(d["A"], dtype=float).reshape(d["m"], d["n"])
    return cls(A, np.asarray(d["b"], dtype=float), **params, seed=d.get("seed"), meta=meta)


def save_instance(inst, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh)


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
