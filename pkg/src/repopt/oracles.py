"""Feasible descent oracles: DCA and prox-linear.

An oracle is any object with ``propose(x) -> z``. Both oracles here enforce
their own decrease guarantee after the inner solve and fall back to ``z = x``
when the inner solver did not deliver it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .problems import LtsInstance, ReluInstance, TrimmedLassoInstance

log = logging.getLogger(__name__)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def l1_optimality_residual(grad: np.ndarray, z: np.ndarray, lam: float) -> float:
    """max_i dist(-grad_i, lam * d|z_i|) for min s(z) + lam||z||_1."""
    nz = z != 0.0
    res = np.where(nz, np.abs(grad + lam * np.sign(z)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(res.max()) if res.size else 0.0


def lasso_apg(Q: np.ndarray, c: np.ndarray, lam: float, L: float, z0: np.ndarray,
              tol: float = 1e-8, max_iter: int = 2000) -> tuple[np.ndarray, int]:
    """Accelerated proximal gradient for min 0.5 z'Qz - c'z + lam||z||_1.

    Runs until the coordinatewise optimality residual is at most ``tol`` or
    ``max_iter`` iterations. Returns the last iterate and the iteration count.
    """
    step = 1.0 / L
    z = z0.copy()
    grad = Q @ z - c
    if l1_optimality_residual(grad, z, lam) <= tol:
        return z, 0
    y = z.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        gy = grad if it == 1 else Q @ y - c
        z_new = soft_threshold(y - step * gy, step * lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = z_new + ((t - 1.0) / t_new) * (z_new - z)
        z, t = z_new, t_new
        grad = Q @ z - c
        if l1_optimality_residual(grad, z, lam) <= tol:
            return z, it
    return z, max_iter


@dataclass(frozen=True)
class DcaConfig:
    inner_tol: float = 1e-8
    inner_max_iter: int = 2000

    def __post_init__(self):
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_max_iter < 1:
            raise ValueError("inner_max_iter must be >= 1")


class DcaOracle:
    """z = argmin f1(x) - <g, x> with g a subgradient of f2 at the current point."""

    def __init__(self, problem, cfg: DcaConfig | None = None):
        if not isinstance(problem, (TrimmedLassoInstance, LtsInstance)):
            raise TypeError(f"DCA oracle does not support {type(problem).__name__}")
        self.problem = problem
        self.cfg = cfg or DcaConfig()
        self.anomalies = 0
        if isinstance(problem, LtsInstance):
            self._chol = self._factor(problem.gram)

    def _factor(self, G):
        try:
            return scipy.linalg.cho_factor(G)
        except np.linalg.LinAlgError:
            log.warning("singular normal equations; using 1e-12 ridge")
            self.anomalies += 1
            return scipy.linalg.cho_factor(G + 1e-12 * np.eye(G.shape[0]))

    def subproblem_value(self, z, g) -> float:
        return self.problem.f1(z) - float(g @ z)

    def subproblem_decrease(self, x, z, Q, c) -> float:
        """phi(x) - phi(z) for phi(y) = 0.5 y'Qy - c'y (+ lam||y||_1).

        Written in terms of d = x - z so that it stays accurate when both
        values are large and nearly equal.
        """
        d = x - z
        dec = float((Q @ x - c) @ d) - 0.5 * float(d @ (Q @ d))
        if isinstance(self.problem, TrimmedLassoInstance):
            dec += self.problem.lam * float(np.abs(x).sum() - np.abs(z).sum())
        return dec

    def propose(self, x: np.ndarray) -> np.ndarray:
        p = self.problem
        g = p.f2_subgradient(x)
        c = p.Atb + g
        if isinstance(p, LtsInstance):
            Q = p.gram
            z = scipy.linalg.cho_solve(self._chol, c)
        else:
            Q = p.gram + p.mu * np.eye(p.n) if p.mu else p.gram
            z, _ = lasso_apg(Q, c, p.lam, p.lipschitz + p.mu, x,
                             self.cfg.inner_tol, self.cfg.inner_max_iter)
        if not np.all(np.isfinite(z)) or self.subproblem_decrease(x, z, Q, c) < 0.0:
            return x.copy()
        return z


@dataclass(frozen=True)
class ProxLinearConfig:
    rho_prox: float = 0.1
    inner_max_iter: int = 200
    inner_tol: float = 1e-10
    inner_solver: str = "active_set"

    def __post_init__(self):
        if not self.rho_prox > 0:
            raise ValueError("rho_prox must be positive")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_solver not in ("active_set", "gradient"):
            raise ValueError(f"unknown inner solver {self.inner_solver!r}")


def _kink_line_search(u, w, alpha, bs, r0, d, rho, K, zero_tol):
    """Exact minimization over t in [0, 1] of the convex piecewise quadratic

        sum_i [0.5 relu(u_i + t w_i)^2 + alpha_i relu(u_i + t w_i) - bs_i (u_i + t w_i)]
            + rho/2 ||r0 + t d||^2

    by walking the sorted breakpoints of its derivative. Returns the step, the
    row whose kink the minimizer sits on (or None) and whether any breakpoint
    was crossed. Rows in ``K`` are held at zero and do not move.
    """
    free = ~K
    pos = free & ((u > zero_tol) | ((np.abs(u) <= zero_tol) & (w > 0)))
    c0 = float(w[pos] @ (u[pos] + alpha[pos])) - float(w @ bs) + rho * float(d @ r0)
    c1 = float(w[pos] @ w[pos]) + rho * float(d @ d)
    if c0 >= 0.0:
        return 0.0, None, False
    cand = free & (np.abs(u) > zero_tol) & (u * w < 0.0)
    idx = np.flatnonzero(cand)
    tb = -u[idx] / w[idx]
    keep = tb <= 1.0
    idx, tb = idx[keep], tb[keep]
    crossed = False
    for j in np.argsort(tb, kind="stable"):
        t, i = tb[j], idx[j]
        if c0 + c1 * t >= 0.0:
            return -c0 / c1, None, crossed
        wi = w[i]
        if wi > 0:
            c0 += wi * (u[i] + alpha[i])
            c1 += wi * wi
        else:
            c0 -= wi * (u[i] + alpha[i])
            c1 -= wi * wi
        crossed = True
        if c0 + c1 * t >= 0.0:
            return t, (i if alpha[i] > 0 else None), crossed
    if c0 + c1 < 0.0:
        return 1.0, None, crossed
    return -c0 / c1, None, crossed


def _null_space_newton(H, AK, neg_grad):
    """min 0.5 d'Hd - neg_grad'd subject to AK d = 0, with multipliers nu of
    AK'nu = neg_grad - H d. The null-space form keeps AK d at rounding level."""
    n, p = H.shape[0], AK.shape[0]
    Qf, R = np.linalg.qr(AK.T, mode="complete")
    rank = int(np.sum(np.abs(np.diag(R[:min(n, p)])) > 1e-12 * max(1.0, np.abs(R).max())))
    Z = Qf[:, rank:]
    d = np.zeros(n)
    if Z.shape[1]:
        d = Z @ np.linalg.solve(Z.T @ H @ Z, Z.T @ neg_grad)
    nu = np.linalg.lstsq(AK.T, neg_grad - H @ d, rcond=None)[0]
    return d, nu


def _convex_model_solve(A, alpha, bs, x, rho, y, K, max_iter, tol):
    """Active-set Newton for the convex piecewise quadratic

        sum_i [0.5 relu(a_i'y)^2 + alpha_i relu(a_i'y) - bs_i a_i'y] + rho/2 ||y - x||^2.

    Rows with alpha_i > 0 have a convex kink at zero; rows in the working set
    ``K`` are held exactly on it and released when their multiplier leaves
    [0, alpha_i]. Returns (y, K, iterations).
    """
    n = A.shape[1]
    side = np.zeros(A.shape[0], dtype=int)
    lin_all = A.T @ bs
    for it in range(1, max_iter + 1):
        u = A @ y
        zero_tol = 1e-13 * max(1.0, float(np.abs(u).max()))
        at_zero = np.abs(u) <= zero_tol
        # new arrivals at a convex kink join the working set unless just released
        K |= at_zero & (alpha > 0) & (side == 0)
        P = ~K & ((u > zero_tol) | (at_zero & (side > 0)))
        AP = A[P]
        H = AP.T @ AP + rho * np.eye(n)
        # Newton increment from the piece's gradient, so rounding scales with d
        neg_grad = lin_all - AP.T @ (u[P] + alpha[P]) - rho * (y - x)
        kidx = np.flatnonzero(K)
        if kidx.size:
            d, nu = _null_space_newton(H, A[kidx], neg_grad)
            # stationarity: sum_P (...) a_i + sum_K nu_i a_i + rho(y - x) - A'bs = 0
            viol = np.maximum(-nu, nu - alpha[kidx])
            worst = int(np.argmax(viol))
            if viol[worst] > 1e-10 * max(1.0, float(alpha[kidx].max())):
                i = kidx[worst]
                K[i] = False
                side[i] = -1 if nu[worst] < 0 else 1
                continue
        else:
            d = np.linalg.solve(H, neg_grad)
        y_new = y + d
        if np.linalg.norm(d) <= tol * (1.0 + np.linalg.norm(y)):
            return y_new, K, it
        w = A @ d
        u_new = u + w
        moved = ~K & (np.abs(u) > zero_tol)
        if not np.any(moved & (np.sign(u_new) != np.sign(u))):
            # same piece: the Newton point is its exact minimizer, take it even
            # when the slope test along d is lost in rounding
            y = y_new
            continue
        t, kink_row, crossed = _kink_line_search(u, w, alpha, bs, y - x, d, rho, K, zero_tol)
        if t <= 0.0:
            return y, K, it
        y = y + t * d
        side[:] = 0
        if kink_row is not None:
            K[kink_row] = True
        if t == 1.0 and not crossed:
            return y, K, it
    return y, K, max_iter


class ProxLinearOracle:
    """Approximate minimizer of the linearized model

        m(y) = c(F(x) + F'(x)(y - x)) + rho/2 ||y - x||^2

    for the ReLU family. F(x) = Ax is affine, so the model is c(Ay) plus the
    proximal term.

    The default inner solver treats the model as a DC function: the concave
    kinks of rows with b_i > 0 are linearized and the remaining convex
    piecewise quadratic is solved by an active-set Newton method, repeated
    until the linearization stops changing. ``inner_solver="gradient"`` runs
    plain gradient descent with step 1/(||A||^2 + rho) instead.
    """

    def __init__(self, problem: ReluInstance, cfg: ProxLinearConfig | None = None):
        if not isinstance(problem, ReluInstance):
            raise TypeError(f"prox-linear oracle does not support {type(problem).__name__}")
        self.problem = problem
        self.cfg = cfg or ProxLinearConfig()
        self.step = 1.0 / (problem.lipschitz + self.cfg.rho_prox)
        self._last = None

    def model(self, y, x, Fx=None) -> float:
        p = self.problem
        Fx = p.A @ x if Fx is None else Fx
        d = y - x
        return p.outer(Fx + p.A @ d) + 0.5 * self.cfg.rho_prox * float(d @ d)

    def model_change(self, z, x, Fx=None) -> float:
        """m(z) - h(x), evaluated without cancelling two large objective values."""
        p = self.problem
        Fx = p.A @ x if Fx is None else Fx
        d = z - x
        p0 = np.maximum(Fx, 0.0)
        p1 = np.maximum(Fx + p.A @ d, 0.0)
        return 0.5 * float((p1 - p0) @ (p1 + p0 - 2.0 * p.b)) + 0.5 * self.cfg.rho_prox * float(d @ d)

    def _gradient_descent(self, x, Fx):
        p, rho = self.problem, self.cfg.rho_prox
        best, best_val = x, p.outer(Fx)
        y, u = x.copy(), Fx.copy()
        for _ in range(self.cfg.inner_max_iter):
            grad = p.A.T @ p.outer_grad(u) + rho * (y - x)
            if float(np.abs(grad).max()) <= self.cfg.inner_tol:
                break
            y = y - self.step * grad
            u = Fx + p.A @ (y - x)
            val = self.model(y, x, Fx)
            if val < best_val:
                best, best_val = y, val
        return best

    def _active_set(self, x):
        p, rho = self.problem, self.cfg.rho_prox
        y = x.copy()
        K = np.zeros(p.m, dtype=bool)
        s_prev = None
        budget = self.cfg.inner_max_iter
        while budget > 0:
            s = (p.A @ y >= 0) & (p.beta > 0)
            if s_prev is not None and np.array_equal(s, s_prev):
                break
            s_prev = s
            y, K, used = _convex_model_solve(p.A, p.alpha, p.beta * s, x, rho, y, K,
                                             budget, self.cfg.inner_tol)
            budget -= used
        return y

    def propose(self, x: np.ndarray) -> np.ndarray:
        key = x.tobytes()
        if self._last is not None and self._last[0] == key:
            return self._last[1].copy()
        Fx = self.problem.A @ x
        if self.cfg.inner_solver == "gradient":
            z = self._gradient_descent(x, Fx)
        else:
            z = self._active_set(x)
        if (not np.all(np.isfinite(z)) or not self.model_change(z, x, Fx) <= 0.0
                or np.linalg.norm(z - x) <= 1e-12 * max(1.0, float(np.linalg.norm(x)))):
            z = x.copy()
        self._last = (key, z.copy())
        return z
