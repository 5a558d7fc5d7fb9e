import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import repopt.oracles as oracles
from repopt.oracles import (DcaConfig, DcaOracle, ProxLinearConfig, ProxLinearOracle,
                            l1_optimality_residual, lasso_apg, soft_threshold)
from repopt.problems import (LtsInstance, ReluInstance, TrimmedLassoInstance, generate_lts,
                             generate_relu, generate_trimmed_lasso)


def lasso_obj(Q, c, lam, z):
    return 0.5 * z @ Q @ z - c @ z + lam * np.abs(z).sum()


# --- inner lasso solver ---------------------------------------------------------

def test_apg_identity_design_is_soft_threshold():
    rng = np.random.default_rng(0)
    c = rng.standard_normal(30) * 3
    z, _ = lasso_apg(np.eye(30), c, 1.0, 1.0, np.zeros(30))
    np.testing.assert_allclose(z, soft_threshold(c, 1.0), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_apg_matches_long_reference(seed):
    rng = np.random.default_rng(seed)
    A, b = rng.standard_normal((10, 20)), rng.standard_normal(10)
    Q, c = A.T @ A, A.T @ b
    L = np.linalg.norm(A, 2) ** 2
    z, _ = lasso_apg(Q, c, 0.5, L, np.zeros(20), tol=1e-8, max_iter=2000)
    ref, _ = lasso_apg(Q, c, 0.5, L, np.zeros(20), tol=1e-300, max_iter=10_000)
    f, fr = lasso_obj(Q, c, 0.5, z), lasso_obj(Q, c, 0.5, ref)
    assert abs(f - fr) <= 1e-6 * max(1.0, abs(fr))
    assert l1_optimality_residual(Q @ z - c, z, 0.5) <= 1e-8


def test_apg_returns_optimal_start_untouched():
    z0 = soft_threshold(np.array([3.0, 0.2, -2.0]), 1.0)
    z, it = lasso_apg(np.eye(3), np.array([3.0, 0.2, -2.0]), 1.0, 1.0, z0)
    assert it == 0 and np.array_equal(z, z0)


# --- DCA -----------------------------------------------------------------------

def test_dca_lts_identity_examples():
    b = np.array([1.0, -4.0, 2.5])
    inst = LtsInstance(np.eye(3), b, 1)
    np.testing.assert_allclose(DcaOracle(inst).propose(b.copy()), b)     # r = 0 => g = 0
    inst0 = LtsInstance(np.eye(3), np.zeros(3), 1)
    x = np.array([0.5, -3.0, 1.0])
    # g = A^T w keeps the largest squared residual only; the solve returns g
    np.testing.assert_allclose(DcaOracle(inst0).propose(x), [0.0, -3.0, 0.0])


def test_dca_trimmed_lasso_identity_is_soft_threshold():
    b = np.array([3.0, -0.5, 1.5, -2.0])
    inst = TrimmedLassoInstance(np.eye(4), b, 1.0, 2)
    z = DcaOracle(inst).propose(np.zeros(4))        # g = 0 at the origin
    np.testing.assert_allclose(z, soft_threshold(b, 1.0), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_dca_descent_strongly_convex(seed):
    rng = np.random.default_rng(seed)
    mu = 0.5
    base = generate_trimmed_lasso(15, 25, 3, 0.1, rng, design="normalized")
    inst = TrimmedLassoInstance(base.A, base.b, base.lam, base.k, mu=mu)
    oracle = DcaOracle(inst)
    x = rng.standard_normal(25)
    for _ in range(30):
        z = oracle.propose(x)
        # (mu1 + mu2)/2 ||x - z||^2 with mu1 = mu2 = mu
        assert inst(x) - inst(z) >= mu * np.sum((x - z) ** 2) - 1e-7
        x = z


def test_dca_descent_lts():
    inst = generate_lts(40, 5, 4, 10.0, np.random.default_rng(3))
    oracle = DcaOracle(inst)
    x = np.zeros(5)
    for _ in range(20):
        z = oracle.propose(x)
        assert inst(z) <= inst(x) + 1e-9 * abs(inst(x))
        x = z


def test_dca_guard_falls_back_to_x(monkeypatch):
    inst = generate_trimmed_lasso(6, 8, 2, 0.1, np.random.default_rng(1))
    monkeypatch.setattr(oracles, "lasso_apg", lambda *a, **k: (np.full(8, 50.0), 1))
    x = np.ones(8)
    assert np.array_equal(DcaOracle(inst).propose(x), x)
    monkeypatch.setattr(oracles, "lasso_apg", lambda *a, **k: (np.full(8, np.nan), 1))
    assert np.array_equal(DcaOracle(inst).propose(x), x)


def test_dca_singular_normal_equations_use_ridge():
    A = np.ones((4, 2))                # rank one
    inst = LtsInstance(A, np.arange(4.0), 1)
    oracle = DcaOracle(inst)
    assert oracle.anomalies == 1
    z = oracle.propose(np.zeros(2))
    assert np.all(np.isfinite(z)) and inst(z) <= inst(np.zeros(2))


def test_oracle_family_checks():
    relu = ReluInstance(np.eye(2), np.ones(2))
    with pytest.raises(TypeError):
        DcaOracle(relu)
    with pytest.raises(TypeError):
        ProxLinearOracle(LtsInstance(np.eye(2), np.ones(2), 1))
    with pytest.raises(ValueError):
        DcaConfig(inner_tol=0.0)
    with pytest.raises(ValueError):
        ProxLinearConfig(rho_prox=0.0)
    with pytest.raises(ValueError):
        ProxLinearConfig(inner_solver="newton")


# --- prox-linear -------------------------------------------------------------------

def test_prox_linear_fixed_point_when_fit_is_exact():
    rng = np.random.default_rng(4)
    A = np.abs(rng.standard_normal((8, 3))) + 0.1
    x = np.array([1.0, 0.5, 2.0])
    inst = ReluInstance(A, A @ x)              # all rows active, zero residual
    np.testing.assert_array_equal(ProxLinearOracle(inst).propose(x), x)


@pytest.mark.parametrize("solver", ["active_set", "gradient"])
def test_prox_linear_one_dim_against_grid(solver):
    inst = ReluInstance(np.array([[1.0]]), np.array([1.0]))
    cfg = ProxLinearConfig(inner_solver=solver, inner_max_iter=2000, inner_tol=1e-12)
    oracle = ProxLinearOracle(inst, cfg)
    x = np.array([2.0])
    z = oracle.propose(x)
    grid = np.linspace(-5, 5, 10_001)
    vals = np.array([oracle.model(np.array([g]), x) for g in grid])
    g_best = grid[np.argmin(vals)]
    assert abs(z[0] - g_best) <= 1e-3 + 1e-9
    assert oracle.model(z, x) <= vals.min() + 1e-12
    assert inst(z) <= inst(x)


@pytest.mark.parametrize("solver", ["active_set", "gradient"])
@given(seed=st.integers(0, 2**31))
@settings(max_examples=15, deadline=None)
def test_prox_linear_model_and_quadratic_descent(solver, seed):
    rng = np.random.default_rng(seed)
    inst = generate_relu(20, 4, 0.3, 2.0, rng)
    oracle = ProxLinearOracle(inst, ProxLinearConfig(inner_solver=solver))
    rho = oracle.cfg.rho_prox
    x = rng.standard_normal(4)
    for _ in range(10):
        z = oracle.propose(x)
        assert oracle.model_change(z, x) <= 0.0
        assert inst(x) - inst(z) >= 0.5 * rho * np.sum((z - x) ** 2) - 1e-7
        x = z


def test_model_change_agrees_with_direct_difference():
    rng = np.random.default_rng(6)
    inst = generate_relu(10, 3, 0.2, 2.0, rng)
    oracle = ProxLinearOracle(inst)
    for _ in range(50):
        x, z = rng.standard_normal(3), rng.standard_normal(3)
        direct = oracle.model(z, x) - inst(x)
        assert oracle.model_change(z, x) == pytest.approx(direct, rel=1e-9, abs=1e-10)


def test_prox_linear_reaches_certified_points():
    from repopt.diagnostics import certify_relu
    inst = generate_relu(60, 8, 0.2, 2.0, np.random.default_rng(7))
    oracle = ProxLinearOracle(inst)
    x = np.zeros(8)
    for _ in range(100):
        x = oracle.propose(x)
    assert certify_relu(inst, x).passed
