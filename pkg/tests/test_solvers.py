import numpy as np
import pytest

from varreg import (
    SolverConfig,
    SolverError,
    identity_map,
    is_subgradient,
    l1,
    make_dense,
    make_random_dense,
    quadratic,
    solve_fista,
    solve_primal_dual,
    solve_tikhonov_exact,
    solve_variational,
    substream,
    symmetric_bregman,
    tv_aniso,
)
from varreg.regularizers import Regularizer
from varreg.solvers import accelerated_projected_gradient, perturbed_start

TIGHT = SolverConfig(tol=1e-12, max_iters=200_000)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(step_safety=1.5)


def test_tikhonov_matches_normal_equations():
    rng = substream(0, "tik")
    a = rng.standard_normal((10, 6))
    v = rng.standard_normal(10)
    alpha = 0.3
    sol = solve_tikhonov_exact(make_dense(a), v, alpha, TIGHT)
    oracle = np.linalg.solve(a.T @ a + alpha * np.eye(6), a.T @ v)
    np.testing.assert_allclose(sol.u_alpha, oracle, atol=1e-8)
    res = a @ sol.u_alpha - v
    assert abs(sol.data_residual - 0.5 * res @ res) <= 1e-12
    assert abs(sol.J_value - 0.5 * sol.u_alpha @ sol.u_alpha) <= 1e-12
    np.testing.assert_array_equal(sol.p_alpha.p, sol.u_alpha)


def test_tikhonov_validates_alpha_and_budget():
    op = make_dense(np.diag([1.0, 0.01]))
    with pytest.raises(ValueError, match="alpha"):
        solve_tikhonov_exact(op, [1.0, 1.0], 0.0)
    with pytest.raises(SolverError):
        solve_tikhonov_exact(op, [1.0, 1.0], 1e-6, SolverConfig(max_iters=1, tol=1e-14))


def test_tikhonov_warm_start_at_solution():
    op = identity_map(3)
    v = np.array([1.0, 2.0, 3.0])
    exact = v / 1.5  # (I + 0.5 I)^{-1} v
    sol = solve_tikhonov_exact(op, v, 0.5, TIGHT, u0=exact)
    assert sol.iterations == 0
    np.testing.assert_allclose(sol.u_alpha, exact, atol=1e-12)


def test_fista_soft_threshold_exact():
    # F = I: the lasso minimizer is the soft threshold of the data
    op = identity_map(4)
    v = np.array([1.0, -0.2, 0.4, 0.0])
    alpha = 0.3
    sol = solve_fista(op, v, alpha, l1(), SolverConfig(tol=1e-10))
    np.testing.assert_allclose(sol.u_alpha, [0.7, 0.0, 0.1, 0.0], atol=1e-8)
    assert is_subgradient(l1(), sol.u_alpha, sol.p_alpha, tol=1e-6).ok


def test_fista_quadratic_matches_exact_solver():
    rng = substream(1, "fista")
    a = rng.standard_normal((8, 5))
    v = rng.standard_normal(8)
    f = solve_fista(make_dense(a), v, 0.2, quadratic(), SolverConfig(tol=1e-10))
    t = solve_tikhonov_exact(make_dense(a), v, 0.2, TIGHT)
    np.testing.assert_allclose(f.u_alpha, t.u_alpha, atol=1e-7)


def test_fista_zero_data_stops_immediately():
    sol = solve_fista(identity_map(5), np.zeros(5), 0.5, l1())
    np.testing.assert_array_equal(sol.u_alpha, np.zeros(5))
    assert sol.iterations <= 2


def test_fista_rejects_tv():
    with pytest.raises(ValueError, match="quadratic and l1"):
        solve_fista(identity_map(4), np.ones(4), 0.1, tv_aniso(4))


def test_primal_dual_constant_data():
    # constant data is TV-free, so the minimizer is the data itself
    op = identity_map(5)
    v = np.full(5, 2.0)
    sol = solve_primal_dual(op, v, 0.3, tv_aniso(5), SolverConfig(tol=1e-10))
    np.testing.assert_allclose(sol.u_alpha, v, atol=1e-8)
    assert sol.J_value <= 1e-8


def test_primal_dual_step_profile():
    # denoising a step: interior levels shrink toward each other by alpha/2
    # on each side while the jump survives (closed form for this profile)
    op = identity_map(4)
    v = np.array([0.0, 0.0, 1.0, 1.0])
    alpha = 0.4
    sol = solve_primal_dual(op, v, alpha, tv_aniso(4), SolverConfig(tol=1e-10))
    np.testing.assert_allclose(sol.u_alpha, [0.2, 0.2, 0.8, 0.8], atol=1e-7)
    assert abs(sol.J_value - (1.0 - alpha)) <= 1e-7
    assert is_subgradient(tv_aniso(4), sol.u_alpha, sol.p_alpha, tol=1e-6).ok


def test_primal_dual_objective_not_beaten_by_grid():
    # coarse brute force over piecewise levels cannot beat the solver
    op = identity_map(4)
    v = np.array([0.0, 0.0, 1.0, 1.0])
    alpha, reg = 0.4, tv_aniso(4)
    sol = solve_primal_dual(op, v, alpha, reg, SolverConfig(tol=1e-10))

    def objective(u):
        r = u - v
        return 0.5 * r @ r + alpha * reg.value(u)

    best = objective(sol.u_alpha)
    grid = np.linspace(-0.5, 1.5, 41)
    for a in grid:
        for b in grid:
            cand = np.array([a, a, b, b])
            assert objective(cand) >= best - 1e-9


def test_primal_dual_large_alpha_clamps_to_mean():
    op = identity_map(4)
    v = np.array([0.0, 0.0, 1.0, 1.0])
    sol = solve_primal_dual(op, v, 1.2, tv_aniso(4), SolverConfig(tol=1e-10))
    np.testing.assert_allclose(sol.u_alpha, np.full(4, 0.5), atol=1e-7)


def test_primal_dual_validation_and_budget():
    with pytest.raises(ValueError, match="tv_aniso"):
        solve_primal_dual(identity_map(4), np.ones(4), 0.1, l1())
    with pytest.raises(ValueError, match="shape"):
        solve_primal_dual(identity_map(4), np.ones(4), 0.1, tv_aniso(5))
    with pytest.raises(SolverError):
        solve_primal_dual(
            identity_map(4), [0.0, 0.0, 1.0, 1.0], 0.4, tv_aniso(4),
            SolverConfig(max_iters=2, tol=1e-14),
        )


def test_dispatcher_routes_by_kind():
    op = identity_map(4)
    v = np.array([1.0, 0.5, -0.2, 0.0])
    assert solve_variational(op, v, 0.3, quadratic()).J_value == pytest.approx(
        solve_tikhonov_exact(op, v, 0.3).J_value
    )
    assert solve_variational(op, v, 0.3, l1()).J_value == pytest.approx(
        solve_fista(op, v, 0.3, l1()).J_value
    )
    assert solve_variational(op, v, 0.3, tv_aniso(4)).J_value == pytest.approx(
        solve_primal_dual(op, v, 0.3, tv_aniso(4)).J_value, abs=1e-8
    )
    with pytest.raises(ValueError, match="unknown regularizer"):
        solve_variational(op, v, 0.3, Regularizer(kind="huber"))


@pytest.mark.parametrize("kind", ["quadratic", "l1", "tv"])
def test_solution_certificates(kind):
    # defect target and subgradient membership on seeded random instances
    cfg = SolverConfig(tol=1e-9)
    rng = substream(2, f"cert-{kind}")
    reg = {"quadratic": quadratic(), "l1": l1(), "tv": tv_aniso(10)}[kind]
    for trial in range(25):
        op = make_random_dense(14, 10, seed=1000 + trial)
        v = rng.standard_normal(14)
        alpha = float(rng.uniform(0.05, 0.5))
        sol = solve_variational(op, v, alpha, reg, cfg)
        target = cfg.tol * (1.0 + np.linalg.norm(op.adjoint(v)))
        assert sol.optimality_defect <= target
        assert is_subgradient(reg, sol.u_alpha, sol.p_alpha, tol=1e-6).ok
        res = op.apply(sol.u_alpha) - v
        assert abs(sol.data_residual - 0.5 * res @ res) <= 1e-10 * (1.0 + sol.data_residual)
        assert abs(sol.J_value - reg.value(sol.u_alpha)) <= 1e-10 * (1.0 + sol.J_value)


def test_output_uniqueness_degenerate_l1():
    # F = [1, 1] has a segment of minimizers; the output Fu and the symmetric
    # Bregman distance must still agree across starts
    op = make_dense(np.array([[1.0, 1.0]]))
    v = np.array([2.0])
    cfg = SolverConfig(tol=1e-10)
    s1 = solve_fista(op, v, 0.1, l1(), cfg)
    s2 = solve_fista(op, v, 0.1, l1(), cfg, u0=perturbed_start(2, seed=9, scale=0.5))
    tol = cfg.tol * (1.0 + np.linalg.norm(op.adjoint(v)))
    assert np.linalg.norm(op.apply(s1.u_alpha) - op.apply(s2.u_alpha)) <= 10 * tol
    d = symmetric_bregman(l1(), s1.u_alpha, s2.u_alpha, s1.p_alpha, s2.p_alpha,
                          membership_tol=1e-6)
    assert d <= 10 * tol


def test_output_uniqueness_degenerate_tv():
    # F u = u_0 - u_2 ignores constants and the middle level, leaving a
    # multi-dimensional minimizer set
    op = make_dense(np.array([[1.0, 0.0, -1.0]]))
    v = np.array([2.0])
    cfg = SolverConfig(tol=1e-10)
    reg = tv_aniso(3)
    s1 = solve_primal_dual(op, v, 0.1, reg, cfg)
    s2 = solve_primal_dual(op, v, 0.1, reg, cfg, u0=perturbed_start(3, seed=4, scale=0.5))
    tol = cfg.tol * (1.0 + np.linalg.norm(op.adjoint(v)))
    assert np.linalg.norm(op.apply(s1.u_alpha) - op.apply(s2.u_alpha)) <= 10 * tol
    d = symmetric_bregman(reg, s1.u_alpha, s2.u_alpha, s1.p_alpha, s2.p_alpha,
                          membership_tol=1e-6)
    assert d <= 10 * tol


@pytest.mark.parametrize("kind", ["quadratic", "l1", "tv"])
def test_stability_estimate_sampled(kind):
    # 0.5*||F(u - u~)||^2 + alpha*d_sym <= 0.5*||v - v~||^2 on random pairs
    cfg = SolverConfig(tol=1e-10)
    rng = substream(3, f"stab-{kind}")
    reg = {"quadratic": quadratic(), "l1": l1(), "tv": tv_aniso(8)}[kind]
    for trial in range(25):
        op = make_random_dense(12, 8, seed=2000 + trial)
        v = rng.standard_normal(12)
        v_t = v + 0.3 * rng.standard_normal(12)
        alpha = float(rng.uniform(0.05, 0.5))
        s = solve_variational(op, v, alpha, reg, cfg)
        s_t = solve_variational(op, v_t, alpha, reg, cfg)
        d = symmetric_bregman(reg, s_t.u_alpha, s.u_alpha, s_t.p_alpha, s.p_alpha,
                              membership_tol=1e-5)
        out = op.apply(s.u_alpha) - op.apply(s_t.u_alpha)
        lhs = 0.5 * out @ out + alpha * d
        rhs = 0.5 * np.dot(v - v_t, v - v_t)
        assert lhs <= rhs + 10 * cfg.tol * (1.0 + rhs)


def test_accelerated_projected_gradient_box():
    c = np.array([2.0, -1.0, 0.5, 0.3])
    x, mapping, iters = accelerated_projected_gradient(
        grad_fn=lambda x: x - c,
        project=lambda x: np.clip(x, 0.0, 1.0),
        lip=1.0,
        x0=np.zeros(4),
        tol=1e-12,
    )
    np.testing.assert_allclose(x, [1.0, 0.0, 0.5, 0.3], atol=1e-10)
    assert mapping <= 1e-12
    assert iters < 100


def test_perturbed_start_is_deterministic():
    a = perturbed_start(6, seed=3)
    b = perturbed_start(6, seed=3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, perturbed_start(6, seed=4))
    np.testing.assert_allclose(perturbed_start(6, seed=3, scale=0.2), 2.0 * a)
