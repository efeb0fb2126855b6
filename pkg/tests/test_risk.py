import numpy as np
import pytest

from varreg import (
    SolverConfig,
    SubgradientError,
    build_risk_pair,
    check_operator_error_estimate,
    check_risk_theorem,
    construct_source_instance,
    draw_design,
    empirical_risk,
    error_decomposition,
    full_design,
    generalization_error,
    l1,
    make_random_dense,
    make_sampled,
    operator_generalization_gap,
    population_risk,
    quadratic,
    solve_variational,
    substream,
)

CFG = SolverConfig(tol=1e-11, max_iters=100_000)


def _pair(base, theta, n=40, sigma=0.1, seed=0):
    return build_risk_pair(base, theta, draw_design(base.out_dim, n, sigma, seed))


def test_build_risk_pair_data_construction():
    rng = substream(0, "pair")
    base = make_random_dense(20, 6, seed=1)
    theta = rng.standard_normal(6)
    design = draw_design(20, 15, noise_sigma=0.2, seed=3)
    pair = build_risk_pair(base, theta, design)
    np.testing.assert_array_equal(pair.v_pop, pair.population_map.apply(theta))
    np.testing.assert_array_equal(
        pair.v_emp,
        pair.empirical_map.apply(theta) + np.sqrt(design.weights) * design.noise,
    )
    # population rows carry the uniform quadrature weight 1/m
    u = rng.standard_normal(6)
    lhs = np.dot(pair.population_map.apply(u), pair.population_map.apply(u))
    rhs = np.dot(base.apply(u), base.apply(u)) / base.out_dim
    assert abs(lhs - rhs) <= 1e-12 * (1.0 + rhs)


def test_risk_values_at_truth():
    rng = substream(1, "risk")
    base = make_random_dense(25, 5, seed=2)
    theta = rng.standard_normal(5)
    pair = _pair(base, theta, n=30, sigma=0.5, seed=7)
    assert population_risk(pair, theta) == pytest.approx(0.5 * 0.5**2, abs=1e-15)
    w_noise = np.sqrt(pair.design.weights) * pair.design.noise
    assert empirical_risk(pair, theta) == pytest.approx(0.5 * w_noise @ w_noise, abs=1e-15)


def test_empirical_risk_is_unbiased_over_designs():
    rng = substream(2, "risk")
    base = make_random_dense(30, 6, seed=3)
    theta_star = rng.standard_normal(6)
    theta = theta_star + rng.standard_normal(6)
    sigma = 1.0
    vals = []
    for seed in range(200):
        pair = _pair(base, theta_star, n=25, sigma=sigma, seed=seed)
        vals.append(empirical_risk(pair, theta))
    vals = np.asarray(vals)
    target = population_risk(_pair(base, theta_star, seed=0, sigma=sigma), theta)
    stderr = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - target) <= 3.0 * stderr


def test_generalization_error_on_full_grid():
    # sampling the full grid with no noise removes every stochastic term, so
    # the generalization error is exactly the noise floor sigma^2/2 = 0
    rng = substream(3, "risk")
    base = make_random_dense(12, 4, seed=4)
    theta_star = rng.standard_normal(4)
    pair = build_risk_pair(base, theta_star, full_design(base.out_dim))
    for _ in range(5):
        theta = rng.standard_normal(4)
        assert abs(generalization_error(pair, theta)) <= 1e-14
        assert abs(operator_generalization_gap(pair, theta)) <= 1e-14


def test_error_decomposition_identity():
    rng = substream(4, "decomp")
    base = make_random_dense(18, 5, seed=5)
    for trial in range(100):
        theta_star = rng.standard_normal(5)
        theta = rng.standard_normal(5)
        pair = _pair(base, theta_star, n=12, sigma=0.3, seed=trial)
        dec = error_decomposition(pair, theta)
        assert dec.identity_defect <= 1e-10 * (1.0 + abs(dec.risk_gap))
        assert dec.total == pytest.approx(
            dec.generalization + dec.approximation + dec.sampling, abs=1e-15
        )
    at_truth = error_decomposition(pair, theta_star)
    assert at_truth.approximation == 0.0
    assert abs(at_truth.risk_gap) <= 1e-15


def test_error_decomposition_accepts_reference_risks():
    rng = substream(5, "decomp")
    base = make_random_dense(14, 4, seed=6)
    theta_star = rng.standard_normal(4)
    theta = rng.standard_normal(4)
    other = rng.standard_normal(4)  # a different reference predictor
    pair = _pair(base, theta_star, seed=9)
    dec = error_decomposition(
        pair, theta,
        f_star_risk_pop=population_risk(pair, other),
        f_star_risk_emp=empirical_risk(pair, other),
    )
    assert dec.risk_gap == pytest.approx(
        population_risk(pair, theta) - population_risk(pair, other), abs=1e-15
    )
    assert dec.identity_defect <= 1e-12


@pytest.mark.parametrize("kind", ["quadratic", "l1"])
def test_operator_error_estimate_holds(kind):
    reg = quadratic() if kind == "quadratic" else l1()
    base = make_random_dense(40, 10, seed=7)
    pop = make_sampled(base, full_design(base.out_dim))
    inst = construct_source_instance(pop, reg, seed=1)
    for seed in range(10):
        design = draw_design(base.out_dim, 30, noise_sigma=0.05 if seed % 2 else 0.0,
                             seed=100 + seed)
        pair = build_risk_pair(base, inst.u_star, design)
        rep = check_operator_error_estimate(pair, reg, inst, 0.1, CFG)
        assert rep.holds
        if rep.components["noise_energy"] <= 1e-24:
            assert rep.components["corollary_holds"]
        else:
            assert "corollary_rhs" not in rep.components


def test_operator_error_estimate_full_grid_reduction():
    # no sampling: the operator gap vanishes and the bound reduces to the
    # plain consistent-data error estimate
    base = make_random_dense(24, 8, seed=8)
    pop = make_sampled(base, full_design(base.out_dim))
    inst = construct_source_instance(pop, quadratic(), seed=2)
    pair = build_risk_pair(base, inst.u_star, full_design(base.out_dim))
    rep = check_operator_error_estimate(pair, quadratic(), inst, 0.1, CFG)
    assert rep.holds
    assert abs(rep.components["half_operator_gap"]) <= 1e-13
    assert rep.components["noise_energy"] <= 1e-24
    assert rep.components["corollary_holds"]


def test_operator_error_estimate_validates_instance():
    base = make_random_dense(20, 6, seed=9)
    pop = make_sampled(base, full_design(base.out_dim))
    inst = construct_source_instance(pop, quadratic(), seed=3)
    pair = build_risk_pair(base, inst.u_star, draw_design(20, 10, 0.0, seed=1))
    other = construct_source_instance(pop, quadratic(), seed=4)
    with pytest.raises(ValueError, match="disagree on theta"):
        check_operator_error_estimate(pair, quadratic(), other, 0.1, CFG)
    # certificate computed against the raw base operator, not the weighted map
    bad = construct_source_instance(base, quadratic(), seed=3)
    pair_bad = build_risk_pair(base, bad.u_star, draw_design(20, 10, 0.0, seed=1))
    with pytest.raises(ValueError, match="population map"):
        check_operator_error_estimate(pair_bad, quadratic(), bad, 0.1, CFG)
    with pytest.raises(ValueError, match="alpha"):
        check_operator_error_estimate(pair, quadratic(), inst, 0.0, CFG)


@pytest.mark.parametrize("kind", ["quadratic", "l1"])
def test_risk_theorem_holds_with_breakdown(kind):
    reg = quadratic() if kind == "quadratic" else l1()
    base = make_random_dense(40, 10, seed=10)
    pop = make_sampled(base, full_design(base.out_dim))
    inst = construct_source_instance(pop, reg, seed=5)
    for seed in range(10):
        design = draw_design(base.out_dim, 30, noise_sigma=0.05, seed=200 + seed)
        pair = build_risk_pair(base, inst.u_star, design)
        rep = check_risk_theorem(pair, reg, inst.u_star, inst.z_star, 0.1, CFG)
        assert rep.holds
        c = rep.components
        assert rep.rhs == pytest.approx(
            c["risk_gap"] + c["alpha_sq_source_sq"] + c["noise_energy"], abs=1e-13
        )
        assert c["risk_gap"] == pytest.approx(
            c["population_risk"] - c["empirical_risk"], abs=1e-13
        )
        # R - Rhat exceeds half the operator gap by exactly the noise floor
        assert c["risk_gap"] - c["half_operator_gap"] == pytest.approx(
            0.5 * pair.noise_sigma**2, abs=1e-12
        )


def test_risk_theorem_dominates_operator_bound():
    # rhs of the risk form exceeds the operator form by sigma^2/2 >= 0
    base = make_random_dense(30, 8, seed=11)
    pop = make_sampled(base, full_design(base.out_dim))
    inst = construct_source_instance(pop, quadratic(), seed=6)
    design = draw_design(base.out_dim, 20, noise_sigma=0.1, seed=42)
    pair = build_risk_pair(base, inst.u_star, design)
    sol = solve_variational(pair.empirical_map, pair.v_emp, 0.2, quadratic(), CFG)
    a = check_operator_error_estimate(pair, quadratic(), inst, 0.2, CFG, solution=sol)
    b = check_risk_theorem(pair, quadratic(), inst.u_star, inst.z_star, 0.2, CFG, solution=sol)
    assert a.lhs == pytest.approx(b.lhs, abs=1e-14)
    assert b.rhs - a.rhs == pytest.approx(0.5 * pair.noise_sigma**2, abs=1e-12)


def test_risk_theorem_rejects_invalid_source():
    base = make_random_dense(20, 6, seed=12)
    rng = substream(6, "gate")
    theta = rng.standard_normal(6)
    pair = build_risk_pair(base, theta, draw_design(20, 10, 0.0, seed=2))
    bad_z = rng.standard_normal(20)
    with pytest.raises(SubgradientError, match="not a subgradient"):
        check_risk_theorem(pair, l1(), theta, bad_z, 0.1, CFG)
