import numpy as np
import pytest
from scipy.optimize import minimize

from confmdp.core import KernelPerAction, random_kernel
from confmdp.errors import DimensionMismatch
from confmdp.scenarios import TV_BUDGETS, tvcmdp_paper
from confmdp.tvcmdp import (
    TvcScenario,
    baseline_objective,
    check_plan,
    config_cost,
    exact_objective,
    jacobian,
    lift,
    linearize,
    maximize_linear,
    optimal_policies,
    optimize_configuration,
    policy_chains,
    random_configuration,
    solve_tvcmdp,
)

from oracles import chain_return, random_zero_sum_direction


def values(p, r, gamma):
    return np.linalg.solve(np.eye(len(r)) - gamma * p, r)


def random_chain(rng, n):
    return rng.dirichlet(np.ones(n), size=n)


@pytest.mark.parametrize("seed", range(10))
def test_jacobian_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    p, r, gamma = random_chain(rng, n), rng.uniform(-1, 1, n), 0.9
    t = jacobian(p, r, gamma)
    h = 1e-5
    for _ in range(5):
        d = random_zero_sum_direction(rng, p)
        fd = (values(p + h * d, r, gamma) - values(p - h * d, r, gamma)) / (2 * h)
        an = np.einsum("ipq,pq->i", t, d)
        assert np.max(np.abs(fd - an)) <= 1e-6 * (1 + np.max(np.abs(an)))


def test_linear_model_pieces():
    rng = np.random.default_rng(1)
    p, r, mu0 = random_chain(rng, 3), rng.uniform(0, 1, 3), np.array([0.2, 0.3, 0.5])
    lin = linearize(p, r, 0.8, mu0)
    assert np.allclose(lin.m_mat, 0.8 * np.linalg.inv(np.eye(3) - 0.8 * p))
    assert np.allclose(lin.n_vec, values(p, r, 0.8))
    # A is the gradient of mu0 . V with respect to the chain
    t = jacobian(p, r, 0.8)
    assert np.allclose(lin.a_mat, np.einsum("i,ipq->pq", mu0, t))


def test_gradient_gives_first_order_change():
    rng = np.random.default_rng(2)
    p, r, mu0 = random_chain(rng, 4), rng.uniform(0, 1, 4), np.full(4, 0.25)
    lin = linearize(p, r, 0.9, mu0)
    d = random_zero_sum_direction(rng, p)
    eps = 1e-6
    delta = chain_return(p + eps * d, r, 0.9, mu0) - chain_return(p, r, 0.9, mu0)
    assert delta == pytest.approx(eps * (lin.a_mat * d).sum(), rel=1e-4)


def test_config_cost():
    assert config_cost(np.zeros((2, 2)), 3.0) == 0.0
    assert config_cost([[0.1, -0.1]], 2.0, beta=3.0) == pytest.approx(6 * np.expm1(0.2))


# -- budgeted solver -----------------------------------------------------------

def grid_optimum(a, base, alpha, budget, steps=2001):
    """Brute force for a single 2x2 chain: one free coordinate per row."""
    best = -np.inf
    slopes = a[:, 1] - a[:, 0]
    grids = [np.linspace(-base[i, 1], base[i, 0], steps) for i in range(2)]
    for t0 in grids[0]:
        c0 = 2 * np.expm1(alpha * abs(t0))
        if c0 > budget:
            continue
        t1 = grids[1]
        ok = c0 + 2 * np.expm1(alpha * np.abs(t1)) <= budget
        if ok.any():
            best = max(best, t0 * slopes[0] + (t1[ok] * slopes[1]).max())
    return best


@pytest.mark.parametrize("seed", range(8))
def test_matches_grid_search_on_two_states(seed):
    rng = np.random.default_rng(seed)
    base = random_chain(rng, 2)
    a = rng.normal(size=(2, 2))
    alpha, budget = float(rng.uniform(0.5, 5)), float(rng.uniform(0.05, 2))
    plan = maximize_linear(a[None], base[None], alpha, budget)
    assert plan.total_cost <= budget + 1e-9
    ref = grid_optimum(a, base, alpha, budget)
    assert plan.predicted_gain >= ref - 1e-6
    # the grid is fine enough that the plan cannot beat it by much either
    assert plan.predicted_gain <= ref + 2e-3 * (1 + abs(ref))


@pytest.mark.filterwarnings("ignore:Values in x were outside bounds")
@pytest.mark.parametrize("seed", range(6))
def test_not_beaten_by_generic_nlp(seed):
    rng = np.random.default_rng(100 + seed)
    K, n = 2, 3
    base = np.array([random_chain(rng, n) for _ in range(K)])
    a = rng.normal(size=(K, n, n))
    alpha, budget = 2.0, float(rng.uniform(0.2, 3))
    plan = maximize_linear(a, base, alpha, budget)
    cons = [
        {"type": "ineq", "fun": lambda x: budget - np.expm1(alpha * np.sqrt(x ** 2 + 1e-12)).sum()},
        {"type": "eq", "fun": lambda x: x.reshape(K, n, n).sum(axis=2).ravel()},
    ]
    bounds = list(zip((-base).ravel(), (1 - base).ravel()))
    res = minimize(lambda x: -(a.ravel() @ x), np.zeros(K * n * n), method="SLSQP",
                   bounds=bounds, constraints=cons, options={"maxiter": 500, "ftol": 1e-12})
    assert plan.predicted_gain >= -res.fun - 1e-5


@pytest.mark.parametrize("seed", range(6))
def test_plan_feasible_and_dual_gap_small(seed):
    rng = np.random.default_rng(200 + seed)
    K, n = 2, 4
    base = np.array([random_chain(rng, n) for _ in range(K)])
    a = rng.normal(size=(K, n, n))
    plan = maximize_linear(a, base, 3.0, 1.5)
    x = np.array(plan.xs)
    assert np.abs(x.sum(axis=2)).max() <= 1e-12
    assert (base + x).min() >= -1e-12 and (base + x).max() <= 1 + 1e-12
    assert plan.total_cost <= 1.5 + 1e-12
    assert plan.converged
    assert plan.dual_bound >= plan.predicted_gain - 1e-12
    assert (plan.dual_bound - plan.predicted_gain) <= 1e-5 * abs(plan.dual_bound)


def test_gain_nondecreasing_in_budget():
    rng = np.random.default_rng(3)
    base = np.array([random_chain(rng, 3) for _ in range(2)])
    a = rng.normal(size=(2, 3, 3))
    gains = [maximize_linear(a, base, 2.0, b).predicted_gain for b in np.linspace(0, 20, 21)]
    assert all(g2 >= g1 - 1e-9 for g1, g2 in zip(gains, gains[1:]))


def test_degenerate_budgets():
    base = np.array([[[0.5, 0.5], [0.2, 0.8]]])
    a = np.array([[[1.0, 0.0], [0.0, 2.0]]])
    zero = maximize_linear(a, base, 1.0, 0.0)
    assert np.all(zero.xs[0] == 0) and zero.predicted_gain == 0.0
    # a huge budget reaches the unconstrained optimum: all mass on the best column
    free = maximize_linear(a, base, 1.0, 1e6)
    assert np.allclose(base[0] + free.xs[0], [[1.0, 0.0], [0.0, 1.0]])
    no_alpha = maximize_linear(a, base, 0.0, 0.1)
    assert np.allclose(no_alpha.xs[0], free.xs[0])


# -- the two-episode scenario ---------------------------------------------------

def test_published_scenario_baseline_frozen():
    scn = tvcmdp_paper()
    pols = optimal_policies(scn)
    assert [p.tolist() for p in pols] == [[0, 1, 2], [0, 1, 2]]
    assert baseline_objective(scn) == pytest.approx(709.53496978444275, rel=1e-12)


def test_second_order_law_on_published_kernels():
    scn = tvcmdp_paper()
    chains, rewards = policy_chains(scn, optimal_policies(scn))
    rng = np.random.default_rng(0)
    for k in range(scn.episodes):
        lin = linearize(chains[k], rewards[k], scn.gamma, scn.mu0)
        j0 = chain_return(chains[k], rewards[k], scn.gamma, scn.mu0)
        d = random_zero_sum_direction(rng, chains[k])
        ratios = []
        for eps in (1e-2, 1e-3, 1e-4):
            x = eps * d
            dj = chain_return(chains[k] + x, rewards[k], scn.gamma, scn.mu0) - j0
            ratios.append(abs(dj - (lin.a_mat * x).sum()) / (x ** 2).sum())
        assert max(ratios) / min(ratios) <= 4.0


def test_solve_tvcmdp_feasible_and_monotone():
    scn = tvcmdp_paper()
    res = solve_tvcmdp(scn, rounds=3, budget=5.17)
    assert check_plan(scn, res.policies, res.plan.xs, 5.17) == []
    assert all(b >= a - 1e-9 for a, b in zip(res.history, res.history[1:]))
    assert res.objective == pytest.approx(exact_objective(scn, res.policies, res.plan.xs), rel=1e-12)
    assert res.objective > baseline_objective(scn)


def test_warm_start_never_hurts():
    scn = tvcmdp_paper()
    small = solve_tvcmdp(scn, budget=2.06)
    cold = solve_tvcmdp(scn, budget=3.61)
    warm = solve_tvcmdp(scn, budget=3.61, warm_start=small)
    assert warm.objective >= small.objective - 1e-9
    assert warm.objective >= cold.objective - 1e-3 * abs(cold.objective)


def test_optimize_configuration_uses_unconfigured_chains():
    scn = tvcmdp_paper()
    pols = optimal_policies(scn)
    plan = optimize_configuration(scn, pols, budget=1.0)
    assert check_plan(scn, pols, plan.xs, 1.0) == []
    assert plan.predicted_gain > 0


def test_random_configuration_spends_budget():
    scn = tvcmdp_paper()
    pols = optimal_policies(scn)
    rng = np.random.default_rng(4)
    for budget in (0.5, 5.17, 14.0):
        xs = random_configuration(scn, pols, budget, rng)
        assert check_plan(scn, pols, xs, budget) == []
        assert sum(config_cost(x, scn.cost_alpha) for x in xs) == pytest.approx(budget, rel=1e-9)


def test_check_plan_flags_violations():
    scn = tvcmdp_paper()
    pols = optimal_policies(scn)
    bad = [np.full((3, 3), 0.1), np.zeros((3, 3))]
    problems = check_plan(scn, pols, bad, 0.01)
    assert any("row sum" in p for p in problems)
    assert any("exceeds budget" in p for p in problems)


def test_lift_touches_only_policy_rows():
    rng = np.random.default_rng(5)
    ker = random_kernel(rng, 3, 2)
    pi = np.array([1, 0, 1])
    x = random_zero_sum_direction(rng, ker.mats[pi, np.arange(3)]) * 0.01
    lifted = lift(ker, pi, x)
    assert np.allclose(lifted.mats[pi, np.arange(3)], ker.mats[pi, np.arange(3)] + x)
    other = 1 - pi
    assert np.array_equal(lifted.mats[other, np.arange(3)], ker.mats[other, np.arange(3)])


def test_scenario_validation():
    k = KernelPerAction(np.stack([np.eye(2)]))
    with pytest.raises(DimensionMismatch):
        TvcScenario((k, KernelPerAction(np.stack([np.eye(3)]))), np.zeros((2, 1)), 0.5, None)
    scn = tvcmdp_paper()
    assert scn.budget_grid == TV_BUDGETS
    assert scn.with_budget(3.0).budget == 3.0


def test_scalar_chain():
    lin = linearize([[1.0]], [1.0], 0.5, [1.0])
    assert lin.m_mat.tolist() == [[1.0]] and lin.n_vec.tolist() == [2.0] and lin.a_mat.tolist() == [[2.0]]
    assert jacobian([[1.0]], [1.0], 0.5).tolist() == [[[2.0]]]


def test_linear_model_invariants():
    rng = np.random.default_rng(8)
    p, r, mu0 = random_chain(rng, 4), rng.uniform(0, 1, 4), np.full(4, 0.25)
    lin = linearize(p, r, 0.9, mu0)
    assert np.allclose((np.eye(4) - 0.9 * p) @ lin.m_mat, 0.9 * np.eye(4), atol=1e-9)
    t = jacobian(p, r, 0.9)
    # rank-one slices: t[i, p, q] / t[i, p, q'] = N_q / N_q'
    assert np.allclose(t[2, 1, 0] / t[2, 1, 3], lin.n_vec[0] / lin.n_vec[3])
    x = rng.normal(size=(4, 4))
    assert abs(np.einsum("i,ipq,pq->", mu0, t, x) - (lin.a_mat * x).sum()) <= 1e-10


def test_cost_unit_and_symmetry():
    alpha = 3.0
    x = np.zeros((2, 2))
    x[0, 1] = np.log(2) / alpha
    assert config_cost(x, alpha) == pytest.approx(1.0)
    assert config_cost(-x, alpha) == config_cost(x, alpha)


def test_two_state_toy_concentrates_on_first_row():
    a = np.array([[1.0, -1.0], [0.0, 0.0]])
    base = np.full((2, 2), 0.5)
    alpha, budget = 2.0, 1.0
    plan = maximize_linear(a[None], base[None], alpha, budget)
    x = plan.xs[0]
    assert x[0, 0] > 0 and x[0, 0] == pytest.approx(-x[0, 1])
    assert np.allclose(x[1], 0.0)
    # 1-D grid over x_00 at resolution 1e-4: spending the whole budget on row 0 is optimal
    grid = np.arange(0.0, 0.5 + 1e-12, 1e-4)
    feasible = grid[2 * np.expm1(alpha * grid) <= budget]
    best = (2 * feasible).max()
    assert plan.predicted_gain >= best - 1e-9
    assert plan.predicted_gain <= best + 2 * 2e-4


def test_zero_budget_single_round_is_baseline():
    scn = tvcmdp_paper()
    res = solve_tvcmdp(scn, rounds=1, budget=0.0)
    assert res.objective == pytest.approx(baseline_objective(scn), rel=1e-12)
    assert res.plan.total_cost == 0.0
