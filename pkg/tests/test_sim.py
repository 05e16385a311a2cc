import logging

import numpy as np
import pytest

from confmdp.bilevel import UpperMdp, solve_bilevel
from confmdp.core import KernelPerAction, LowerMdp, policy_evaluation_closed, random_kernel
from confmdp.scenarios import bilevel_paper, tvcmdp_paper
from confmdp.sim import (
    MODES,
    RunConfig,
    analytic_mode_values,
    budget_sweep,
    compare_modes,
    horizon_for,
    run_bilevel,
    sample_returns,
    sample_trajectory,
    sweep_csv,
    truncated_return,
)

from oracles import upper_rewards


def test_horizon_rule():
    assert horizon_for(0.95) == 90
    assert 0.95 ** 90 <= 0.01 < 0.95 ** 89
    assert horizon_for(0.0) == 1


def test_point_mass_trajectory_is_determined_by_start():
    mats = np.array([[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]])
    mdp = LowerMdp(KernelPerAction(mats), [[1.0], [2.0], [3.0]], 0.9, mu0=[0.0, 1.0, 0.0])
    traj = sample_trajectory(mdp, [0, 0, 0], 5, seed=123)
    assert [t[0] for t in traj] == [1, 2, 0, 1, 2]
    assert [t[2] for t in traj] == [2.0, 3.0, 1.0, 2.0, 3.0]
    assert all(t[3] == nxt[0] for t, nxt in zip(traj, traj[1:]))


def test_trajectories_reproducible():
    mdp = LowerMdp(random_kernel(np.random.default_rng(0), 4, 2), np.ones((4, 2)), 0.9)
    assert sample_trajectory(mdp, [0, 1, 0, 1], 50, 7) == sample_trajectory(mdp, [0, 1, 0, 1], 50, 7)
    assert sample_trajectory(mdp, [0, 1, 0, 1], 50, 7) != sample_trajectory(mdp, [0, 1, 0, 1], 50, 8)


def test_sampled_returns_within_three_standard_errors():
    rng = np.random.default_rng(1)
    mdp = LowerMdp(random_kernel(rng, 4, 2), rng.uniform(0, 1, (4, 2)), 0.9)
    pi = [1, 0, 0, 1]
    horizon = horizon_for(0.9, 1e-10)
    g = sample_returns(mdp, pi, 10_000, horizon, seed=3)
    j = float(mdp.mu0 @ policy_evaluation_closed(mdp, pi))
    se = g.std(ddof=1) / np.sqrt(len(g))
    assert abs(g.mean() - j) <= 3 * se


def test_truncated_return_matches_closed_form_limit():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(3), size=3)
    r = rng.uniform(0, 1, 3)
    mu0 = np.full(3, 1 / 3)
    exact = mu0 @ np.linalg.solve(np.eye(3) - 0.8 * p, r)
    assert truncated_return(p, r, mu0, 0.8, 400) == pytest.approx(exact, rel=1e-12)
    assert truncated_return(p, r, mu0, 0.8, 1) == pytest.approx(mu0 @ r)


def test_standard_error_shrinks_at_root_rate():
    upper = bilevel_paper()
    sol = solve_bilevel(upper)
    small = run_bilevel(upper, sol, RunConfig(seed=4, episodes=100))
    large = run_bilevel(upper, sol, RunConfig(seed=4, episodes=10_000))
    assert 5.0 <= small.stderr / large.stderr <= 20.0
    assert abs(large.mean - large.analytic) <= 3 * large.stderr


def test_finance_modes_analytic_ordering():
    vals = analytic_mode_values(bilevel_paper())
    assert vals["oracle"] >= vals["optimal"] >= vals["random"]
    assert vals["optimal"] >= vals["none"]
    # the optimal-mode value is the closed-form upper evaluation averaged over a uniform start
    sol = solve_bilevel(bilevel_paper())
    assert vals["optimal"] == pytest.approx(sol.w.mean(), rel=1e-9)


def test_compare_modes_reproducible_and_consistent():
    upper = bilevel_paper()
    a = compare_modes(upper, RunConfig(seed=11, episodes=100))
    b = compare_modes(upper, RunConfig(seed=11, episodes=100))
    assert a.to_csv() == b.to_csv()
    assert [r.mode for r in a.rows] == list(MODES)
    assert a.horizon == 90 and a.upper_horizon == 90
    for row in a.rows:
        assert abs(row.mean - row.analytic) <= 3 * row.stderr


def test_csv_layout():
    rep = compare_modes(bilevel_paper(), RunConfig(seed=0, episodes=5), modes=("none", "oracle"))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "mode,mean,stderr,episodes,analytic"
    assert lines[1].startswith("none,") and lines[2].startswith("oracle,")


def _single_kernel_upper(cost, lam=0.9):
    k = random_kernel(np.random.default_rng(5), 3, 2)
    return UpperMdp((k,), np.random.default_rng(6).uniform(0, 1, (3, 2)), 0.9,
                    q=np.ones((2, 1, 1)), cost=np.full((1, 2), cost), lam=lam)


def test_degenerate_catalog_makes_modes_equal():
    vals = analytic_mode_values(_single_kernel_upper(0.0))
    assert max(vals.values()) - min(vals.values()) <= 1e-9


def test_myopic_single_episode_reduces_to_lower_return_minus_cost():
    upper = bilevel_paper().replace(lam=0.0)
    sol = solve_bilevel(upper)
    cfg = RunConfig(seed=2, episodes=4000, upper_horizon=1)
    row = run_bilevel(upper, sol, cfg)
    g = np.array([truncated_return(*_chain(upper, sol, i), upper.mu0, upper.gamma, 90)
                  for i in range(upper.m)])
    r = upper_rewards(upper.q, upper.cost, g)
    expected = r[np.arange(upper.m), sol.theta].mean()
    assert row.analytic == pytest.approx(expected, rel=1e-12)
    assert abs(row.mean - expected) <= 3 * row.stderr


def _chain(upper, sol, i):
    mdp = upper.lower(i)
    states = np.arange(mdp.n)
    pi = sol.policies[i]
    return mdp.kernel.mats[pi, states], mdp.reward[states, pi]


def test_short_horizon_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="confmdp.sim"):
        compare_modes(bilevel_paper(), RunConfig(seed=0, episodes=2, horizon=10), modes=("none",))
    assert any("horizon" in rec.message for rec in caplog.records)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(mode="bogus")
    with pytest.raises(ValueError):
        RunConfig(episodes=0)


def test_budget_sweep_small():
    scn = tvcmdp_paper()
    rows = budget_sweep(scn, [2.06, 0.5], n_random=5, seed=1)
    assert [r.budget for r in rows] == [2.06, 0.5]
    for r in rows:
        assert r.optimized >= r.baseline
        assert len(r.random_values) == 5
        assert r.total_cost <= r.budget + 1e-9
    assert rows[0].optimized >= rows[1].optimized
    text = sweep_csv(rows)
    assert text.splitlines()[0] == "budget,baseline,random_mean,random_std,optimized"
    assert len(text.splitlines()) == 3
    assert budget_sweep(scn, [2.06, 0.5], n_random=5, seed=1) == rows
