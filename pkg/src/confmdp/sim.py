"""Monte-Carlo rollouts of bi-level configuration and the budget sweep.

Randomness comes from counter-based Philox streams keyed by
``(seed, purpose, episode)``. Every mode reads the same streams, so modes
that land on the same kernel see the same lower-level noise (common random
numbers), and results never depend on evaluation order.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bilevel import UpperMdp, UpperSolution, evaluate_upper_policy, solve_bilevel
from .core import LowerMdp, check_policy, collapse, solve_chain
from .tvcmdp import (
    TvcScenario,
    baseline_objective,
    exact_objective,
    optimal_policies,
    random_configuration,
    solve_tvcmdp,
)

log = logging.getLogger(__name__)

MODES = ("none", "random", "optimal", "oracle")

# stream purposes
_S0, _STEP, _UPPER, _CHOICE = 0, 1, 2, 3


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, purpose, index])))


def horizon_for(discount: float, frac: float = 0.01) -> int:
    """Smallest ``T`` with ``discount**T <= frac``."""
    if discount <= 0.0:
        return 1
    return max(1, math.ceil(math.log(frac) / math.log(discount)))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    episodes: int = 100
    horizon: int | None = None
    upper_horizon: int | None = None
    mode: str = "optimal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be positive")


def _sample_next(cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of ``cum_rows`` with uniforms ``u``."""
    idx = (u[:, None] >= cum_rows).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


def sample_trajectory(mdp: LowerMdp, pi, t_max: int, seed: int) -> list[tuple[int, int, float, int]]:
    """One trajectory of ``t_max`` ``(s, a, r, s')`` tuples from ``s_0 ~ mu0``."""
    pi = check_policy(pi, mdp.n, mdp.num_actions)
    rng = _stream(seed, _STEP)
    cum0 = np.cumsum(mdp.mu0)
    cum = np.cumsum(mdp.kernel.mats, axis=2)
    s = int(min(np.searchsorted(cum0, rng.random(), side="right"), mdp.n - 1))
    out = []
    for _ in range(t_max):
        a = int(pi[s])
        s2 = int(min(np.searchsorted(cum[a, s], rng.random(), side="right"), mdp.n - 1))
        out.append((s, a, float(mdp.reward[s, a]), s2))
        s = s2
    return out


def sample_returns(mdp: LowerMdp, pi, episodes: int, horizon: int, seed: int) -> np.ndarray:
    """Discounted returns of ``episodes`` independent truncated rollouts."""
    p_pi, r_pi = collapse(mdp, pi)
    g = _lower_rollouts(np.array([p_pi]), np.array([r_pi]), mdp.mu0, mdp.gamma, horizon,
                        np.zeros(episodes, dtype=int), seed, 0)
    return g


def _lower_rollouts(chains, rewards, mu0, gamma, horizon, kernel_idx, seed, episode):
    """Vectorised rollouts; rollout ``e`` runs on ``chains[kernel_idx[e]]``."""
    E = kernel_idx.shape[0]
    cum = np.cumsum(chains, axis=2)
    rng0 = _stream(seed, _S0, episode)
    s = _sample_next(np.broadcast_to(np.cumsum(mu0), (E, mu0.shape[0])), rng0.random(E))
    rng = _stream(seed, _STEP, episode)
    g = np.zeros(E)
    disc = 1.0
    for _ in range(horizon):
        g += disc * rewards[kernel_idx, s]
        s = _sample_next(cum[kernel_idx, s], rng.random(E))
        disc *= gamma
    return g


def truncated_return(chain, reward, mu0, gamma, horizon) -> float:
    """Exact ``E[sum_{t<T} gamma^t r_t]`` for a collapsed chain."""
    d = np.asarray(mu0, dtype=float)
    total, disc = 0.0, 1.0
    for _ in range(horizon):
        total += disc * float(d @ reward)
        d = d @ chain
        disc *= gamma
    return total


@dataclass(frozen=True)
class ModeRow:
    mode: str
    mean: float
    stderr: float
    episodes: int
    analytic: float
    analytic_infinite: float


@dataclass
class ComparisonReport:
    rows: list[ModeRow] = field(default_factory=list)
    horizon: int = 0
    upper_horizon: int = 0
    truncation_bound: float = 0.0

    def row(self, mode: str) -> ModeRow:
        for r in self.rows:
            if r.mode == mode:
                return r
        raise KeyError(mode)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "mean", "stderr", "episodes", "analytic"])
        for r in self.rows:
            w.writerow([r.mode, fmt(r.mean), fmt(r.stderr), r.episodes, fmt(r.analytic)])
        return buf.getvalue()


def fmt(x: float) -> str:
    return format(float(x), ".17g")


class _Prepared:
    """Per-kernel collapsed chains and returns shared by every mode."""

    def __init__(self, upper: UpperMdp, solution: UpperSolution, horizon: int):
        self.upper = upper
        self.solution = solution
        chains, rewards = [], []
        for i in range(upper.m):
            p_pi, r_pi = collapse(upper.lower(i), solution.policies[i])
            chains.append(p_pi)
            rewards.append(r_pi)
        self.chains = np.array(chains)
        self.rewards = np.array(rewards)
        self.g = np.array([truncated_return(c, r, upper.mu0, upper.gamma, horizon)
                           for c, r in zip(self.chains, self.rewards)])


def _mode_dynamics(upper: UpperMdp, theta, mode: str, per_kernel):
    """Upper transition matrix and expected reward vector of a configuring mode."""
    rows = np.arange(upper.m)
    if mode == "optimal":
        trans = upper.q[theta, rows]
        rho = trans @ per_kernel - upper.cost[rows, theta]
    else:
        trans = upper.q.mean(axis=0)
        rho = (upper.q @ per_kernel).mean(axis=0) - upper.cost.mean(axis=1)
    return trans, rho


def _analytic(upper: UpperMdp, theta, mode: str, per_kernel, upper_horizon: int | None) -> float:
    """Expected lambda-discounted return from a uniform initial kernel.

    ``upper_horizon=None`` gives the infinite-horizon closed form.
    """
    lam, m = upper.lam, upper.m
    if mode == "none":
        step = float(per_kernel.mean())
    elif mode == "oracle":
        step = float(per_kernel.max())
    else:
        trans, rho = _mode_dynamics(upper, theta, mode, per_kernel)
        d0 = np.full(m, 1.0 / m)
        if upper_horizon is None:
            return float(d0 @ np.linalg.solve(np.eye(m) - lam * trans, rho))
        total, d, disc = 0.0, d0, 1.0
        for _ in range(upper_horizon):
            total += disc * float(d @ rho)
            d = d @ trans
            disc *= lam
        return total
    if upper_horizon is None:
        return step / (1.0 - lam)
    return step * (1.0 - lam ** upper_horizon) / (1.0 - lam)


def _horizons(upper: UpperMdp, cfg: RunConfig) -> tuple[int, int]:
    default_t = horizon_for(upper.gamma)
    t = cfg.horizon or default_t
    if t < default_t:
        log.warning("horizon %d leaves gamma^T = %.3g > 0.01", t, upper.gamma ** t)
    k = cfg.upper_horizon or upper.episodes or horizon_for(upper.lam)
    return t, k


def _simulate(prep: _Prepared, mode: str, cfg: RunConfig, t: int, k_max: int) -> np.ndarray:
    upper = prep.upper
    E, m, B = cfg.episodes, upper.m, upper.num_b
    theta = prep.solution.theta
    best = int(np.argmax(prep.solution.j))
    cum_q = np.cumsum(upper.q, axis=2)
    p = _sample_next(np.broadcast_to(np.cumsum(np.full(m, 1.0 / m)), (E, m)),
                     _stream(cfg.seed, _UPPER, 10**9).random(E))
    total = np.zeros(E)
    disc = 1.0
    for k in range(k_max):
        u = _stream(cfg.seed, _UPPER, k).random((2, E))
        cost = np.zeros(E)
        if mode == "optimal":
            b = theta[p]
        elif mode == "random":
            b = np.minimum((u[1] * B).astype(int), B - 1)
        if mode in ("optimal", "random"):
            cost = upper.cost[p, b]
            p = _sample_next(cum_q[b, p], u[0])
            kernel = p
        elif mode == "none":
            kernel = np.minimum((u[0] * m).astype(int), m - 1)
        else:
            kernel = np.full(E, best)
        g = _lower_rollouts(prep.chains, prep.rewards, upper.mu0, upper.gamma, t,
                            kernel, cfg.seed, k)
        total += disc * (g - cost)
        disc *= upper.lam
    return total


def run_bilevel(upper: UpperMdp, solution: UpperSolution, cfg: RunConfig,
                _prep: _Prepared | None = None) -> ModeRow:
    """Sample ``cfg.episodes`` independent bi-level runs under ``cfg.mode``.

    A run starts from a uniformly drawn kernel; every upper episode applies
    the mode's configuration, pays its cost and rolls the lower MDP for ``T``
    steps under the reached kernel's optimal policy.
    """
    t, k_max = _horizons(upper, cfg)
    prep = _prep or _Prepared(upper, solution, t)
    totals = _simulate(prep, cfg.mode, cfg, t, k_max)
    se = float(totals.std(ddof=1) / math.sqrt(len(totals))) if len(totals) > 1 else math.nan
    return ModeRow(
        cfg.mode, float(totals.mean()), se, len(totals),
        _analytic(upper, solution.theta, cfg.mode, prep.g, k_max),
        _analytic(upper, solution.theta, cfg.mode, solution.j, None),
    )


def compare_modes(upper: UpperMdp, cfg: RunConfig, solution: UpperSolution | None = None,
                  modes: Iterable[str] = MODES) -> ComparisonReport:
    solution = solution or solve_bilevel(upper)
    t, k_max = _horizons(upper, cfg)
    prep = _Prepared(upper, solution, t)
    rows = [run_bilevel(upper, solution, RunConfig(cfg.seed, cfg.episodes, cfg.horizon,
                                                   cfg.upper_horizon, mode), prep)
            for mode in modes]
    v_max = max(upper.lower(i).v_max for i in range(upper.m))
    return ComparisonReport(rows, t, k_max, upper.gamma ** t * v_max)


def analytic_mode_values(upper: UpperMdp, solution: UpperSolution | None = None) -> dict[str, float]:
    """Infinite-horizon expected return of every mode from a uniform start."""
    solution = solution or solve_bilevel(upper)
    return {mode: _analytic(upper, solution.theta, mode, solution.j, None) for mode in MODES}


# -- TVCMDP budget sweep ------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    budget: float
    baseline: float
    random_mean: float
    random_std: float
    optimized: float
    random_values: tuple = ()
    total_cost: float = 0.0


def budget_sweep(scn: TvcScenario, budgets: Sequence[float], rounds: int = 3,
                 n_random: int = 50, seed: int = 0) -> list[SweepRow]:
    """Baseline, random and optimised objectives for each budget.

    Budgets are solved in increasing order and each solve is warm-started from
    the previous one, whose plan stays feasible under a larger budget.
    """
    base_pol = optimal_policies(scn)
    baseline = exact_objective(scn, base_pol)
    order = sorted(range(len(budgets)), key=lambda i: budgets[i])
    results: dict[int, SweepRow] = {}
    prev = None
    for i in order:
        budget = float(budgets[i])
        res = solve_tvcmdp(scn, rounds, budget, warm_start=prev)
        prev = res
        rng = _stream(seed, _CHOICE, i)
        rand = np.array([exact_objective(scn, base_pol, random_configuration(scn, base_pol, budget, rng))
                         for _ in range(n_random)])
        results[i] = SweepRow(budget, baseline, float(rand.mean()) if n_random else math.nan,
                              float(rand.std()) if n_random else math.nan, res.objective,
                              tuple(float(v) for v in rand), res.plan.total_cost)
    return [results[i] for i in range(len(budgets))]


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["budget", "baseline", "random_mean", "random_std", "optimized"])
    for r in rows:
        w.writerow([fmt(r.budget), fmt(r.baseline), fmt(r.random_mean), fmt(r.random_std), fmt(r.optimized)])
    return buf.getvalue()
