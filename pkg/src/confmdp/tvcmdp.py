"""Time-varying configurable MDPs: linearization and budgeted configuration.

Each episode ``k`` has its own kernel ``P_k``. The agent may add a
perturbation ``x_k`` to the policy-collapsed chain ``P_k^{pi_k}``, paying
``sum_ij (exp(alpha |x_ij|) - 1)`` out of a budget shared by all episodes.
Around a policy, the configured value is ``V(P + x) ~ N + M x N`` with
``M = gamma (I - gamma P)^{-1}`` and ``N = (I - gamma P)^{-1} r``, so the
return gain is linear in ``x`` with coefficient matrix ``A = M^T mu0 N^T``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    KernelPerAction,
    LowerMdp,
    _frozen,
    check_distribution,
    check_policy,
    solve_chain,
    value_iteration,
)
from .errors import DimensionMismatch, SingularSystemError

log = logging.getLogger(__name__)

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class TvcScenario:
    """A time-varying configurable MDP with an exponential configuration cost."""

    kernels: tuple[KernelPerAction, ...]
    reward: np.ndarray
    gamma: float
    mu0: np.ndarray = None
    cost_alpha: float = 1.0
    cost_beta: float = 1.0
    budget: float = 0.0
    budget_grid: tuple[float, ...] = ()

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValueError("at least one episode kernel is required")
        n, A = kernels[0].n, kernels[0].num_actions
        for k, ker in enumerate(kernels):
            if (ker.n, ker.num_actions) != (n, A):
                raise DimensionMismatch(f"kernels[{k}] has shape {(ker.n, ker.num_actions)}, expected {(n, A)}")
        if self.cost_alpha < 0 or self.cost_beta < 0:
            raise ValueError("cost_alpha and cost_beta must be non-negative")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        mu0 = np.full(n, 1.0 / n) if self.mu0 is None else np.array(self.mu0, dtype=float)
        check_distribution(mu0, n, "mu0")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "mu0", _frozen(mu0))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "budget_grid", tuple(float(b) for b in self.budget_grid))
        self.lower(0)

    @property
    def episodes(self) -> int:
        return len(self.kernels)

    @property
    def n(self) -> int:
        return self.kernels[0].n

    def lower(self, k: int) -> LowerMdp:
        return LowerMdp(self.kernels[k], self.reward, self.gamma, self.mu0)

    def with_budget(self, budget: float) -> "TvcScenario":
        return TvcScenario(self.kernels, self.reward, self.gamma, self.mu0,
                           self.cost_alpha, self.cost_beta, budget, self.budget_grid)


class LinearModel(NamedTuple):
    m_mat: np.ndarray
    n_vec: np.ndarray
    a_mat: np.ndarray


def _resolvent(kernel_pi, gamma: float) -> np.ndarray:
    kernel_pi = np.asarray(kernel_pi, dtype=float)
    n = kernel_pi.shape[0]
    if kernel_pi.shape != (n, n):
        raise DimensionMismatch(f"chain must be square, got {kernel_pi.shape}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    try:
        res = np.linalg.solve(np.eye(n) - gamma * kernel_pi, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    return res


def linearize(kernel_pi, r_pi, gamma: float, mu0) -> LinearModel:
    """First-order model of the return around the chain ``kernel_pi``."""
    kernel_pi = np.asarray(kernel_pi, dtype=float)
    r_pi = np.asarray(r_pi, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    m_mat = gamma * _resolvent(kernel_pi, gamma)
    n_vec = solve_chain(kernel_pi, r_pi, gamma)
    return LinearModel(m_mat, n_vec, np.outer(m_mat.T @ mu0, n_vec))


def jacobian(kernel_pi, r_pi, gamma: float) -> np.ndarray:
    """``t[i, p, q] = dV_i / dP_pq = M[i, p] * N[q]`` as an ``(n, n, n)`` array."""
    kernel_pi = np.asarray(kernel_pi, dtype=float)
    m_mat = gamma * _resolvent(kernel_pi, gamma)
    n_vec = solve_chain(kernel_pi, np.asarray(r_pi, dtype=float), gamma)
    return m_mat[:, :, None] * n_vec[None, None, :]


def config_cost(x, alpha: float, beta: float = 1.0) -> float:
    """``sum_ij beta (exp(alpha |x_ij|) - 1)``."""
    x = np.asarray(x, dtype=float)
    return float(beta * np.expm1(alpha * np.abs(x)).sum())


@dataclass(frozen=True)
class ConfigPlan:
    xs: list
    cost_per_episode: list
    total_cost: float
    predicted_gain: float
    dual_bound: float = math.nan
    multiplier: float = 0.0
    converged: bool = True

    @classmethod
    def zeros(cls, n: int, episodes: int) -> "ConfigPlan":
        return cls([np.zeros((n, n)) for _ in range(episodes)], [0.0] * episodes, 0.0, 0.0, 0.0)

    def weighted_cost(self, beta: float) -> float:
        return beta * self.total_cost


# -- the separable solver -----------------------------------------------------

def _scalar_argmax(g, mu, alpha, lo, hi):
    """argmax_x g x - mu (exp(alpha |x|) - 1) over the box [lo, hi], mu > 0."""
    mag = np.abs(g)
    thresh = mu * alpha
    with np.errstate(divide="ignore"):
        step = np.where(mag > thresh, np.log(mag / thresh) / alpha, 0.0)
    return np.clip(np.sign(g) * step, lo, hi)


def _rows_at_multiplier(a, lo, hi, mu, alpha):
    """Solve every row subproblem for a fixed budget multiplier ``mu``.

    For each row the zero-sum multiplier ``nu`` is bisected; the final point
    is the convex blend of the two bracketing solutions whose sum is exactly
    zero, which keeps it inside the box.
    """
    spread = mu * alpha + 1.0
    nu_lo = a.min(axis=1) - spread
    nu_hi = a.max(axis=1) + spread
    x_lo = _scalar_argmax(a - nu_lo[:, None], mu, alpha, lo, hi)
    x_hi = _scalar_argmax(a - nu_hi[:, None], mu, alpha, lo, hi)
    s_lo, s_hi = x_lo.sum(axis=1), x_hi.sum(axis=1)
    stalled = False
    for it in range(BISECT_MAX_ITER):
        width = nu_hi - nu_lo
        if np.all(width <= BISECT_TOL * (1.0 + np.abs(nu_hi))) or np.all(s_lo == s_hi):
            break
        nu = 0.5 * (nu_lo + nu_hi)
        x = _scalar_argmax(a - nu[:, None], mu, alpha, lo, hi)
        s = x.sum(axis=1)
        up = s >= 0
        nu_lo = np.where(up, nu, nu_lo)
        x_lo = np.where(up[:, None], x, x_lo)
        s_lo = np.where(up, s, s_lo)
        nu_hi = np.where(up, nu_hi, nu)
        x_hi = np.where(up[:, None], x_hi, x)
        s_hi = np.where(up, s_hi, s)
    else:
        stalled = True
    denom = s_lo - s_hi
    theta = np.divide(s_lo, denom, out=np.zeros_like(s_lo), where=denom > 0)
    x = (1.0 - theta)[:, None] * x_lo + theta[:, None] * x_hi
    return x, stalled


def _lp_rows(a, base):
    """Budget-free optimum: each row moves all its mass to its best column."""
    x = -np.array(base, dtype=float)
    x[np.arange(a.shape[0]), np.argmax(a, axis=1)] += 1.0
    return x


def maximize_linear(a_mats, base_chains, alpha: float, budget: float) -> ConfigPlan:
    """Maximise ``sum_k <A_k, x_k>`` under the budget, zero row sums and the box.

    ``base_chains[k]`` is the chain being perturbed; the box keeps
    ``base + x`` inside ``[0, 1]``. The budget uses ``beta = 1``.
    Dual decomposition: bisection on the budget multiplier ``mu`` outside,
    per-row bisection on the zero-sum multiplier inside, closed-form scalar
    solutions at the bottom.
    """
    a_mats = np.asarray(a_mats, dtype=float)
    base = np.asarray(base_chains, dtype=float)
    K, n, _ = a_mats.shape
    a = a_mats.reshape(K * n, n)
    p = base.reshape(K * n, n)
    lo, hi = -p, 1.0 - p

    def pack(x, mu, dual, converged):
        xs = [x[k * n:(k + 1) * n].copy() for k in range(K)]
        costs = [config_cost(xk, alpha) for xk in xs]
        gain = float((a * x).sum())
        return ConfigPlan(xs, costs, float(sum(costs)), gain, dual, mu, converged)

    if budget <= 0:
        x = np.zeros_like(a)
        return pack(x, math.inf, 0.0, True)
    x_free = _lp_rows(a, p)
    if alpha == 0 or config_cost(x_free, alpha) <= budget:
        gain = float((a * x_free).sum())
        return pack(x_free, 0.0, gain, True)

    def total_cost(x):
        return float(np.expm1(alpha * np.abs(x)).sum())

    # at mu_hi every row sits on the flat part of its scalar objective
    mu_lo, mu_hi = 0.0, float((a.max(axis=1) - a.min(axis=1)).max()) / alpha + 1.0
    x_hi, stalled = _rows_at_multiplier(a, lo, hi, mu_hi, alpha)
    converged = True
    for it in range(BISECT_MAX_ITER):
        if mu_hi - mu_lo <= BISECT_TOL * mu_hi:
            break
        mu = 0.5 * (mu_lo + mu_hi)
        x, row_stall = _rows_at_multiplier(a, lo, hi, mu, alpha)
        stalled |= row_stall
        if total_cost(x) <= budget:
            mu_hi, x_hi = mu, x
        else:
            mu_lo = mu
    else:
        converged = False
    x = x_hi
    dual = float((a * x).sum()) - mu_hi * (total_cost(x) - budget)
    plan = pack(x, mu_hi, dual, converged and not stalled)
    if not plan.converged:
        warnings.warn("budget bisection hit its iteration cap; returning best feasible plan",
                      RuntimeWarning, stacklevel=2)
    return plan


# -- episode-level helpers ------------------------------------------------------

def policy_chains(scn: TvcScenario, policies) -> tuple[np.ndarray, np.ndarray]:
    """Per-episode collapsed chains ``(K, n, n)`` and rewards ``(K, n)``."""
    states = np.arange(scn.n)
    chains, rewards = [], []
    for k, ker in enumerate(scn.kernels):
        pi = check_policy(policies[k], scn.n, ker.num_actions)
        chains.append(ker.mats[pi, states])
        rewards.append(scn.reward[states, pi])
    return np.array(chains), np.array(rewards)


def optimal_policies(scn: TvcScenario, xs=None, policies=None, tol: float = 1e-10) -> list:
    """Optimal policy per episode, optionally on the configured kernels.

    ``xs[k]`` perturbs only the rows ``(s, policies[k][s])`` of episode ``k``.
    """
    out = []
    for k in range(scn.episodes):
        ker = scn.kernels[k] if xs is None else lift(scn.kernels[k], policies[k], xs[k])
        out.append(value_iteration(scn.lower(k).with_kernel(ker), tol).policy)
    return out


def lift(kernel: KernelPerAction, pi, x) -> KernelPerAction:
    """Apply a chain perturbation to the rows ``(s, pi(s))`` of a per-action kernel."""
    mats = np.array(kernel.mats)
    states = np.arange(kernel.n)
    pi = np.asarray(pi, dtype=int)
    rows = np.clip(mats[pi, states] + np.asarray(x, dtype=float), 0.0, 1.0)
    mats[pi, states] = rows / rows.sum(axis=1, keepdims=True)
    return KernelPerAction(mats, kernel.actions)


def exact_objective(scn: TvcScenario, policies, xs=None) -> float:
    """``sum_k J(pi_k, P_k^{pi_k} + x_k)`` by exact linear solves."""
    chains, rewards = policy_chains(scn, policies)
    total = 0.0
    for k in range(scn.episodes):
        chain = chains[k] if xs is None else chains[k] + xs[k]
        total += float(scn.mu0 @ solve_chain(chain, rewards[k], scn.gamma))
    return total


def baseline_objective(scn: TvcScenario) -> float:
    return exact_objective(scn, optimal_policies(scn))


def optimize_configuration(scn: TvcScenario, policies, budget: float | None = None) -> ConfigPlan:
    """Linearize every episode at its unconfigured chain and solve the budgeted program."""
    budget = scn.budget if budget is None else budget
    chains, rewards = policy_chains(scn, policies)
    a_mats = np.array([linearize(c, r, scn.gamma, scn.mu0).a_mat for c, r in zip(chains, rewards)])
    return maximize_linear(a_mats, chains, scn.cost_alpha, budget)


class TvcResult(NamedTuple):
    plan: ConfigPlan
    policies: list
    objective: float
    history: list


def solve_tvcmdp(scn: TvcScenario, rounds: int = 3, budget: float | None = None,
                 warm_start: "TvcResult | None" = None) -> TvcResult:
    """Alternate policy optimisation and re-linearised configuration.

    Each round (1) takes the optimal policy per episode on the currently
    configured kernels, dropping perturbation rows whose action changed,
    (2) linearizes at the configured chains and solves the budgeted program
    for a full-budget target, and (3) moves toward that target with an exact
    line search. The exact objective never decreases across rounds.
    ``warm_start`` seeds the iterate with a plan feasible for this budget.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    budget = scn.budget if budget is None else budget
    n, K = scn.n, scn.episodes

    policies = optimal_policies(scn)
    xs = [np.zeros((n, n)) for _ in range(K)]
    best = exact_objective(scn, policies, xs)
    if warm_start is not None and warm_start.plan.total_cost <= budget + 1e-9:
        cand = exact_objective(scn, warm_start.policies, warm_start.plan.xs)
        if cand > best:
            policies, xs, best = list(warm_start.policies), [x.copy() for x in warm_start.plan.xs], cand
    history = [best]
    last_plan = None

    for r in range(rounds):
        if r > 0 or warm_start is not None:
            new_pol = optimal_policies(scn, xs, policies)
            xs = [np.where((np.asarray(p_new) == np.asarray(p_old))[:, None], x, 0.0)
                  for p_new, p_old, x in zip(new_pol, policies, xs)]
            policies = new_pol
        chains, rewards = policy_chains(scn, policies)
        current = exact_objective(scn, policies, xs)
        a_mats = np.array([linearize(c + x, rw, scn.gamma, scn.mu0).a_mat
                           for c, x, rw in zip(chains, xs, rewards)])
        target = maximize_linear(a_mats, chains, scn.cost_alpha, budget)
        last_plan = target
        x0 = np.array(xs)
        d = np.array(target.xs) - x0

        def value(t):
            return exact_objective(scn, policies, list(x0 + t * d))

        res = minimize_scalar(lambda t: -value(t), bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": 1e-6})
        candidates = [(value(1.0), 1.0), (-res.fun, float(res.x)), (current, 0.0)]
        val, t = max(candidates, key=lambda c: c[0])
        if val >= best - 1e-8:
            xs = list(x0 + t * d)
            best = max(best, val)
        history.append(best)
        if val < current + 1e-12:
            log.debug("round %d made no progress; stopping", r + 1)
            break

    costs = [config_cost(x, scn.cost_alpha) for x in xs]
    chains, rewards = policy_chains(scn, policies)
    a0 = [linearize(c, rw, scn.gamma, scn.mu0).a_mat for c, rw in zip(chains, rewards)]
    predicted = float(sum((a * x).sum() for a, x in zip(a0, xs)))
    plan = ConfigPlan([np.asarray(x) for x in xs], costs, float(sum(costs)), predicted,
                      last_plan.dual_bound if last_plan else 0.0,
                      last_plan.multiplier if last_plan else 0.0,
                      last_plan.converged if last_plan else True)
    return TvcResult(plan, policies, best, history)


def random_configuration(scn: TvcScenario, policies, budget: float, rng: np.random.Generator) -> list:
    """A random admissible perturbation whose cost matches ``budget`` when reachable.

    Each row moves toward a Dirichlet-sampled target row, so every scaling in
    ``[0, 1]`` stays inside the box; one common scale is bisected to hit the
    budget (or capped at 1 if even the full move is cheaper).
    """
    chains, _ = policy_chains(scn, policies)
    targets = rng.dirichlet(np.ones(scn.n), size=chains.shape[:2])
    d = targets - chains
    alpha = scn.cost_alpha

    def cost(t):
        return float(np.expm1(alpha * np.abs(t * d)).sum())

    if budget <= 0:
        return list(np.zeros_like(chains))
    if cost(1.0) <= budget:
        return list(d)
    lo, hi = 0.0, 1.0
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if cost(mid) <= budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14:
            break
    return list(lo * d)


def check_plan(scn: TvcScenario, policies, xs, budget: float, tol: float = 1e-8) -> list[str]:
    """Independent feasibility check; returns a list of violated constraints."""
    problems = []
    chains, _ = policy_chains(scn, policies)
    total = 0.0
    for k, (c, x) in enumerate(zip(chains, xs)):
        x = np.asarray(x, dtype=float)
        rs = np.abs(x.sum(axis=1)).max()
        if rs > tol:
            problems.append(f"episode {k}: row sum deviates by {rs:.3e}")
        conf = c + x
        if conf.min() < -tol or conf.max() > 1 + tol:
            problems.append(f"episode {k}: configured entry outside [0, 1]")
        total += float(sum(math.expm1(scn.cost_alpha * abs(v)) for v in x.ravel()))
    if total > budget + 1e-6:
        problems.append(f"cost {total:.9g} exceeds budget {budget:.9g}")
    return problems
