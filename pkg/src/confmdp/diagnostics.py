"""Error quantities for estimated and imperfectly configured kernels.

Three inequalities are checked numerically here:

* value gap between two kernels for a fixed (or each kernel's optimal) policy,
  ``<= gamma * delta * V_max / (1 - gamma)``;
* gap in upper-level rewards built from two paired catalogs;
* gap in higher-order values when the upper kernel is estimated as well.

Each ``*_check`` returns the observed sup-norm gap next to its bound, and
``run_harness`` sweeps randomly generated instances with a fixed seed list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bilevel import (
    UpperMdp,
    evaluate_upper_policy,
    lower_solve_all,
    row_tv,
    upper_reward_matrix,
)
from .core import KernelPerAction, LowerMdp, policy_evaluation_closed, value_iteration
from .errors import CatalogMismatch, DimensionMismatch

# default seeds of the randomized harness; instance i uses HARNESS_SEED + i
HARNESS_SEED = 20240917


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionMismatch(f"shapes {p.shape} and {q.shape} differ")
    return 0.5 * float(np.abs(p - q).sum())


def kernel_tv(a: KernelPerAction, b: KernelPerAction) -> float:
    """Max over ``(s, a)`` of the row TV distance."""
    if a.mats.shape != b.mats.shape:
        raise DimensionMismatch(f"kernel shapes {a.mats.shape} and {b.mats.shape} differ")
    return float(row_tv(a.mats, b.mats).max())


def catalog_tv(cat_a, cat_b) -> float:
    if len(cat_a) != len(cat_b):
        raise CatalogMismatch(f"catalog sizes {len(cat_a)} and {len(cat_b)} differ")
    return max(kernel_tv(a, b) for a, b in zip(cat_a, cat_b))


class Lemma1Result(NamedTuple):
    observed: float
    bound: float
    delta_g: float
    observed_optimal: float


def lemma1_bound(gamma: float, delta: float, v_max: float) -> float:
    return gamma * delta * v_max / (1.0 - gamma)


def lemma1_check(mdp_p: LowerMdp, mdp_phat: LowerMdp, pi) -> Lemma1Result:
    """Value gap between two kernels for policy ``pi`` and for the optimal policies."""
    if mdp_p.kernel.mats.shape != mdp_phat.kernel.mats.shape:
        raise DimensionMismatch("the two MDPs must share states and actions")
    delta = kernel_tv(mdp_p.kernel, mdp_phat.kernel)
    observed = float(np.max(np.abs(policy_evaluation_closed(mdp_p, pi)
                                   - policy_evaluation_closed(mdp_phat, pi))))
    v_opt = policy_evaluation_closed(mdp_p, value_iteration(mdp_p).policy)
    v_opt_hat = policy_evaluation_closed(mdp_phat, value_iteration(mdp_phat).policy)
    observed_opt = float(np.max(np.abs(v_opt - v_opt_hat)))
    return Lemma1Result(observed, lemma1_bound(mdp_p.gamma, delta, mdp_p.v_max), delta, observed_opt)


class CheckResult(NamedTuple):
    observed: float
    bound: float


def _paired(upper: UpperMdp, catalog_ideal, catalog_est):
    if len(catalog_ideal) != upper.m or len(catalog_est) != upper.m:
        raise CatalogMismatch(
            f"catalog sizes {len(catalog_ideal)} and {len(catalog_est)} must both equal m={upper.m}"
        )
    return upper.replace(catalog=tuple(catalog_ideal)), upper.replace(catalog=tuple(catalog_est))


MU0_NORMS = ("inf", "1")


def _mu0_norm(upper: UpperMdp, norm: str = "inf") -> float:
    """``||mu0||_inf`` as stated in the bounds, or ``||mu0||_1``.

    Pairing ``mu0`` with a sup-norm gap in Hoelder's inequality needs the
    1-norm; the sup-norm version can be violated (see the tests).
    """
    if norm == "inf":
        return float(np.max(np.abs(upper.mu0)))
    if norm == "1":
        return float(np.sum(np.abs(upper.mu0)))
    raise ValueError(f"mu0 norm must be one of {MU0_NORMS}, got {norm!r}")


def _v_max(upper: UpperMdp) -> float:
    return max(upper.lower(i).v_max for i in range(upper.m))


def lemma2_check(upper: UpperMdp, catalog_ideal, catalog_est, theta,
                 delta: float | None = None, mu0_norm: str = "inf") -> CheckResult:
    """Upper-reward gap between an ideal catalog and its estimate.

    ``delta`` is the combined row TV ``delta_g + delta_c``; by default it is
    measured directly between the two catalogs.
    """
    up_c, up_hat = _paired(upper, catalog_ideal, catalog_est)
    theta = np.asarray(theta, dtype=int)
    rows = np.arange(upper.m)
    r_c = upper_reward_matrix(up_c, lower_solve_all(up_c).j)[rows, theta]
    r_hat = upper_reward_matrix(up_hat, lower_solve_all(up_hat).j)[rows, theta]
    if delta is None:
        delta = catalog_tv(catalog_ideal, catalog_est)
    bound = upper.gamma * delta * _v_max(upper) * _mu0_norm(upper, mu0_norm) / (1.0 - upper.gamma)
    return CheckResult(float(np.max(np.abs(r_c - r_hat))), bound)


def lemma3_bound(gamma: float, lam: float, delta: float, big_delta: float,
                 v_max: float, w_max: float, mu0_inf: float) -> float:
    first = gamma * delta * v_max * mu0_inf / ((1.0 - gamma) * (1.0 - lam))
    second = (2.0 * big_delta * mu0_inf * v_max + 2.0 * lam * big_delta * w_max) / (1.0 - lam)
    return first + second


def lemma3_check(upper_q: UpperMdp, upper_qhat: UpperMdp, theta,
                 delta: float | None = None, mu0_norm: str = "inf") -> CheckResult:
    """Higher-order value gap between a ground-truth and an empirical upper MDP.

    ``upper_q`` carries the ideal catalog and true ``Q``; ``upper_qhat`` the
    estimated catalog and ``Q-hat``. Both share costs and state labels.
    """
    if upper_q.m != upper_qhat.m or upper_q.num_b != upper_qhat.num_b:
        raise CatalogMismatch("upper MDPs must share m and the action set")
    theta = np.asarray(theta, dtype=int)
    j = lower_solve_all(upper_q).j
    j_hat = lower_solve_all(upper_qhat).j
    w = evaluate_upper_policy(upper_q, j, theta)
    w_hat = evaluate_upper_policy(upper_qhat, j_hat, theta)
    if delta is None:
        delta = catalog_tv(upper_q.catalog, upper_qhat.catalog)
    big_delta = float(row_tv(upper_q.q, upper_qhat.q).max())
    r_max = float(np.abs(upper_reward_matrix(upper_qhat, j_hat)).max())
    w_max = r_max / (1.0 - upper_qhat.lam)
    bound = lemma3_bound(upper_q.gamma, upper_q.lam, delta, big_delta,
                         _v_max(upper_q), w_max, _mu0_norm(upper_q, mu0_norm))
    return CheckResult(float(np.max(np.abs(w - w_hat))), bound)


# -- randomized harness -------------------------------------------------------

def perturb_kernel(mats: np.ndarray, max_tv: float, rng: np.random.Generator) -> np.ndarray:
    """Mix each row with a random distribution; the row TV stays ``<= max_tv``."""
    mats = np.asarray(mats, dtype=float)
    eps = rng.uniform(0.0, max_tv)
    noise = rng.dirichlet(np.ones(mats.shape[-1]), size=mats.shape[:-1])
    return (1.0 - eps) * mats + eps * noise


def _random_lower(rng: np.random.Generator, n: int, A: int, gamma: float) -> LowerMdp:
    mats = rng.dirichlet(np.ones(n), size=(A, n))
    # rewards in [0, 1] keep values inside [0, V_max], as the bounds assume
    return LowerMdp(KernelPerAction(mats), rng.uniform(0.0, 1.0, size=(n, A)), gamma)


GAMMAS = (0.5, 0.9, 0.95)


def random_lemma1_instance(rng: np.random.Generator):
    n = int(rng.integers(1, 7))
    A = int(rng.integers(1, 4))
    mdp = _random_lower(rng, n, A, float(rng.choice(GAMMAS)))
    hat = mdp.with_kernel(KernelPerAction(perturb_kernel(mdp.kernel.mats, 0.1, rng)))
    pi = rng.integers(0, A, size=n)
    return mdp, hat, pi


def _random_catalogs(rng: np.random.Generator):
    """Ideal catalog, its configured ground truth and an estimate of that."""
    m = int(rng.integers(1, 5))
    n = int(rng.integers(1, 7))
    A = int(rng.integers(1, 4))
    B = int(rng.integers(1, 4))
    gamma = float(rng.choice(GAMMAS))
    ideal = [rng.dirichlet(np.ones(n), size=(A, n)) for _ in range(m)]
    truth = [perturb_kernel(k, 0.05, rng) for k in ideal]
    est = [perturb_kernel(k, 0.05, rng) for k in truth]
    delta_c = max(float(row_tv(a, b).max()) for a, b in zip(ideal, truth))
    delta_g = max(float(row_tv(a, b).max()) for a, b in zip(truth, est))
    return dict(m=m, n=n, A=A, B=B, gamma=gamma,
                ideal=[KernelPerAction(k) for k in ideal],
                est=[KernelPerAction(k) for k in est],
                delta=delta_g + delta_c,
                reward=rng.uniform(0.0, 1.0, size=(n, A)),
                q=rng.dirichlet(np.ones(m), size=(B, m)),
                cost=rng.uniform(0.0, 0.5, size=(m, B)))


def random_lemma2_instance(rng: np.random.Generator):
    c = _random_catalogs(rng)
    upper = UpperMdp(tuple(c["ideal"]), c["reward"], c["gamma"], c["q"], c["cost"],
                     lam=float(rng.choice(GAMMAS)))
    theta = rng.integers(0, c["B"], size=c["m"])
    return upper, c["ideal"], c["est"], theta, c["delta"]


def random_lemma3_instance(rng: np.random.Generator):
    c = _random_catalogs(rng)
    lam = float(rng.choice(GAMMAS))
    upper_q = UpperMdp(tuple(c["ideal"]), c["reward"], c["gamma"], c["q"], c["cost"], lam=lam)
    q_hat = perturb_kernel(c["q"], 0.1, rng)
    upper_qhat = upper_q.replace(catalog=tuple(c["est"]), q=q_hat)
    theta = rng.integers(0, c["B"], size=c["m"])
    return upper_q, upper_qhat, theta, c["delta"]


@dataclass
class HarnessReport:
    lemma: int
    instances: int
    violations: int
    max_observed: float
    min_margin: float
    max_ratio: float
    records: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _run_one(lemma: int, rng: np.random.Generator, mu0_norm: str) -> tuple[float, float]:
    if lemma == 1:
        mdp, hat, pi = random_lemma1_instance(rng)
        res = lemma1_check(mdp, hat, pi)
        # both the fixed-policy and the optimal-policy gaps must respect the bound
        return max(res.observed, res.observed_optimal), res.bound
    if lemma == 2:
        upper, ideal, est, theta, delta = random_lemma2_instance(rng)
        return lemma2_check(upper, ideal, est, theta, delta, mu0_norm)
    if lemma == 3:
        upper_q, upper_qhat, theta, delta = random_lemma3_instance(rng)
        return lemma3_check(upper_q, upper_qhat, theta, delta, mu0_norm)
    raise ValueError(f"unknown lemma {lemma}")


def run_harness(lemma: int, instances: int, seed: int = HARNESS_SEED,
                mu0_norm: str = "inf") -> HarnessReport:
    """Check ``instances`` random instances; instance ``i`` is seeded ``seed + i``.

    ``mu0_norm`` only affects the second and third inequalities.
    """
    records = []
    for i in range(instances):
        observed, bound = _run_one(lemma, np.random.default_rng(seed + i), mu0_norm)
        records.append((seed + i, observed, bound))
    obs = np.array([r[1] for r in records]) if records else np.zeros(0)
    bnd = np.array([r[2] for r in records]) if records else np.zeros(0)
    tol = 1e-9 * (1.0 + np.abs(bnd))
    violations = int(np.sum(obs > bnd + tol))
    # instances whose bound is rounding noise (one state, one action) carry no ratio
    scale = 1e-9 * (1.0 + (bnd.max() if records else 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bnd > scale, obs / bnd, 0.0)
    return HarnessReport(
        lemma, instances, violations,
        float(obs.max()) if records else 0.0,
        float((bnd - obs).min()) if records else 0.0,
        float(ratios.max()) if records else 0.0,
        records,
    )
