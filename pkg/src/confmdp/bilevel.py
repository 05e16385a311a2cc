"""Bi-level value iteration and empirical kernel estimation.

The upper level is an MDP whose states are indices into a finite catalog of
lower-level kernels and whose actions are model-changing actions ``b``. Its
reward for configuring from kernel ``P`` with ``b`` is the expected lower
return of the kernel reached, minus the configuration cost ``C(P, b)``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    KernelPerAction,
    LowerMdp,
    _frozen,
    check_distribution,
    expected_return,
    normalize_rows,
    validate_kernel,
    value_iteration,
)
from .errors import DimensionMismatch, NonConvergence, UnvisitedPairError


@dataclass(frozen=True)
class UpperMdp:
    """Upper-level MDP over a catalog of ``m`` lower kernels.

    ``q[b, i, j]`` is the probability of moving from catalog kernel ``i`` to
    ``j`` under model-changing action ``b``; ``cost[i, b]`` is ``C(P_i, b)``.
    All catalog kernels share ``reward``, ``gamma`` and ``mu0`` unless
    ``rewards`` supplies one ``(n, A)`` reward matrix per kernel.
    """

    catalog: tuple[KernelPerAction, ...]
    reward: np.ndarray | None
    gamma: float
    q: np.ndarray
    cost: np.ndarray
    lam: float
    mu0: np.ndarray = None
    actions_b: tuple[str, ...] = ()
    episodes: int | None = None
    rewards: np.ndarray | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        catalog = tuple(self.catalog)
        if not catalog:
            raise ValueError("catalog must hold at least one kernel")
        n, A = catalog[0].n, catalog[0].num_actions
        for i, k in enumerate(catalog):
            if (k.n, k.num_actions) != (n, A):
                raise DimensionMismatch(f"catalog[{i}] has shape {(k.n, k.num_actions)}, expected {(n, A)}")
        m = len(catalog)
        q = np.array(self.q, dtype=float)
        if q.ndim != 3 or q.shape[1:] != (m, m):
            raise DimensionMismatch(f"q has shape {q.shape}, expected (B, {m}, {m})")
        validate_kernel(q, "q")
        q = normalize_rows(q)
        B = q.shape[0]
        cost = np.array(self.cost, dtype=float)
        if cost.shape != (m, B):
            raise DimensionMismatch(f"cost has shape {cost.shape}, expected {(m, B)}")
        if not np.all(np.isfinite(cost)):
            raise ValueError("cost entries must be finite")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lam must lie in [0, 1), got {self.lam}")
        if self.rewards is not None:
            rewards = np.array(self.rewards, dtype=float)
            if rewards.shape != (m, n, A):
                raise DimensionMismatch(f"rewards has shape {rewards.shape}, expected {(m, n, A)}")
            object.__setattr__(self, "rewards", _frozen(rewards))
        mu0 = np.full(n, 1.0 / n) if self.mu0 is None else np.array(self.mu0, dtype=float)
        check_distribution(mu0, n, "mu0")
        actions_b = tuple(self.actions_b) or tuple(str(b) for b in range(B))
        if len(actions_b) != B:
            raise DimensionMismatch(f"{len(actions_b)} labels for {B} model-changing actions")
        names = tuple(self.names) or tuple(f"P{i + 1}" for i in range(m))
        if len(names) != m:
            raise DimensionMismatch(f"{len(names)} names for {m} catalog kernels")
        object.__setattr__(self, "catalog", catalog)
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "cost", _frozen(cost))
        object.__setattr__(self, "mu0", _frozen(mu0))
        if self.reward is None and self.rewards is None:
            raise ValueError("either reward or per-kernel rewards must be given")
        if self.reward is not None:
            object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "actions_b", actions_b)
        object.__setattr__(self, "names", names)
        # LowerMdp construction checks reward shape and gamma
        self.lower(0)

    @property
    def m(self) -> int:
        return len(self.catalog)

    @property
    def num_b(self) -> int:
        return self.q.shape[0]

    def lower(self, i: int) -> LowerMdp:
        reward = self.reward if self.rewards is None else self.rewards[i]
        return LowerMdp(self.catalog[i], reward, self.gamma, self.mu0)

    def replace(self, **changes) -> "UpperMdp":
        fields = dict(
            catalog=self.catalog, reward=self.reward, gamma=self.gamma, q=self.q,
            cost=self.cost, lam=self.lam, mu0=self.mu0, actions_b=self.actions_b,
            episodes=self.episodes, rewards=self.rewards, names=self.names,
        )
        fields.update(changes)
        return UpperMdp(**fields)


class LowerSolutions(NamedTuple):
    j: np.ndarray
    policies: list[np.ndarray]


@dataclass(frozen=True)
class UpperSolution:
    w: np.ndarray
    theta: np.ndarray
    j: np.ndarray
    policies: list = field(default_factory=list)
    iterations: int = 0


def lower_solve_all(upper: UpperMdp, tol: float = 1e-10, max_iter: int = 100_000,
                    workers: int | None = None) -> LowerSolutions:
    """Value-iterate every catalog kernel; return ``J`` and greedy policies.

    With ``workers > 1`` kernels are solved on a thread pool. Results land in
    fixed slots so the output never depends on the schedule.
    """

    def solve(i):
        mdp = upper.lower(i)
        try:
            res = value_iteration(mdp, tol, max_iter)
        except NonConvergence as exc:
            exc.kernel_index = i
            exc.args = (f"catalog[{i}]: {exc.args[0]}",)
            raise
        return expected_return(res.values, mdp.mu0), res.policy

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, range(upper.m)))
    else:
        results = [solve(i) for i in range(upper.m)]
    j = np.array([r[0] for r in results])
    return LowerSolutions(j, [r[1] for r in results])


def upper_reward(upper: UpperMdp, j, p_idx: int, b_idx: int) -> float:
    """``R(P, b) = sum_P' Q(P'|P, b) J(P') - C(P, b)``."""
    if not (0 <= p_idx < upper.m and 0 <= b_idx < upper.num_b):
        raise IndexError(f"(p_idx, b_idx) = ({p_idx}, {b_idx}) out of range")
    return float(upper.q[b_idx, p_idx] @ np.asarray(j, dtype=float) - upper.cost[p_idx, b_idx])


def upper_reward_matrix(upper: UpperMdp, j) -> np.ndarray:
    """All upper rewards as an ``(m, B)`` array."""
    j = np.asarray(j, dtype=float)
    if j.shape != (upper.m,):
        raise DimensionMismatch(f"j has shape {j.shape}, expected ({upper.m},)")
    return (upper.q @ j).T - upper.cost


def upper_q_values(upper: UpperMdp, j, w) -> np.ndarray:
    return upper_reward_matrix(upper, j) + upper.lam * (upper.q @ np.asarray(w, dtype=float)).T


def upper_value_iteration(upper: UpperMdp, j, tol: float = 1e-10,
                          max_iter: int = 100_000) -> UpperSolution:
    """Upper-level value iteration from ``W^0 = 0`` with the cost inside the max.

    ``W(P) <- max_b sum_P' Q(P'|P,b) (J(P') + lam W(P')) - C(P, b)``.
    """
    j = np.asarray(j, dtype=float)
    w = np.zeros(upper.m)
    gap = np.inf
    it = 0
    while it < max_iter:
        it += 1
        w_next = upper_q_values(upper, j, w).max(axis=1)
        gap = np.max(np.abs(w_next - w))
        w = w_next
        if gap <= tol:
            break
    theta = np.argmax(upper_q_values(upper, j, w), axis=1)
    sol = UpperSolution(w, theta, j, [], it)
    if gap > tol:
        raise NonConvergence(
            f"upper value iteration stopped after {it} iterations with gap {gap:.3e}", partial=sol
        )
    return sol


def evaluate_upper_policy(upper: UpperMdp, j, theta) -> np.ndarray:
    """Closed-form ``W^Theta`` from ``(I - lam Q^Theta) W = R^Theta``."""
    theta = np.asarray(theta, dtype=int)
    rows = np.arange(upper.m)
    q_theta = upper.q[theta, rows]
    r_theta = upper_reward_matrix(upper, j)[rows, theta]
    return np.linalg.solve(np.eye(upper.m) - upper.lam * q_theta, r_theta)


def solve_bilevel(upper: UpperMdp, tol: float = 1e-10, max_iter: int = 100_000,
                  workers: int | None = None) -> UpperSolution:
    lower = lower_solve_all(upper, tol, max_iter, workers)
    sol = upper_value_iteration(upper, lower.j, tol, max_iter)
    return UpperSolution(sol.w, sol.theta, lower.j, lower.policies, sol.iterations)


# -- estimation -------------------------------------------------------------

@dataclass(frozen=True)
class TransitionDataset:
    """``(s, a, r, s_next)`` records; the reward column is carried but unused."""

    records: np.ndarray
    header: tuple[str, str, str, str] = ("s", "a", "r", "s_next")

    def __post_init__(self):
        rec = np.array(self.records, dtype=float).reshape(-1, 4)
        object.__setattr__(self, "records", _frozen(rec))

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_trajectory(cls, tuples) -> "TransitionDataset":
        return cls(np.array(list(tuples), dtype=float).reshape(-1, 4))

    @classmethod
    def read_csv(cls, path) -> "TransitionDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) != 4:
                raise ValueError(f"{path}: expected a 4-column header line")
            try:
                rows = [[float(x) for x in row] for row in reader if row]
            except ValueError as exc:
                raise ValueError(f"{path}: {exc}") from exc
        if any(len(r) != 4 for r in rows):
            raise ValueError(f"{path}: every line must have 4 fields")
        return cls(np.array(rows).reshape(-1, 4), tuple(h.strip() for h in header))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for s, a, r, s2 in self.records:
                w.writerow([int(s), int(a), repr(float(r)), int(s2)])


class KernelDataset(TransitionDataset):
    """``(p_idx, b, R, p_next_idx)`` records for the upper level."""

    def __init__(self, records, header=("p_idx", "b", "R", "p_next_idx")):
        super().__init__(records, header)


def _count_frequencies(records: np.ndarray, n: int, num_actions: int, smoothing: bool,
                       labels: tuple[str, str]) -> np.ndarray:
    idx = records[:, [0, 1, 3]]
    if idx.size and (np.any(idx != np.round(idx)) or np.any(idx < 0)
                     or np.any(idx[:, 0] >= n) or np.any(idx[:, 2] >= n)
                     or np.any(idx[:, 1] >= num_actions)):
        raise ValueError(f"{labels[0]}/{labels[1]} indices out of range for ({n}, {num_actions})")
    idx = idx.astype(int)
    counts = np.zeros((num_actions, n, n))
    np.add.at(counts, (idx[:, 1], idx[:, 0], idx[:, 2]), 1.0)
    if smoothing:
        counts += 1.0
    totals = counts.sum(axis=2)
    missing = np.argwhere(totals.T == 0)
    if missing.size:
        raise UnvisitedPairError([tuple(int(v) for v in p) for p in missing])
    return counts / totals[:, :, None]


def estimate_lower_kernel(ds: TransitionDataset, n: int, num_actions: int,
                          smoothing: bool = False) -> KernelPerAction:
    """Empirical-frequency estimate ``count(s,a,s') / |D_(s,a)|``.

    ``smoothing=True`` adds one pseudo-count per next state (Laplace), which
    also makes unvisited pairs uniform instead of an error.
    """
    return KernelPerAction(_count_frequencies(ds.records, n, num_actions, smoothing, ("s", "a")))


def estimate_upper_kernel(ds: KernelDataset, m: int, num_b: int,
                          smoothing: bool = False) -> np.ndarray:
    """Empirical ``Q-hat`` as a ``(B, m, m)`` array."""
    return _count_frequencies(ds.records, m, num_b, smoothing, ("p_idx", "b"))


def row_tv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Total-variation distance between matching rows (last axis)."""
    return 0.5 * np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)).sum(axis=-1)


def associate_kernel(estimated: KernelPerAction, catalog: Sequence[KernelPerAction]) -> tuple[int, float]:
    """Nearest catalog member under the max-over-(s, a) row TV distance."""
    if not catalog:
        raise ValueError("catalog is empty")
    est = estimated.mats if isinstance(estimated, KernelPerAction) else np.asarray(estimated)
    dists = [float(row_tv(est, k.mats).max()) for k in catalog]
    best = int(np.argmin(dists))
    return best, dists[best]


def sample_kernel_dataset(upper: UpperMdp, samples_per_pair: int, rng: np.random.Generator,
                          j=None) -> KernelDataset:
    """Draw ``samples_per_pair`` upper transitions for every ``(P, b)``."""
    if j is None:
        j = lower_solve_all(upper).j
    r = upper_reward_matrix(upper, j)
    rows = []
    for p in range(upper.m):
        for b in range(upper.num_b):
            nxt = rng.choice(upper.m, size=samples_per_pair, p=upper.q[b, p])
            block = np.empty((samples_per_pair, 4))
            block[:, 0], block[:, 1], block[:, 2], block[:, 3] = p, b, r[p, b], nxt
            rows.append(block)
    return KernelDataset(np.concatenate(rows))


def sample_transition_dataset(kernel: KernelPerAction, samples_per_pair: int,
                              rng: np.random.Generator, reward=None) -> TransitionDataset:
    """Draw ``samples_per_pair`` next states for every ``(s, a)`` pair."""
    n, A = kernel.n, kernel.num_actions
    rows = []
    for s in range(n):
        for a in range(A):
            nxt = rng.choice(n, size=samples_per_pair, p=kernel.mats[a, s])
            block = np.empty((samples_per_pair, 4))
            block[:, 0], block[:, 1], block[:, 3] = s, a, nxt
            block[:, 2] = 0.0 if reward is None else reward[s, a]
            rows.append(block)
    return TransitionDataset(np.concatenate(rows))
