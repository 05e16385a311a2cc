"""Exact tabular MDP primitives.

Kernels are stored action-major as an ``(A, n, n)`` array so that
``mats[a, s, s2] == P(s2 | s, a)``. Rewards are ``(n, A)``. Policies are
plain integer arrays of length ``n`` and value vectors plain float arrays;
wrapping them in classes buys nothing in numpy code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NegativeEntryError,
    NonConvergence,
    RowSumError,
    SingularSystemError,
)

ROW_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def validate_kernel(mats, where: str = "") -> None:
    """Raise if ``mats`` is not a stack of row-stochastic matrices.

    Accepts a :class:`KernelPerAction` or anything array-like of shape
    ``(A, n, n)``.
    """
    if isinstance(mats, KernelPerAction):
        mats = mats.mats
    mats = np.asarray(mats, dtype=float)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise DimensionMismatch(f"{where or 'kernel'}: expected shape (A, n, n), got {mats.shape}")
    if not np.all(np.isfinite(mats)):
        a, s, s2 = np.argwhere(~np.isfinite(mats))[0]
        raise NegativeEntryError(int(a), int(s), int(s2), float(mats[a, s, s2]), where)
    bad = np.argwhere((mats < 0.0) | (mats > 1.0))
    if bad.size:
        a, s, s2 = bad[0]
        raise NegativeEntryError(int(a), int(s), int(s2), float(mats[a, s, s2]), where)
    sums = mats.sum(axis=2)
    off = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if off.size:
        a, s = off[0]
        raise RowSumError(int(a), int(s), float(sums[a, s]), where)


def normalize_rows(mats: np.ndarray) -> np.ndarray:
    """Renormalise rows that are off by more than rounding noise.

    Rows already summing to 1 up to a few ulps are returned bit-for-bit so
    decimal literals from scenario files survive a load/save round trip.
    """
    mats = np.array(mats, dtype=float)
    sums = mats.sum(axis=-1, keepdims=True)
    off = np.abs(sums - 1.0) > 8 * np.finfo(float).eps
    return np.where(off, mats / sums, mats)


@dataclass(frozen=True)
class KernelPerAction:
    """Per-action transition matrices for one lower-level environment."""

    mats: np.ndarray
    actions: tuple[str, ...] = ()

    def __post_init__(self):
        mats = np.array(self.mats, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        validate_kernel(mats)
        object.__setattr__(self, "mats", _frozen(normalize_rows(mats)))
        actions = tuple(self.actions) or tuple(str(a) for a in range(mats.shape[0]))
        if len(actions) != mats.shape[0]:
            raise DimensionMismatch(
                f"{len(actions)} action labels for {mats.shape[0]} matrices"
            )
        object.__setattr__(self, "actions", actions)

    @property
    def n(self) -> int:
        return self.mats.shape[1]

    @property
    def num_actions(self) -> int:
        return self.mats.shape[0]

    def __eq__(self, other):
        if not isinstance(other, KernelPerAction):
            return NotImplemented
        return self.actions == other.actions and np.array_equal(self.mats, other.mats)

    __hash__ = None


@dataclass(frozen=True)
class LowerMdp:
    """A lower-level MDP: kernel, reward ``r(s, a)``, discount and initial law.

    ``horizon`` is only used when sampling; ``None`` means infinite.
    """

    kernel: KernelPerAction
    reward: np.ndarray
    gamma: float
    mu0: np.ndarray = field(default=None)
    horizon: int | None = None

    def __post_init__(self):
        n, A = self.kernel.n, self.kernel.num_actions
        reward = np.array(self.reward, dtype=float)
        if reward.shape != (n, A):
            raise DimensionMismatch(f"reward shape {reward.shape}, expected {(n, A)}")
        if not np.all(np.isfinite(reward)):
            raise ValueError("reward entries must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        mu0 = np.full(n, 1.0 / n) if self.mu0 is None else np.array(self.mu0, dtype=float)
        check_distribution(mu0, n, "mu0")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be a positive integer or None")
        object.__setattr__(self, "reward", _frozen(reward))
        object.__setattr__(self, "mu0", _frozen(normalize_rows(mu0)))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return self.kernel.n

    @property
    def num_actions(self) -> int:
        return self.kernel.num_actions

    @property
    def v_max(self) -> float:
        """``max|r| / (1 - gamma)``; bounds every state value."""
        return float(np.abs(self.reward).max()) / (1.0 - self.gamma)

    def with_kernel(self, kernel: KernelPerAction) -> "LowerMdp":
        return LowerMdp(kernel, self.reward, self.gamma, self.mu0, self.horizon)


def check_distribution(p, n: int, name: str = "distribution") -> None:
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise DimensionMismatch(f"{name} has shape {p.shape}, expected ({n},)")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > ROW_TOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, expected 1")


def check_policy(pi, n: int, num_actions: int) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (n,):
        raise DimensionMismatch(f"policy has shape {pi.shape}, expected ({n},)")
    if not np.issubdtype(pi.dtype, np.integer):
        if not np.all(pi == np.round(pi)):
            raise ValueError("policy entries must be integers")
        pi = pi.astype(int)
    if np.any(pi < 0) or np.any(pi >= num_actions):
        raise ValueError(f"policy entries must lie in [0, {num_actions})")
    return pi


def collapse(mdp: LowerMdp, pi) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P^pi, r^pi)``: row ``s`` is ``P(. | s, pi(s))``."""
    pi = check_policy(pi, mdp.n, mdp.num_actions)
    states = np.arange(mdp.n)
    return mdp.kernel.mats[pi, states], mdp.reward[states, pi]


def solve_chain(p_pi: np.ndarray, r_pi: np.ndarray, gamma: float) -> np.ndarray:
    """Solve ``(I - gamma P) v = r`` for a policy-collapsed chain."""
    n = p_pi.shape[0]
    lhs = np.eye(n) - gamma * np.asarray(p_pi, dtype=float)
    try:
        v = np.linalg.solve(lhs, r_pi)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SingularSystemError("non-finite solution of the Bellman system")
    return v


def policy_evaluation_closed(mdp: LowerMdp, pi) -> np.ndarray:
    """Exact value of a deterministic policy via a dense linear solve."""
    p_pi, r_pi = collapse(mdp, pi)
    return solve_chain(p_pi, r_pi, mdp.gamma)


def q_values(mdp: LowerMdp, v) -> np.ndarray:
    """One-step lookahead ``r(s,a) + gamma * sum_s' P(s'|s,a) v(s')`` as ``(n, A)``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n,):
        raise DimensionMismatch(f"value vector has shape {v.shape}, expected ({mdp.n},)")
    return mdp.reward + mdp.gamma * (mdp.kernel.mats @ v).T


def greedy_policy(mdp: LowerMdp, v) -> np.ndarray:
    # np.argmax returns the first maximiser, i.e. the lowest action index on ties
    return np.argmax(q_values(mdp, v), axis=1)


def bellman_iterates(mdp: LowerMdp, v0=None) -> Iterator[np.ndarray]:
    """Yield ``V^1, V^2, ...`` of the Bellman optimality recursion from ``V^0``."""
    v = np.zeros(mdp.n) if v0 is None else np.array(v0, dtype=float)
    while True:
        v = q_values(mdp, v).max(axis=1)
        yield v


class ValueIterationResult(NamedTuple):
    values: np.ndarray
    policy: np.ndarray
    iterations: int


def value_iteration(mdp: LowerMdp, tol: float = 1e-10, max_iter: int = 100_000) -> ValueIterationResult:
    """Optimal values and greedy policy by value iteration from ``V^0 = 0``.

    Stops once successive iterates differ by at most ``tol`` in sup-norm.
    Raises :class:`NonConvergence` (with the last iterate attached) when
    ``max_iter`` is reached first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    prev = np.zeros(mdp.n)
    gap = np.inf
    iters = 0
    for iters, v in enumerate(bellman_iterates(mdp, prev), start=1):
        gap = np.max(np.abs(v - prev))
        prev = v
        if gap <= tol or iters >= max_iter:
            break
    result = ValueIterationResult(prev, greedy_policy(mdp, prev), iters)
    if gap > tol:
        raise NonConvergence(
            f"value iteration stopped after {iters} iterations with gap {gap:.3e} > {tol:.1e}",
            partial=result,
        )
    return result


def expected_return(v, mu0) -> float:
    """Initial expected return ``mu0 . v``."""
    v = np.asarray(v, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    if v.shape != mu0.shape or v.ndim != 1:
        raise DimensionMismatch(f"value shape {v.shape} vs mu0 shape {mu0.shape}")
    return float(mu0 @ v)


def random_kernel(rng: np.random.Generator, n: int, num_actions: int, concentration: float = 1.0) -> KernelPerAction:
    """Dirichlet-distributed rows; handy for tests and randomized harnesses."""
    mats = rng.dirichlet(np.full(n, concentration), size=(num_actions, n))
    return KernelPerAction(mats)


def stack_kernels(kernels: Sequence[KernelPerAction]) -> np.ndarray:
    return np.stack([k.mats for k in kernels])
