"""JSON scenario files.

Three kinds are understood, distinguished by the top-level ``kind`` field:
``lower``, ``bilevel`` and ``tvcmdp``. Matrices are nested lists of numbers
and per-action matrices are objects keyed by action label. The format is
described in ``docs/scenario-format.md``.

Loading collects every violation before raising, each tagged with the path
of the offending value (``catalog[2].mats["left"].row[1]``).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bilevel import UpperMdp
from .core import ROW_TOL, KernelPerAction, LowerMdp
from .errors import MdpError, ParseError, ValidationError
from .tvcmdp import TvcScenario

KINDS = ("lower", "bilevel", "tvcmdp")


class _Checker:
    def __init__(self):
        self.problems: list[str] = []

    def fail(self, path: str, msg: str) -> None:
        self.problems.append(f"{path}: {msg}")

    def require(self, doc: dict, key: str, path: str):
        if key not in doc:
            self.fail(f"{path}{key}" if path else key, "missing")
            return None
        return doc[key]

    def number(self, value, path: str, lo=None, hi=None, hi_open=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {type(value).__name__}")
            return None
        v = float(value)
        if not np.isfinite(v):
            self.fail(path, "must be finite")
            return None
        if lo is not None and v < lo:
            self.fail(path, f"{v!r} is below {lo}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            self.fail(path, f"{v!r} must be {'<' if hi_open else '<='} {hi}")
        return v

    def matrix(self, value, path: str, shape=None):
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, "expected a rectangular numeric matrix")
            return None
        if arr.ndim != 2:
            self.fail(path, f"expected a matrix, got {arr.ndim} dimension(s)")
            return None
        if shape is not None and arr.shape != shape:
            self.fail(path, f"shape {arr.shape}, expected {shape}")
            return None
        if not np.all(np.isfinite(arr)):
            self.fail(path, "entries must be finite")
            return None
        return arr

    def stochastic(self, value, path: str, n=None):
        arr = self.matrix(value, path, None if n is None else (n[0], n[1]))
        if arr is None:
            return None
        ok = True
        if arr.shape[0] != arr.shape[1] and n is None:
            self.fail(path, f"expected a square matrix, got {arr.shape}")
            return None
        for i, row in enumerate(arr):
            for j, v in enumerate(row):
                if v < 0.0 or v > 1.0:
                    self.fail(f"{path}.row[{i}][{j}]", f"probability {float(v)!r} outside [0, 1]")
                    ok = False
            total = float(row.sum())
            if abs(total - 1.0) > ROW_TOL:
                self.fail(f"{path}.row[{i}]", f"sums to {total!r}, expected 1")
                ok = False
        return arr if ok else None

    def distribution(self, value, path: str, n: int):
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, "expected a numeric vector")
            return None
        if arr.shape != (n,):
            self.fail(path, f"length {arr.shape}, expected ({n},)")
            return None
        if np.any(arr < 0) or abs(arr.sum() - 1.0) > ROW_TOL:
            self.fail(path, f"not a probability vector (sum {arr.sum()!r})")
            return None
        return arr

    def per_action(self, value, path: str, actions, n=None):
        """Object of action label -> stochastic matrix, in ``actions`` order."""
        if not isinstance(value, dict):
            self.fail(path, "expected an object keyed by action label")
            return None
        extra = [k for k in value if k not in actions]
        for k in extra:
            self.fail(f'{path}["{k}"]', "unknown action label")
        mats = []
        for a in actions:
            if a not in value:
                self.fail(f'{path}["{a}"]', "missing")
                mats.append(None)
                continue
            mats.append(self.stochastic(value[a], f'{path}["{a}"]', None if n is None else (n, n)))
        if any(m is None for m in mats) or extra:
            return None
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            self.fail(path, f"matrices differ in shape: {sorted(shapes)}")
            return None
        return np.array(mats)

    def labels(self, value, path: str):
        if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
            self.fail(path, "expected a non-empty list of strings")
            return None
        if len(set(value)) != len(value):
            self.fail(path, "labels must be unique")
            return None
        return tuple(value)


def _lower_common(doc, chk: _Checker):
    actions = chk.labels(chk.require(doc, "actions", ""), "actions")
    gamma = chk.require(doc, "gamma", "")
    if gamma is not None:
        gamma = chk.number(gamma, "gamma", 0.0, 1.0, hi_open=True)
    return actions, gamma


def _parse_lower(doc, chk):
    actions, gamma = _lower_common(doc, chk)
    if actions is None:
        return None
    mats = chk.per_action(chk.require(doc, "kernel", ""), "kernel", actions)
    n = None if mats is None else mats.shape[1]
    reward = chk.require(doc, "reward", "")
    if reward is not None and n is not None:
        reward = chk.matrix(reward, "reward", (n, len(actions)))
    mu0 = doc.get("mu0")
    if mu0 is not None and n is not None:
        mu0 = chk.distribution(mu0, "mu0", n)
    horizon = doc.get("horizon")
    if horizon is not None and (not isinstance(horizon, int) or horizon < 1):
        chk.fail("horizon", "must be a positive integer or null")
    if chk.problems:
        return None
    return LowerMdp(KernelPerAction(mats, actions), reward, gamma, mu0, horizon)


def _parse_bilevel(doc, chk):
    actions, gamma = _lower_common(doc, chk)
    actions_b = chk.labels(chk.require(doc, "actions_b", ""), "actions_b")
    lam = chk.require(doc, "lambda", "")
    if lam is not None:
        lam = chk.number(lam, "lambda", 0.0, 1.0, hi_open=True)
    catalog = chk.require(doc, "catalog", "")
    if not isinstance(catalog, list) or not catalog:
        if catalog is not None:
            chk.fail("catalog", "expected a non-empty list")
        return None
    if actions is None:
        return None
    kernels, names, rewards = [], [], []
    n = None
    for i, entry in enumerate(catalog):
        path = f"catalog[{i}]"
        if not isinstance(entry, dict):
            chk.fail(path, "expected an object with 'mats'")
            kernels.append(None)
            continue
        mats = chk.per_action(chk.require(entry, "mats", f"{path}."), f"{path}.mats", actions,
                              None if n is None else n)
        if mats is not None and n is None:
            n = mats.shape[1]
        kernels.append(mats)
        names.append(str(entry.get("name", f"P{i + 1}")))
        rw = entry.get("reward")
        if rw is not None and n is not None:
            rw = chk.matrix(rw, f"{path}.reward", (n, len(actions)))
        rewards.append(rw)
    m = len(catalog)
    reward = doc.get("reward")
    if reward is not None and n is not None:
        reward = chk.matrix(reward, "reward", (n, len(actions)))
    per_kernel = [r is not None for r in rewards]
    if reward is None and not all(per_kernel):
        missing = [i for i, has in enumerate(per_kernel) if not has]
        chk.fail("reward", f"missing, and catalog entries {missing} carry no reward of their own")
    q_doc = chk.require(doc, "q", "")
    q = None
    if q_doc is not None and actions_b is not None:
        q = chk.per_action(q_doc, "q", actions_b, m)
    cost = chk.require(doc, "cost", "")
    if cost is not None and actions_b is not None:
        cost = chk.matrix(cost, "cost", (m, len(actions_b)))
    mu0 = doc.get("mu0")
    if mu0 is not None and n is not None:
        mu0 = chk.distribution(mu0, "mu0", n)
    episodes = doc.get("episodes")
    if episodes is not None and (not isinstance(episodes, int) or episodes < 1):
        chk.fail("episodes", "must be a positive integer or null")
    if chk.problems:
        return None
    if any(per_kernel):
        rewards = np.array([r if r is not None else reward for r in rewards])
    else:
        rewards = None
    return UpperMdp(
        catalog=tuple(KernelPerAction(k, actions) for k in kernels),
        reward=reward, gamma=gamma, q=q, cost=cost, lam=lam, mu0=mu0,
        actions_b=actions_b, episodes=episodes, rewards=rewards, names=tuple(names),
    )


def _parse_tvcmdp(doc, chk):
    actions, gamma = _lower_common(doc, chk)
    kernels_doc = chk.require(doc, "kernels", "")
    if not isinstance(kernels_doc, list) or not kernels_doc:
        if kernels_doc is not None:
            chk.fail("kernels", "expected a non-empty list")
        return None
    if actions is None:
        return None
    kernels = []
    n = None
    for k, entry in enumerate(kernels_doc):
        mats = chk.per_action(entry, f"kernels[{k}]", actions, n)
        if mats is not None and n is None:
            n = mats.shape[1]
        kernels.append(mats)
    reward = chk.require(doc, "reward", "")
    if reward is not None and n is not None:
        reward = chk.matrix(reward, "reward", (n, len(actions)))
    mu0 = doc.get("mu0")
    if mu0 is not None and n is not None:
        mu0 = chk.distribution(mu0, "mu0", n)
    alpha = chk.number(doc.get("cost_alpha", 1.0), "cost_alpha", 0.0)
    beta = chk.number(doc.get("cost_beta", 1.0), "cost_beta", 0.0)
    budget = chk.number(doc.get("budget", 0.0), "budget", 0.0)
    grid = doc.get("budget_grid", [])
    if not isinstance(grid, list):
        chk.fail("budget_grid", "expected a list of numbers")
        grid = []
    grid = [chk.number(b, f"budget_grid[{i}]", 0.0) for i, b in enumerate(grid)]
    if chk.problems:
        return None
    return TvcScenario(tuple(KernelPerAction(k, actions) for k in kernels), reward, gamma, mu0,
                       alpha, beta, budget, tuple(grid))


_PARSERS = {"lower": _parse_lower, "bilevel": _parse_bilevel, "tvcmdp": _parse_tvcmdp}


def parse_scenario(doc):
    """Build a scenario object from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ValidationError([f"kind: expected one of {list(KINDS)}, got {kind!r}"])
    chk = _Checker()
    try:
        scn = _PARSERS[kind](doc, chk)
    except MdpError as exc:
        # constructor-level checks that the walk above does not repeat
        chk.problems.append(str(exc))
        scn = None
    if chk.problems or scn is None:
        raise ValidationError(chk.problems or ["invalid scenario"])
    return scn


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_scenario(doc)


def _per_action(mats: np.ndarray, labels) -> dict:
    return {a: mats[i].tolist() for i, a in enumerate(labels)}


def scenario_to_dict(scn) -> dict:
    if isinstance(scn, LowerMdp):
        return {
            "kind": "lower",
            "actions": list(scn.kernel.actions),
            "kernel": _per_action(scn.kernel.mats, scn.kernel.actions),
            "reward": scn.reward.tolist(),
            "gamma": scn.gamma,
            "mu0": scn.mu0.tolist(),
            "horizon": scn.horizon,
        }
    if isinstance(scn, UpperMdp):
        actions = scn.catalog[0].actions
        catalog = []
        for i, k in enumerate(scn.catalog):
            entry = {"name": scn.names[i], "mats": _per_action(k.mats, actions)}
            if scn.rewards is not None:
                entry["reward"] = scn.rewards[i].tolist()
            catalog.append(entry)
        doc = {
            "kind": "bilevel",
            "actions": list(actions),
            "catalog": catalog,
            "gamma": scn.gamma,
            "mu0": scn.mu0.tolist(),
            "actions_b": list(scn.actions_b),
            "q": _per_action(scn.q, scn.actions_b),
            "cost": scn.cost.tolist(),
            "lambda": scn.lam,
            "episodes": scn.episodes,
        }
        if scn.reward is not None:
            doc["reward"] = scn.reward.tolist()
        return doc
    if isinstance(scn, TvcScenario):
        actions = scn.kernels[0].actions
        return {
            "kind": "tvcmdp",
            "actions": list(actions),
            "kernels": [_per_action(k.mats, actions) for k in scn.kernels],
            "reward": scn.reward.tolist(),
            "gamma": scn.gamma,
            "mu0": scn.mu0.tolist(),
            "cost_alpha": scn.cost_alpha,
            "cost_beta": scn.cost_beta,
            "budget": scn.budget,
            "budget_grid": list(scn.budget_grid),
        }
    raise TypeError(f"cannot serialise {type(scn).__name__}")


def _encode(obj, depth: int = 0) -> str:
    """Indented JSON with every flat list of scalars (a matrix row) on one line."""
    pad, inner = " " * depth, " " * (depth + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(v, depth + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list) and obj and any(isinstance(v, (list, dict)) for v in obj):
        items = [inner + _encode(v, depth + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    # json writes floats with repr, so every entry round-trips bit for bit
    return json.dumps(obj)


def dump_scenario(scn) -> str:
    return _encode(scenario_to_dict(scn))


def save_scenario(scn, path) -> None:
    Path(path).write_text(dump_scenario(scn) + "\n")
