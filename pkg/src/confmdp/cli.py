"""Command-line entry point: ``confmdp <subcommand> ...``.

Every subcommand writes a CSV table (or JSON with ``--format json``) to
stdout or ``--out``. Failures exit nonzero and print one JSON object on
stderr: 2 for invalid input, 3 for solver failures, 4 for I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, scenarios
from .bilevel import (
    KernelDataset,
    TransitionDataset,
    UpperMdp,
    associate_kernel,
    estimate_lower_kernel,
    estimate_upper_kernel,
    row_tv,
    solve_bilevel,
)
from .core import LowerMdp, expected_return, value_iteration
from .errors import (
    MdpError,
    NonConvergence,
    ParseError,
    SingularSystemError,
    SolverStall,
    ValidationError,
)
from .io import load_scenario, save_scenario
from .sim import MODES, RunConfig, budget_sweep, compare_modes, fmt, sweep_csv
from .tvcmdp import TvcScenario

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
MAX_ALPHA_POINTS = 1000


class UsageError(ValueError):
    pass


# -- output helpers -----------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"


def _table(args, header, rows, extra=None) -> str:
    if args.format == "json":
        doc = {"columns": list(header), "rows": [list(r) for r in rows]}
        doc["rows"] = [[v.item() if isinstance(v, np.generic) else v for v in r] for r in doc["rows"]]
        if extra:
            doc.update(extra)
        return _json(doc)
    return _csv(header, rows)


def _load(path: str, kind):
    """Load a scenario file, or a built-in scenario when no such file exists."""
    if not Path(path).exists() and path in scenarios.BUILTINS:
        scn = scenarios.BUILTINS[path]()
    else:
        scn = load_scenario(path)
    if not isinstance(scn, kind):
        names = {LowerMdp: "lower", UpperMdp: "bilevel", TvcScenario: "tvcmdp"}
        raise UsageError(f"{path}: expected a {names[kind]} scenario")
    return scn


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


# -- subcommands ----------------------------------------------------------------

def cmd_solve_lower(args) -> str:
    mdp = _load(args.scenario, LowerMdp)
    res = value_iteration(mdp, args.tol, args.max_iter)
    labels = mdp.kernel.actions
    rows = [(s, float(res.values[s]), int(res.policy[s]), labels[res.policy[s]]) for s in range(mdp.n)]
    j = expected_return(res.values, mdp.mu0)
    return _table(args, ("state", "value", "action", "label"), rows,
                  {"J": j, "iterations": res.iterations})


def cmd_solve_bilevel(args) -> str:
    upper = _load(args.scenario, UpperMdp)
    sol = solve_bilevel(upper, args.tol, args.max_iter)
    rows = [(i, upper.names[i], float(sol.j[i]), float(sol.w[i]), int(sol.theta[i]),
             upper.actions_b[sol.theta[i]]) for i in range(upper.m)]
    extra = {"policies": [p.tolist() for p in sol.policies], "iterations": sol.iterations}
    return _table(args, ("kernel", "name", "J", "W", "theta", "action"), rows, extra)


def cmd_configure_tv(args) -> str:
    scn = _load(args.scenario, TvcScenario)
    grid = args.budget_grid if args.budget_grid is not None else list(scn.budget_grid) or [scn.budget]
    if any(b < 0 for b in grid):
        raise UsageError("budgets must be nonnegative")
    rows = budget_sweep(scn, grid, rounds=args.rounds, n_random=args.random, seed=args.seed)
    if args.format == "json":
        return _json([{"budget": r.budget, "baseline": r.baseline, "random_mean": r.random_mean,
                       "random_std": r.random_std, "optimized": r.optimized,
                       "total_cost": r.total_cost} for r in rows])
    return sweep_csv(rows)


def cmd_simulate(args) -> str:
    upper = _load(args.scenario, UpperMdp)
    modes = MODES if args.modes == "all" else tuple(m.strip() for m in args.modes.split(","))
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise UsageError(f"unknown mode(s) {bad}; choose from {list(MODES)} or 'all'")
    sol = solve_bilevel(upper, args.tol, args.max_iter)
    cfg = RunConfig(args.seed, args.episodes, args.horizon, args.upper_horizon)
    report = compare_modes(upper, cfg, sol, modes)
    if args.format == "json":
        return _json({"horizon": report.horizon, "upper_horizon": report.upper_horizon,
                      "truncation_bound": report.truncation_bound,
                      "rows": [r.__dict__ for r in report.rows]})
    return report.to_csv()


def _infer_size(col: np.ndarray, given, fallback):
    if given is not None:
        return given
    if fallback is not None:
        return fallback
    return int(col.max()) + 1 if col.size else 0


def cmd_estimate(args) -> str:
    if args.lower is None and args.upper is None:
        raise UsageError("give --lower and/or --upper")
    upper = _load(args.scenario, UpperMdp) if args.scenario else None
    rows, kernels = [], {}
    if args.lower is not None:
        ds = TransitionDataset.read_csv(args.lower)
        rec = ds.records
        n = _infer_size(np.concatenate([rec[:, 0], rec[:, 3]]), args.states,
                        upper.catalog[0].n if upper else None)
        A = _infer_size(rec[:, 1], args.actions, upper.catalog[0].num_actions if upper else None)
        est = estimate_lower_kernel(ds, n, A, smoothing=args.smoothing)
        nearest, name, dist = "", "", ""
        if upper is not None:
            nearest, dist = associate_kernel(est, upper.catalog)
            name = upper.names[nearest]
        rows.append(("lower", len(ds), n, A, nearest, name, dist))
        labels = upper.catalog[0].actions if upper else est.actions
        kernels["lower"] = {a: est.mats[i].tolist() for i, a in enumerate(labels)}
    if args.upper is not None:
        ds = KernelDataset.read_csv(args.upper)
        rec = ds.records
        m = _infer_size(np.concatenate([rec[:, 0], rec[:, 3]]), args.kernels,
                        upper.m if upper else None)
        B = _infer_size(rec[:, 1], args.config_actions, upper.num_b if upper else None)
        q_hat = estimate_upper_kernel(ds, m, B, smoothing=args.smoothing)
        dist = ""
        if upper is not None:
            if q_hat.shape != upper.q.shape:
                raise UsageError(f"estimated Q has shape {q_hat.shape}, scenario has {upper.q.shape}")
            dist = float(row_tv(q_hat, upper.q).max())
        rows.append(("upper", len(ds), m, B, "", "", dist))
        labels = upper.actions_b if upper else tuple(str(b) for b in range(B))
        kernels["upper"] = {a: q_hat[i].tolist() for i, a in enumerate(labels)}
    if args.kernel_out:
        Path(args.kernel_out).write_text(_json(kernels))
    header = ("level", "samples", "states", "actions", "nearest", "nearest_name", "tv")
    if args.format == "json":
        return _json({"columns": list(header), "rows": [list(r) for r in rows], "kernels": kernels})
    return _csv(header, rows)


def cmd_diagnose(args) -> str:
    lemmas = (1, 2, 3) if args.lemma == "all" else (int(args.lemma),)
    defaults = {1: 200, 2: 100, 3: 100}
    rows = []
    for lemma in lemmas:
        rep = diagnostics.run_harness(lemma, args.instances or defaults[lemma], args.seed, args.mu0_norm)
        rows.append((lemma, rep.instances, rep.violations, rep.max_observed, rep.min_margin, rep.max_ratio))
    return _table(args, ("lemma", "instances", "violations", "max_observed", "min_margin", "max_ratio"), rows)


def cmd_examples(args) -> str:
    if not 2 <= args.alpha_points <= MAX_ALPHA_POINTS:
        raise UsageError(f"--alpha-points must lie in [2, {MAX_ALPHA_POINTS}]")
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    built = {
        "tvcmdp-paper": scenarios.tvcmdp_paper(),
        "bilevel-paper": scenarios.bilevel_paper(),
        "blockworld": scenarios.blockworld(args.alpha_points),
    }
    rows = []
    for name, scn in built.items():
        path = out / f"{name}.json"
        save_scenario(scn, path)
        rows.append((name, str(path)))
    return _table(args, ("scenario", "path"), rows)


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def globals_(suppress: bool) -> argparse.ArgumentParser:
        # global flags are accepted before or after the subcommand; the
        # subcommand copy suppresses its defaults so it never masks the first
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--tol", type=float, default=d(1e-10), help="value iteration stopping tolerance")
        g.add_argument("--max-iter", type=int, default=d(100_000), help="value iteration iteration cap")
        g.add_argument("--out", default=d(None), help="output file (default: stdout)")
        g.add_argument("--format", choices=("csv", "json"), default=d("csv"))
        return g

    common = globals_(True)
    parser = argparse.ArgumentParser(prog="confmdp", description="Configurable MDP toolkit",
                                     parents=[globals_(False)])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("solve-lower", cmd_solve_lower, "value iteration on a lower-level MDP")
    p.add_argument("scenario")

    p = add("solve-bilevel", cmd_solve_bilevel, "solve every catalog kernel and the upper MDP")
    p.add_argument("scenario")

    p = add("configure-tv", cmd_configure_tv, "budget sweep for a time-varying configurable MDP")
    p.add_argument("scenario")
    p.add_argument("--budget-grid", type=_floats, default=None, help="comma-separated budgets")
    p.add_argument("--rounds", type=int, default=3, help="alternating solver rounds")
    p.add_argument("--random", type=int, default=50, help="random configurations per budget")
    p.add_argument("--seed", type=int, default=0)

    p = add("simulate", cmd_simulate, "Monte-Carlo comparison of configuration modes")
    p.add_argument("scenario")
    p.add_argument("--modes", default="all", help="'all' or a comma-separated subset of " + ",".join(MODES))
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None, help="lower truncation T")
    p.add_argument("--upper-horizon", type=int, default=None, help="upper episodes per run")

    p = add("estimate", cmd_estimate, "empirical kernel estimates from transition CSVs")
    p.add_argument("--lower", default=None, help="CSV of s,a,r,s_next records")
    p.add_argument("--upper", default=None, help="CSV of p_idx,b,R,p_next_idx records")
    p.add_argument("--scenario", default=None, help="bilevel scenario for sizes and association")
    p.add_argument("--states", type=int, default=None)
    p.add_argument("--actions", type=int, default=None)
    p.add_argument("--kernels", type=int, default=None, help="catalog size m")
    p.add_argument("--config-actions", type=int, default=None, help="number of model-changing actions")
    p.add_argument("--smoothing", action="store_true", help="add-one smoothing of counts")
    p.add_argument("--kernel-out", default=None, help="write estimated matrices as JSON here")

    p = add("diagnose", cmd_diagnose, "randomized checks of the value-error bounds")
    p.add_argument("--lemma", choices=("1", "2", "3", "all"), default="all")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--seed", type=int, default=diagnostics.HARNESS_SEED)
    p.add_argument("--mu0-norm", choices=diagnostics.MU0_NORMS, default="inf")

    p = add("examples", cmd_examples, "write the built-in scenarios as JSON files")
    p.add_argument("--dir", default=".")
    p.add_argument("--alpha-points", type=int, default=101)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (NonConvergence, SingularSystemError, SolverStall, np.linalg.LinAlgError)):
        return EXIT_SOLVER
    if isinstance(exc, (ValidationError, ParseError, UsageError, MdpError, ValueError, IndexError)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1


def _report(exc: BaseException, code: int) -> None:
    doc = {"error": type(exc).__name__, "exit": code, "message": str(exc)}
    if isinstance(exc, ValidationError):
        doc["problems"] = exc.problems
    if isinstance(exc, NonConvergence) and exc.kernel_index is not None:
        doc["kernel_index"] = exc.kernel_index
    sys.stderr.write(json.dumps(doc) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = args.func(args)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    except Exception as exc:  # every failure becomes one JSON line and an exit code
        code = _exit_code(exc)
        if code == 1:
            raise
        _report(exc, code)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
