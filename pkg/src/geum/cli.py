"""``geum`` command line: solve, verify, compare, gexp, axioms, tables.

Exit codes: 0 success, 2 configuration error (nothing written), 3 numerical
failure or a failed check under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import scipy

from . import __version__
from .bsde import RegressionBackend, TreeBackend, solve_backward
from .config import Scenario, bundled_scenarios, load_config
from .errors import ConfigurationError, DomainError, GeumError, UsageError
from .generators import from_config as generator_from_config
from .generators import validate_generator
from .gexpectation import GExpectation, axiom_suite, default_payoffs, girsanov_grid
from .market import simulate_ensemble
from .verify import compare, drift_field, extract_optimal, perturbation_battery, simulate

log = logging.getLogger("geum")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def fmt(x) -> str:
    """Floats at 17 significant digits (round-trip exact)."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


class StrictFailure(Exception):
    """A check failed under ``--strict``; outputs are already written."""


# ---------------------------------------------------------------------------
# pipeline


class Run:
    """Shared state of one scenario run (ensemble, problem, solution)."""

    def __init__(self, scenario: Scenario, strict: bool = False):
        self.scenario = scenario
        self.strict = strict or bool(scenario.run.get("strict", False))
        self.problem = scenario.problem()
        self.grid = scenario.grid
        s = scenario.solver
        self.backend_kind = s["backend"]
        self.ensemble = None
        self.solution = None
        self.optimal = None

    def build_ensemble(self):
        s = self.scenario.solver
        n = self.problem.market.n
        if self.backend_kind == "tree":
            if n != 1:
                raise ConfigurationError("tree backend supports one Brownian dimension only")
            return None
        log.info("simulating %d paths x %d steps (seed %d)", s["M"], s["N"], s["seed"])
        self.ensemble = simulate_ensemble(self.grid, n, int(s["M"]), int(s["seed"]))
        return self.ensemble

    def solve(self):
        s = self.scenario.solver
        if self.ensemble is None and self.backend_kind == "regression":
            self.build_ensemble()
        backend = TreeBackend(self.grid) if self.backend_kind == "tree" else \
            RegressionBackend(self.ensemble, int(s["degree"]))
        y_bound = float(s.get("y_bound", self.problem.y_bound()))
        self.solution = solve_backward(self.problem.driver(), self.problem.terminal, backend,
                                       y_bound=y_bound, z_cap=float(s["z_cap"]), strict=self.strict)
        return self.solution

    def require_regression(self, what: str):
        if self.backend_kind != "regression":
            raise UsageError(f"{what} needs the regression backend")

    def extract(self):
        self.require_regression("strategy extraction")
        if self.solution is None:
            self.solve()
        self.optimal = extract_optimal(self.problem, self.solution, self.ensemble)
        return self.optimal

    def summary_row(self) -> dict:
        sol = self.solution
        return {
            "scenario": self.scenario.name,
            "utility": self.problem.kind,
            "generator": self.problem.generator.kind,
            "backend": self.backend_kind,
            "N": self.grid.n_steps,
            "M": self.scenario.solver["M"] if self.backend_kind == "regression" else 0,
            "seed": self.scenario.solver["seed"],
            "Y0": sol.Y0,
            "std_error": sol.std_error,
            "optimal_value": self.problem.value_from_Y0(sol.Y0),
        }


def _metadata(run: Run, started: float, command: str) -> dict:
    return {
        "command": command,
        "config_hash": run.scenario.config_hash,
        "input_digest": run.scenario.digest,
        "wall_clock_seconds": time.time() - started,
        "versions": {
            "geum": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _solution_rows(run: Run):
    sol = run.solution
    t = run.grid.nodes
    for i in range(sol.terminal_index + 1):
        y = sol.y(i)
        if i < sol.terminal_index:
            z = sol.z(i)[:, 0]
            zm, zs = float(np.mean(z)), float(np.std(z))
            res, yc, zc = sol.residuals[i], sol.y_clamps[i], sol.z_clamps[i]
        else:
            zm = zs = res = np.nan
            yc = zc = 0
        yield [i, t[i], float(np.mean(y)), float(np.std(y)), zm, zs, res, int(yc), int(zc)]


def cmd_solve(run: Run, out: Path, started: float) -> int:
    run.solve()
    row = run.summary_row()
    write_csv(out / "summary.csv", list(row), [list(row.values())])
    write_csv(out / "solution.csv",
              ["step", "t", "Y_mean", "Y_std", "Z_mean", "Z_std", "residual", "y_clamps", "z_clamps"],
              _solution_rows(run))
    artifact = {"summary": row, "solver": run.solution.report(), "problem": _problem_block(run)}
    if run.backend_kind == "regression":
        opt = run.extract()
        traj = simulate(run.problem, opt)
        t = run.grid.nodes
        rows = []
        for i in range(run.grid.n_steps):
            p = opt.p[:, i, 0]
            c = traj.c[:, i]
            rows.append([i, t[i], float(np.mean(p)), float(np.std(p)), float(np.mean(c)), float(np.std(c)),
                         float(np.mean(traj.X[:, i]))])
        write_csv(out / "strategy.csv", ["step", "t", "p_mean", "p_std", "c_mean", "c_std", "X_mean"], rows)
        artifact["strategy"] = {
            "p_mean": float(np.mean(opt.p)), "p_std": float(np.std(opt.p)),
            "c_mean": float(np.mean(traj.c)), "X_T_mean": float(np.mean(traj.X[:, -1])),
        }
    artifact["metadata"] = _metadata(run, started, "solve")
    write_json(out / "run.json", artifact)
    log.info("Y0 = %s, value = %s", fmt(row["Y0"]), fmt(row["optimal_value"]))
    return EXIT_OK


def _problem_block(run: Run) -> dict:
    pr = run.problem
    return {"utility": pr.kind, "gamma": pr.gamma, "alpha": pr.alpha, "beta": pr.beta,
            "x0": pr.x0, "generator": pr.generator.describe()}


def cmd_verify(run: Run, out: Path, started: float) -> int:
    run.require_regression("verify")
    run.solve()
    opt = run.extract()
    rep = drift_field(run.problem, run.solution, opt)
    pert = run.scenario.run.get("perturbation", {})
    others = perturbation_battery(run.problem, opt, float(pert.get("eps", 0.2)), int(pert.get("shift", 1)))
    verdicts = {}
    for s in others:
        r = drift_field(run.problem, run.solution, s)
        verdicts[s.label] = {"verdict": r.verdict, "max_A_exact": r.max_exact,
                             "fraction_strictly_negative": r.frac_negative}
    t = run.grid.nodes
    write_csv(out / "drift.csv",
              ["step", "t", "mean_abs_A", "max_abs_A", "mean_A", "max_A_exact", "investment_part", "consumption_part"],
              ([i, t[i], rep.mean_abs[i], rep.max_abs[i], rep.mean[i], rep.exact_max[i],
                rep.investment_mean[i], rep.consumption_mean[i]] for i in range(run.grid.n_steps)))
    row = run.summary_row()
    row["verdict"] = rep.verdict
    row["max_abs_A"] = rep.overall_max_abs
    write_csv(out / "summary.csv", list(row), [list(row.values())])
    write_json(out / "drift.json", {"optimal": rep.as_dict(), "perturbations": verdicts})
    write_json(out / "run.json", {"summary": row, "solver": run.solution.report(),
                                  "metadata": _metadata(run, started, "verify")})
    bad = rep.verdict != "martingale" or any(v["verdict"] == "violated" for v in verdicts.values())
    log.info("optimal strategy verdict: %s", rep.verdict)
    if bad and run.strict:
        raise StrictFailure(f"drift certificate failed (optimal: {rep.verdict})")
    return EXIT_OK


def cmd_compare(run: Run, out: Path, started: float) -> int:
    run.require_regression("compare")
    run.solve()
    opt = run.extract()
    pert = run.scenario.run.get("perturbation", {})
    others = perturbation_battery(run.problem, opt, float(pert.get("eps", 0.2)), int(pert.get("shift", 1)))
    table = compare(run.problem, [opt] + others, solution=run.solution)
    rows = table.as_rows()
    write_csv(out / "ranking.csv", list(rows[0]), [list(r.values()) for r in rows])
    summary = run.summary_row()
    summary["ranking_passed"] = table.passed
    write_json(out / "compare.json", {"passed": table.passed, "R0_spread": table.R0_spread, "rows": rows})
    write_json(out / "run.json", {"summary": summary, "solver": run.solution.report(),
                                  "ranking": rows, "metadata": _metadata(run, started, "compare")})
    if not table.passed and run.strict:
        raise StrictFailure("a competitor beat the optimal strategy beyond 3 standard errors")
    return EXIT_OK


def _generator_override(spec: Optional[str]):
    if spec is None:
        return None
    kind, _, arg = spec.partition(":")
    block = {"kind": kind}
    try:
        if kind == "linear":
            block["eta"] = [float(v) for v in arg.split(",")]
        elif kind == "kappa":
            block["kappa"] = float(arg)
    except ValueError:
        raise ConfigurationError(f"cannot parse generator {spec!r}") from None
    return generator_from_config(block)


def _select_payoffs(names):
    payoffs = default_payoffs()
    if not names:
        return payoffs
    known = {p.name: p for p in payoffs}
    missing = [n for n in names if n not in known]
    if missing:
        raise ConfigurationError(f"unknown payoffs {missing}; available: {sorted(known)}")
    return [known[n] for n in names]


def _gexp(run: Run, generator, validate: bool = True) -> GExpectation:
    s = run.scenario.solver
    if run.backend_kind == "tree":
        return GExpectation(generator, grid=run.grid, backend="tree", degree=int(s["degree"]),
                            validate=validate, strict=run.strict)
    ens = run.ensemble or run.build_ensemble()
    return GExpectation(generator, ens, degree=int(s["degree"]), validate=validate, strict=run.strict)


def cmd_gexp(run: Run, out: Path, started: float, args) -> int:
    gen = _generator_override(args.generator) or run.problem.generator
    payoffs = _select_payoffs(args.payoff or run.scenario.run.get("payoffs"))
    if run.backend_kind == "tree":
        payoffs = [p for p in payoffs if p.markov]
    ge = _gexp(run, gen)
    rows, report = [], []
    for p in payoffs:
        sol = ge.solve(p)
        oracle = np.nan
        if gen.kind == "kappa" and p.markov:
            oracle = girsanov_grid(lambda x, f=p.terminal: f(x[:, None]), gen.kappa, run.grid.T)[0]
        rows.append([p.name, sol.Y0, sol.std_error, oracle])
        report.append({"payoff": p.name, "value": sol.Y0, "std_error": sol.std_error,
                       "girsanov_sup_oracle": oracle})
    write_csv(out / "gexp.csv", ["payoff", "value", "std_error", "girsanov_sup_oracle"], rows)
    target = Path(args.report) if args.report else out / "gexp.json"
    write_json(target, {"generator": gen.describe(), "results": report,
                        "metadata": _metadata(run, started, "gexp")})
    return EXIT_OK


def cmd_axioms(run: Run, out: Path, started: float) -> int:
    gen = run.problem.generator
    n = run.problem.market.n
    val = validate_generator(gen, n=n, T=run.grid.T)
    ge = _gexp(run, gen, validate=False)
    if run.backend_kind == "tree":
        raise UsageError("the axiom suite needs the regression backend")
    rep = axiom_suite(ge)
    rows = [[c.axiom, c.subject, c.lhs, c.rhs, c.violation, c.threshold, c.passed] for c in rep.checks]
    write_csv(out / "axioms.csv", ["axiom", "subject", "lhs", "rhs", "violation", "threshold", "passed"], rows)
    write_json(out / "axioms.json", {"validation": val.as_dict(), "suite": rep.as_dict(),
                                     "metadata": _metadata(run, started, "axioms")})
    log.info("generator validation ok=%s, axiom suite passed=%s", val.ok, rep.passed)
    if run.strict and not (val.ok and rep.passed):
        raise StrictFailure(f"generator validation {val.as_dict()} / axioms passed={rep.passed}")
    return EXIT_OK


def cmd_tables(artifacts: List[str], out: Path) -> int:
    """Flatten ``run.json`` artifacts into ``tables.csv``."""
    paths = []
    for a in artifacts:
        p = Path(a)
        paths.extend(sorted(p.glob("**/run.json")) if p.is_dir() else [p])
    if not paths:
        raise ConfigurationError("tables: no run.json artifacts found")
    header = ["scenario", "utility", "generator", "strategy", "Y0", "optimal_value", "max_abs_drift",
              "value", "rank", "optimal_flag"]
    arts = [json.loads(p.read_text()) for p in paths]
    drifts = {a["summary"]["scenario"]: a["summary"]["max_abs_A"] for a in arts if "max_abs_A" in a["summary"]}
    rows = []
    for art in arts:
        s = art["summary"]
        if "max_abs_A" in s and any("ranking" in a and a["summary"]["scenario"] == s["scenario"] for a in arts):
            continue  # merged into the ranking rows
        base = [s["scenario"], s["utility"], s["generator"]]
        drift = drifts.get(s["scenario"], np.nan)
        if "ranking" in art:
            for r in art["ranking"]:
                rows.append(base + [r["strategy"], s["Y0"], s["optimal_value"], drift, r["value"], r["rank"],
                                    r["optimal"]])
        else:
            rows.append(base + ["optimal", s["Y0"], s["optimal_value"], drift, s["optimal_value"], 1, True])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "tables.csv", header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geum", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify", "compare", "gexp", "axioms"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True,
                        help=f"TOML/JSON scenario file or bundled name ({', '.join(bundled_scenarios())})")
        sp.add_argument("--out", default="geum_out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--strict", action="store_true", help="escalate warnings and failed checks")
        sp.add_argument("--backend", choices=("regression", "tree"))
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "gexp":
            sp.add_argument("--generator", help="zero | linear:ETA[,ETA..] | kappa:K")
            sp.add_argument("--payoff", action="append", help="payoff name (repeatable)")
            sp.add_argument("--report", help="JSON report path (default OUT/gexp.json)")
    tp = sub.add_parser("tables")
    tp.add_argument("artifacts", nargs="+", help="run directories or run.json files")
    tp.add_argument("--out", default="geum_out")
    tp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    started = time.time()
    out = Path(args.out)
    if args.command == "tables":
        try:
            return cmd_tables(args.artifacts, out)
        except (ConfigurationError, OSError, ValueError, KeyError) as exc:
            print(f"geum: configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        scenario = load_config(args.config, seed=args.seed, backend=args.backend)
        run = Run(scenario, strict=args.strict)
        if args.command in ("verify", "compare"):
            run.require_regression(args.command)
        if args.command == "gexp":
            _generator_override(args.generator)
            _select_payoffs(args.payoff or scenario.run.get("payoffs"))
        if args.command == "axioms" and run.backend_kind == "tree":
            raise UsageError("the axiom suite needs the regression backend")
    except (ConfigurationError, DomainError, UsageError) as exc:
        print(f"geum: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "solve":
            return cmd_solve(run, out, started)
        if args.command == "verify":
            return cmd_verify(run, out, started)
        if args.command == "compare":
            return cmd_compare(run, out, started)
        if args.command == "gexp":
            return cmd_gexp(run, out, started, args)
        return cmd_axioms(run, out, started)
    except StrictFailure as exc:
        print(f"geum: check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigurationError as exc:
        print(f"geum: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeumError, FloatingPointError, np.linalg.LinAlgError) as exc:
        info = {"error": type(exc).__name__, "message": str(exc),
                "path": getattr(exc, "path", None), "step": getattr(exc, "step", None)}
        write_json(out / "error.json", info)
        print(f"geum: numerical failure: {exc} (details in {out / 'error.json'})", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
