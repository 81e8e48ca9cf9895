"""Acceptance gate: one test per criterion, desk scale (n=1, T=1, N=50, M=1e5).

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""

import copy
import json

import numpy as np
import pytest
from scipy import integrate, stats

from geum.bsde import linear_bsde_oracle
from geum.cli import main
from geum.config import load_config
from geum.generators import make_kappa_ignorance, make_linear, make_zero
from geum.gexpectation import GExpectation, axiom_suite, default_payoffs, girsanov_grid
from geum.market import TimeGrid, simulate_ensemble
from geum.pointwise import InvestmentSet, inf_investment_log, inf_investment_power, sup_investment_exp
from geum.utility import h_exponential, h_log
from geum.verify import StrategyPair, compare, drift_field, extract_optimal, perturbation_battery, value_of

from conftest import solved

pytestmark = pytest.mark.slow

T, N, M, SEED = 1.0, 50, 100_000, 20240611

# frozen oracle: E[max(W_1, 0)] = 1/sqrt(2 pi)
E_MAX_W = 0.3989422804014327


@pytest.fixture(scope="module")
def ens():
    return simulate_ensemble(TimeGrid(T, N), 1, M, SEED)


def test_c01_classical_expectation(ens, acceptance):
    quad = integrate.quad(lambda x: max(x, 0.0) * stats.norm.pdf(x, scale=np.sqrt(T)), -12, 12, points=[0])[0]
    assert quad == pytest.approx(E_MAX_W, abs=1e-12)
    y0, se = GExpectation(make_zero(), ens).evaluate_with_error(lambda w: np.maximum(w[:, 0], 0.0))
    rel = abs(y0 - E_MAX_W) / E_MAX_W
    assert acceptance(1, rel <= 0.01, f"E_g[max(W_T,0)]={y0:.6f} oracle={E_MAX_W:.6f} rel={rel:.2e} (tol 1e-2)")


def test_c02_axiom_suite(ens, acceptance):
    fails, worst = [], {}
    for gen in (make_zero(), make_linear([0.3]), make_kappa_ignorance(0.5)):
        rep = axiom_suite(GExpectation(gen, ens), default_payoffs())
        fails += [f"{gen.kind}:{c.axiom}:{c.subject}" for c in rep.checks if not c.passed]
        b2 = [c.violation for c in rep.checks if c.axiom == "B2"]
        assert b2 and max(b2) == 0.0
        for ax in ("B1", "B3", "B4"):
            w = rep.worst(ax)
            if w is not None:
                worst[f"{gen.kind}:{ax}"] = w.violation / w.threshold if w.threshold > 0 else 0.0
    ratio = max(worst.values())
    assert acceptance(2, not fails,
                      f"failures={fails or 'none'}; B2 exact; worst violation/threshold={ratio:.2f}")


def test_c03_kappa_representation(ens, acceptance):
    kappa = 0.5
    y0, se = GExpectation(make_kappa_ignorance(kappa), ens).evaluate_with_error(lambda w: w[:, 0])
    inf_oracle = girsanov_grid(lambda x: x, kappa, T, mode="inf")[0]
    sup_oracle = girsanov_grid(lambda x: x, kappa, T, mode="sup")[0]
    target = -kappa * T
    ok = abs(y0 - target) <= 0.02 and abs(y0 - inf_oracle) <= 0.02
    assert acceptance(3, ok, f"E_g[W_T]={y0:.5f}+-{se:.1e}; criterion target -kT={target} "
                             f"(inf oracle {inf_oracle:.4f}, sup oracle {sup_oracle:.4f})")


def test_c04_linear_exponential(acceptance):
    pb, ens, sol = solved("exp_linear_unconstrained", M=M, N=N)
    a, b, phi = pb.linear_coefficients()
    oracle, se = linear_bsde_oracle(a, b, phi, pb.terminal, ens)
    rel = abs(sol.Y0 - oracle) / abs(oracle)
    closed = pb.value_from_Y0(sol.Y0)
    assert closed == -np.exp(-pb.gamma * (pb.h(0.0) * pb.x0 + sol.Y0))
    v = value_of(pb, extract_optimal(pb, sol, ens), solution=sol)
    rel_v = abs(v.value - closed) / abs(closed)
    ok = rel <= 0.02 and rel_v <= 0.02
    assert acceptance(4, ok, f"Y0={sol.Y0:.6f} oracle={oracle:.6f} rel={rel:.2e}; value={closed:.6f} "
                             f"value_of={v.value:.6f} rel={rel_v:.2e} (tol 2e-2)")


def test_c05_h_functions(acceptance):
    res = {}
    ok = True
    for r in (0.0, 0.05, 0.2):
        h = h_exponential(r, T)
        res[r] = h.residual()
        ok &= res[r] <= 1e-8 and h(T) == 1.0
    alpha, delta, beta = 0.5, 0.05, 1.0
    hl = h_log(alpha, delta, T, beta)
    errs = []
    for t in np.linspace(0, T, 11):
        ref = alpha * integrate.quad(lambda s: np.exp(-delta * (s - t)), t, T, epsabs=1e-13, epsrel=1e-12)[0] \
            + beta * np.exp(-delta * (T - t))
        errs.append(abs(hl(t) - ref))
    ok &= max(errs) <= 1e-10
    worst = max(res.values())
    assert acceptance(5, ok, f"exp residual max={worst:.1e} (tol 1e-8), h(T)=1 exact; "
                             f"log vs quad max={max(errs):.1e} (tol 1e-10)")


def _pointwise_case(kind, z, theta, g):
    free = InvestmentSet()
    if kind == "log":
        return [inf_investment_log(z, theta, g, free, method=m) for m in ("auto", "grid")]
    if kind == "power":
        return [inf_investment_power(z, theta, 0.5, g, free, method=m) for m in ("auto", "grid")]
    return [sup_investment_exp(z, theta, 0.8, 2.0, g, free, method=m) for m in ("auto", "grid")]


def test_c06_pointwise_vs_grid(acceptance):
    g = make_kappa_ignorance(0.5)
    rng = np.random.default_rng(6)
    worst_p, worst_v = 0.0, 0.0
    for kind in ("log", "power", "exponential"):
        z, theta = rng.uniform(-2, 2, 1000), rng.uniform(-1, 1, 1000)
        fast, grid = _pointwise_case(kind, z, theta, g)
        ok = ~fast.tied
        worst_p = max(worst_p, float(np.max(np.abs(fast.point[ok] - grid.point[ok]))))
        worst_v = max(worst_v, float(np.max(np.abs(fast.value - grid.value))))
    free = InvestmentSet()
    ties = [inf_investment_power(0.5 * 0.4, 0.4, 0.5, g, free), inf_investment_log(0.3, 0.3, g, free)]
    grid_ties = [inf_investment_power(0.5 * 0.4, 0.4, 0.5, g, free, method="grid"),
                 inf_investment_log(0.3, 0.3, g, free, method="grid")]
    n_min = [int(s.n_minimizers[0]) for s in ties + grid_ties]
    ok = worst_p <= 1e-3 and worst_v <= 1e-6 and n_min == [2, 2, 2, 2]
    assert acceptance(6, ok, f"3x1000 samples: max|argmin diff|={worst_p:.1e} (tol 1e-3), "
                             f"max|value diff|={worst_v:.1e} (tol 1e-6); tie minimizer counts={n_min}")


KAPPA = ("exp_kappa_unconstrained", "power_kappa_unconstrained", "log_kappa_unconstrained")


def test_c07_martingale_certificate(acceptance):
    parts, ok = [], True
    for name in KAPPA:
        means = {}
        for n in (25, 50):
            pb, ens, sol = solved(name, M=M, N=n)
            rep = drift_field(pb, sol, extract_optimal(pb, sol, ens))
            means[n] = rep.overall_mean_abs
            if n == 50:
                ok &= rep.overall_mean_abs <= 10 * ens.dt
        ratio = means[25] / means[50]
        ok &= ratio >= 1.5
        parts.append(f"{pb.kind}: mean|A|={means[50]:.2e} (tol {10 * T / 50:.1e}) ratio={ratio:.2f}")
    assert acceptance(7, ok, "; ".join(parts))


def test_c08_supermartingale_ordering(acceptance):
    parts, ok = [], True
    for name in KAPPA:
        pb, ens, sol = solved(name, M=M, N=N)
        opt = extract_optimal(pb, sol, ens)
        table = compare(pb, [opt] + perturbation_battery(pb, opt), solution=sol)
        worst = min(table.margin(r) for r in table.rows if r.label != "optimal")
        ok &= table.passed
        parts.append(f"{pb.kind}: worst margin={worst:+.2f} sigma")
    assert acceptance(8, ok, "; ".join(parts) + " (fail below -3)")


def test_c09_constrained_projection(acceptance):
    pb, ens, sol = solved("log_constrained_box", M=M, N=N)
    opt = extract_optimal(pb, sol, ens)
    p_max = float(pb.investment_set.upper[0])
    theta = float(pb.market.theta(0.0, np.zeros((1, 1)))[0, 0])
    assert theta > p_max
    pinned = bool(np.all(opt.p == p_max))
    verdicts = {}
    for q in (0.0, 0.025, 0.05, 0.075):
        alt = StrategyPair(np.full_like(opt.p, q), opt.c, ens, "fractional", "user_supplied", f"p={q}")
        verdicts[q] = drift_field(pb, sol, alt).verdict
    ok = pinned and all(v == "supermartingale" for v in verdicts.values())
    assert acceptance(9, ok, f"p*=p_max={p_max} everywhere: {pinned}; interior verdicts={verdicts}")


def test_c10_determinism(tmp_path, acceptance):
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["solve", "--config", "exp_kappa_unconstrained", "--out", str(o)]) for o in outs]
    files = sorted(p.name for p in outs[0].glob("*.csv"))
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    runs = [json.loads((o / "run.json").read_text()) for o in outs]
    for r in runs:
        r["metadata"].pop("wall_clock_seconds")
    ok = codes == [0, 0] and same and runs[0] == runs[1] and len(files) >= 3
    assert acceptance(10, ok, f"files={files} byte-identical={same}; Y0={runs[0]['summary']['Y0']!r}")
