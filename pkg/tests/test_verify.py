import numpy as np
import pytest

from geum.errors import UsageError
from geum.verify import (
    StrategyPair,
    compare,
    drift_field,
    extract_optimal,
    perturbation_battery,
    simulate,
    value_of,
)
from geum.verify import R0 as r0_of

KAPPA_CASES = ["exp_kappa_unconstrained", "power_kappa_unconstrained", "log_kappa_unconstrained"]


def test_log_zero_generator_strategy_is_merton(build):
    pb, ens, sol = build("log_constrained_box")
    opt = extract_optimal(pb, sol, ens)
    # theta = 0.2 exceeds the box [0, 0.1]: the projection binds
    np.testing.assert_allclose(opt.p, 0.1)
    assert opt.provenance == "optimal_from_solution"
    expected = np.broadcast_to(pb.alpha / pb.h(ens.grid.nodes[:-1]), opt.c.shape)
    np.testing.assert_allclose(opt.c, expected, rtol=1e-12)


@pytest.mark.parametrize("name", KAPPA_CASES)
def test_optimal_strategy_is_a_martingale(build, name):
    pb, ens, sol = build(name)
    rep = drift_field(pb, sol, extract_optimal(pb, sol, ens))
    assert rep.verdict == "martingale", rep.as_dict()
    assert rep.overall_mean_abs <= 10 * ens.dt


@pytest.mark.parametrize("name", KAPPA_CASES)
def test_perturbations_are_supermartingales(build, name):
    pb, ens, sol = build(name)
    opt = extract_optimal(pb, sol, ens)
    for s in perturbation_battery(pb, opt):
        rep = drift_field(pb, sol, s)
        assert rep.verdict != "violated", (s.label, rep.max_exact)
        if "x" in s.label and "lag" not in s.label:
            # a genuine +-20% move leaves the optimum on a positive share of cells
            assert rep.verdict == "supermartingale", s.label
            assert rep.frac_negative > 0.5


@pytest.mark.parametrize("name", KAPPA_CASES)
def test_value_of_optimal_matches_closed_form(build, name):
    pb, ens, sol = build(name)
    opt = extract_optimal(pb, sol, ens)
    v = value_of(pb, opt, solution=sol)
    target = pb.value_from_Y0(sol.Y0)
    assert v.R0 == pytest.approx(target, rel=1e-12)
    assert v.value == pytest.approx(target, rel=0.03)


def test_compare_ranks_optimal_first(build):
    pb, ens, sol = build("exp_linear_unconstrained")
    opt = extract_optimal(pb, sol, ens)
    table = compare(pb, [opt] + perturbation_battery(pb, opt), solution=sol)
    assert table.passed
    assert table.ranking()[0].label == "optimal"
    assert table.R0_spread == 0.0
    rows = table.as_rows()
    assert [r["rank"] for r in rows] == list(range(1, len(rows) + 1))


def test_battery_respects_constraints(build):
    pb, ens, sol = build("log_constrained_box")
    opt = extract_optimal(pb, sol, ens)
    for s in perturbation_battery(pb, opt):
        assert np.all(pb.investment_set.contains(s.p.reshape(-1, 1), tol=1e-12)), s.label


def test_feedback_consumption_recorded(build):
    pb, ens, sol = build("exp_linear_unconstrained")
    opt = extract_optimal(pb, sol, ens)
    assert callable(opt.c)
    traj = simulate(pb, opt)
    assert traj.X.shape == (ens.n_paths, ens.n_steps + 1)
    assert np.all(np.isfinite(traj.c))


def test_misuse_rejected(build):
    pb, ens, sol = build("log_kappa_unconstrained")
    other_pb, other_ens, other_sol = build("exp_kappa_unconstrained")
    opt = extract_optimal(pb, sol, ens)
    with pytest.raises(UsageError):
        simulate(other_pb, opt)
    with pytest.raises(UsageError):
        compare(pb, [opt])
    with pytest.raises(UsageError):
        extract_optimal(pb, sol, other_ens.__class__(other_ens.grid, 1, other_ens.increments[:10], 0))
    bad = StrategyPair(opt.p, opt.c, ens, "fractional", label="other")
    with pytest.raises(UsageError):
        compare(pb, [bad, bad], optimal_label="optimal")


def test_R0_uses_solution(build):
    pb, ens, sol = build("log_kappa_unconstrained")
    assert r0_of(pb, sol) == pytest.approx(pb.value_from_Y0(sol.Y0))
