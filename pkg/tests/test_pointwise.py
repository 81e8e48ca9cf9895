import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from geum.errors import ConfigurationError, DomainError
from geum.generators import make_kappa_ignorance, make_linear, make_zero
from geum.pointwise import (
    ConsumptionSet,
    InvestmentSet,
    inf_consumption,
    inf_investment_log,
    inf_investment_power,
    kappa_branch_1d,
    lemma_radius,
    log_problem,
    minimize_canonical,
    sup_investment_exp,
)

FREE = InvestmentSet()
KAPPA = make_kappa_ignorance(0.5)
sets_1d = [
    FREE,
    InvestmentSet("box", 1, lower=-0.3, upper=0.4),
    InvestmentSet("ball", 1, radius=0.5, center=np.array([0.2])),
    InvestmentSet("halfspace", 1, normal=np.array([1.0]), offset=0.1),
    InvestmentSet("union", 1, boxes=(([-1.0], [-0.5]), ([0.2], [0.6]))),
]
finite = st.floats(-3, 3, allow_nan=False)


@given(st.lists(finite, min_size=2, max_size=2))
def test_ball_projection_properties(x):
    s = InvestmentSet("ball", 2, radius=1.0, center=np.zeros(2))
    p = s.project(np.array([x]))
    assert np.all(s.contains(p, tol=1e-12))
    np.testing.assert_allclose(s.project(p), p)


@given(finite)
def test_box_projection_is_nearest(x):
    s = sets_1d[1]
    p = s.project(np.array([[x]]))[0, 0]
    grid = np.linspace(-0.3, 0.4, 701)
    assert abs(p - x) <= np.min(np.abs(grid - x)) + 1e-12


def test_union_projection_picks_nearest_box():
    s = sets_1d[4]
    np.testing.assert_allclose(s.project(np.array([[-0.4], [0.0], [5.0]]))[:, 0], [-0.5, 0.2, 0.6])
    assert not s.convex


def test_empty_box_rejected():
    with pytest.raises(ConfigurationError):
        InvestmentSet("box", 1, lower=1.0, upper=0.0)


@pytest.mark.parametrize("gen", [make_zero(), make_linear([0.3])])
def test_quadratic_cases_closed_form(gen):
    z, theta = np.array([0.1, -0.4]), np.array([0.3, 0.2])
    sol = inf_investment_log(z, theta, gen, FREE)
    eta = 0.0 if gen.kind == "zero" else 0.3
    np.testing.assert_allclose(sol.point[:, 0], theta + eta)
    sol = inf_investment_power(z, theta, 0.5, gen, FREE)
    np.testing.assert_allclose(sol.point[:, 0], (theta - z + eta) / 0.5)


@pytest.mark.parametrize("pset", sets_1d, ids=lambda s: s.kind)
@pytest.mark.parametrize("gen", [make_zero(), make_linear([0.3]), KAPPA], ids=lambda g: g.kind)
def test_closed_form_agrees_with_grid(pset, gen):
    rng = np.random.default_rng(4)
    z, theta = rng.uniform(-1, 1, 40), rng.uniform(-0.5, 0.5, 40)
    for solve in (
        lambda m: inf_investment_log(z, theta, gen, pset, method=m),
        lambda m: inf_investment_power(z, theta, 0.5, gen, pset, method=m),
        lambda m: inf_investment_power(z, theta, -2.0, gen, pset, method=m),
        lambda m: sup_investment_exp(z, theta, 0.8, 2.0, gen, pset, method=m),
    ):
        fast, grid = solve("auto"), solve("grid")
        np.testing.assert_allclose(fast.value, grid.value, atol=1e-8)
        ok = ~fast.tied
        np.testing.assert_allclose(fast.point[ok], grid.point[ok], atol=1e-3)


@settings(max_examples=60, deadline=None)
@given(finite, st.floats(-1, 1), st.floats(-0.9, 0.9).filter(lambda g: abs(g) > 0.05))
def test_kappa_branches_match(z, theta, gamma):
    sol = inf_investment_power(z, theta, gamma, KAPPA, FREE)
    p, tie = kappa_branch_1d("power", z, theta, 0.5, gamma=gamma)
    if not (tie or sol.tied[0]):
        assert sol.point[0, 0] == pytest.approx(float(p), abs=1e-9)
    sol = inf_investment_log(z, theta, KAPPA, FREE)
    p, tie = kappa_branch_1d("log", z, theta, 0.5)
    if not (tie or sol.tied[0]):
        assert sol.point[0, 0] == pytest.approx(float(p), abs=1e-9)


def test_ties_report_two_minimizers():
    sol = inf_investment_log(0.3, 0.3, KAPPA, FREE)
    assert sol.n_minimizers[0] == 2
    np.testing.assert_allclose(sorted(sol.minimizers(0)[:, 0]), [-0.2, 0.8])
    sol = inf_investment_power(0.5 * 0.4, 0.4, 0.5, KAPPA, FREE)
    assert sol.n_minimizers[0] == 2
    vals = [sol.value[0]] * 2
    from geum.pointwise import power_problem
    obj = power_problem(0.2, 0.4, 0.5, KAPPA).objective
    np.testing.assert_allclose([obj(m[None, :])[0] for m in sol.minimizers(0)], vals, atol=1e-12)


def test_tie_in_two_dimensions_is_a_continuum():
    g = make_kappa_ignorance(0.5)
    sol = inf_investment_log(np.array([[0.1, 0.2]]), np.array([[0.1, 0.2]]), g, InvestmentSet(dim=2))
    assert sol.n_minimizers[0] == -1


@settings(max_examples=40, deadline=None)
@given(finite, finite)
def test_lemma_radius_bounds_minimizer(z, theta):
    prob = log_problem(z, theta, KAPPA)
    sol = minimize_canonical(prob, FREE)
    R = lemma_radius(prob.a, prob.b, prob.lam, prob.k, 0.5, np.zeros(1))
    assert np.linalg.norm(sol.point[0]) <= R[0]


def test_domain_errors():
    with pytest.raises(DomainError):
        inf_investment_power(0.0, 0.1, 1.5, KAPPA, FREE)
    with pytest.raises(DomainError):
        sup_investment_exp(0.0, 0.1, 1.0, -1.0, KAPPA, FREE)
    with pytest.raises(ConfigurationError):
        inf_investment_log(np.zeros((1, 2)), np.zeros((1, 2)), KAPPA, FREE)


@pytest.mark.parametrize(
    "kind,kw",
    [("power", dict(alpha=0.5, y=0.3, gamma=0.5)), ("power", dict(alpha=0.5, y=-0.2, gamma=-1.0)),
     ("log", dict(alpha=0.5, h=1.3)), ("exponential", dict(alpha=0.5, h=0.8, gamma=2.0, v=0.4))],
)
def test_consumption_matches_scalar_minimizer(kind, kw):
    sol = inf_consumption(kind, **kw)
    if kind == "power":
        f = lambda c: c - kw["alpha"] / kw["gamma"] * c ** kw["gamma"] * np.exp(kw["y"])
    elif kind == "log":
        f = lambda c: c - kw["alpha"] / kw["h"] * np.log(c)
    else:
        f = lambda c: kw["alpha"] / kw["gamma"] * np.exp(-kw["gamma"] * (c - kw["v"])) + kw["h"] * c
    ref = minimize_scalar(f, bounds=(1e-6, 10), method="bounded", options={"xatol": 1e-10})
    assert sol.point[0, 0] == pytest.approx(ref.x, abs=1e-6)
    assert sol.value[0] == pytest.approx(ref.fun, abs=1e-10)


def test_consumption_constraints():
    sol = inf_consumption("log", ConsumptionSet("interval", lower=0.0, upper=0.2), alpha=0.5, h=1.0)
    assert sol.point[0, 0] == 0.2
    sol = inf_consumption("log", ConsumptionSet("finite", values=(0.0, 0.1, 0.45)), alpha=0.5, h=1.0)
    assert sol.point[0, 0] == 0.45
    with pytest.raises(ConfigurationError):
        inf_consumption("log", ConsumptionSet("finite", values=(0.0,)), alpha=0.5, h=1.0)
