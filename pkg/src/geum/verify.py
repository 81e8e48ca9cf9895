"""Optimality certificates for consumption-investment strategies.

For a strategy ``(p, c)`` the value process ``R`` has ``dR = (A - g(Z^R)) dt + Z^R dW``
up to a strictly positive prefactor.  :func:`drift_field` evaluates the
bracket ``A`` cell by cell: it is ``<= 0`` for every feasible strategy and
vanishes for the optimal one.

Brackets (prefactor stripped, ``f = f(t, Y, Z)``):

exponential  ``g(hp+Z) + h p.theta - (gamma/2)|hp+Z|^2 - h c - (alpha/gamma) e^{gamma(hX+Y-c)}
             + (h' + h r) X + h e - f + delta/gamma``
power        ``g(p-Z/gamma) + p.(theta-Z) + ((gamma-1)/2)|p|^2 + (alpha/gamma) c^gamma e^Y - c
             + |Z|^2/(2 gamma) + f/gamma + e + r - delta/gamma``
log          ``g(p-Z) + p.theta - |p|^2/2 + (alpha/h) log c - c + alpha Y/h + f + e + r``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .bsde import BSDESolution, RegressionBackend, solve_backward
from .errors import InadmissibleStrategyError, UsageError
from .market import PathEnsemble, market_price_of_risk, wealth_absolute, wealth_fractional
from .utility import UtilityProblem

TOL_SUPER = 1e-10

# coefficient of f in each bracket
_F_COEF = {
    "exponential": lambda pr: -1.0,
    "power": lambda pr: 1.0 / pr.gamma,
    "log": lambda pr: 1.0,
}


@dataclass(eq=False)
class StrategyPair:
    """Investment field ``p`` of shape ``(M, N, n)`` and consumption ``c``.

    ``c`` is an ``(M, N)`` field or a feedback policy ``c(i, X_i) -> (M,)``.
    Money amounts for the exponential utility (``parametrization="absolute"``),
    fractions of wealth otherwise.
    """

    p: np.ndarray
    c: object
    ensemble: PathEnsemble
    parametrization: str = "absolute"
    provenance: str = "user_supplied"
    label: str = "strategy"

    def consumption(self, i: int, x: np.ndarray) -> np.ndarray:
        if callable(self.c):
            return np.asarray(self.c(i, x), dtype=float)
        return np.broadcast_to(np.asarray(self.c, dtype=float)[:, i], x.shape)


@dataclass
class Trajectory:
    """Realised wealth ``X`` ``(M, N+1)`` and consumption ``c`` ``(M, N)`` of a strategy."""

    X: np.ndarray
    c: np.ndarray


def _parametrization(problem: UtilityProblem) -> str:
    return "absolute" if problem.kind == "exponential" else "fractional"


def _check_same(problem_sol: BSDESolution, strategy: StrategyPair):
    if problem_sol.backend_kind != "regression":
        raise UsageError("strategy verification needs a regression solution on the strategy's ensemble")
    if problem_sol.ys[0].shape[0] != strategy.ensemble.n_paths or problem_sol.grid != strategy.ensemble.grid:
        raise UsageError("strategy and solution live on different ensembles")


def simulate(problem: UtilityProblem, strategy: StrategyPair, theta: Optional[np.ndarray] = None) -> Trajectory:
    """Forward wealth pass; records the consumption actually applied."""
    ens = strategy.ensemble
    if strategy.parametrization != _parametrization(problem):
        raise UsageError(f"{problem.kind} utility needs a {_parametrization(problem)} strategy")
    fwd = wealth_absolute if problem.kind == "exponential" else wealth_fractional
    X = fwd(problem.x0, strategy.p, strategy.consumption, problem.market, problem.income, ens, theta)
    c = np.stack([strategy.consumption(i, X[:, i]) for i in range(ens.n_steps)], axis=1)
    return Trajectory(X, c)


def extract_optimal(problem: UtilityProblem, solution: BSDESolution, ensemble: PathEnsemble,
                    method: Optional[str] = None) -> StrategyPair:
    """Optimal ``(p*, c*)`` read off the solved ``(Y, Z)``.

    ``p*`` is the pointwise optimiser at ``(t_i, Z_i)``; ``c*`` is
    ``clip(hX + Y - log(h/alpha)/gamma)`` in feedback form (exponential),
    ``(alpha e^Y)^{1/(1-gamma)}`` (power) or ``alpha/h`` (log), clipped to the
    consumption set.
    """
    if solution.backend_kind != "regression" or solution.ys[0].shape[0] != ensemble.n_paths:
        raise UsageError("solution does not belong to this ensemble")
    grid = ensemble.grid
    t = grid.nodes
    N = grid.n_steps
    p = np.empty((ensemble.n_paths, N, ensemble.dim))
    for i in range(N):
        theta = np.broadcast_to(problem.market.theta(t[i], ensemble.state(i)), (ensemble.n_paths, ensemble.dim))
        p[:, i] = problem.investment(t[i], solution.z(i), theta, method).point
    if problem.kind == "exponential":
        ys = solution.ys

        def c(i, x):
            return problem.consumption(t[i], ys[i], x).point[:, 0]

    else:
        c = np.stack([problem.consumption(t[i], solution.y(i)).point[:, 0] for i in range(N)], axis=1)
    return StrategyPair(p, c, ensemble, _parametrization(problem), "optimal_from_solution", "optimal")


# ---------------------------------------------------------------------------
# drift


def _brackets(problem: UtilityProblem, t: float, y, z, p, c, x, theta, e, f):
    """Investment part, consumption part and remainder of the drift bracket."""
    g = problem.generator
    gam = problem.gamma
    dl = float(problem.delta_at(t))
    r = problem.market.r
    pz = np.sum(p * theta, axis=-1)
    if problem.kind == "exponential":
        h = float(problem.h(t))
        hp = h * p + z
        inv = g(t, hp) + h * pz - 0.5 * gam * np.sum(hp * hp, axis=-1)
        cons = -h * c - (problem.alpha / gam) * np.exp(gam * (h * x + y - c))
        rest = (h * (h - r) + h * r) * x + h * e - f + dl / gam
    elif problem.kind == "power":
        inv = g(t, p - z / gam) + pz - np.sum(p * z, axis=-1) + 0.5 * (gam - 1) * np.sum(p * p, axis=-1)
        with np.errstate(divide="ignore"):
            cons = (problem.alpha / gam) * np.power(c, gam) * np.exp(y) - c
        rest = np.sum(z * z, axis=-1) / (2 * gam) + f / gam + e + r - dl / gam
    else:
        h = float(problem.h(t))
        inv = g(t, p - z) + pz - 0.5 * np.sum(p * p, axis=-1)
        with np.errstate(divide="ignore"):
            cons = (problem.alpha / h) * np.log(c) - c
        rest = problem.alpha * y / h + f + e + r
    return inv, cons, rest


@dataclass
class DriftReport:
    """Cell-wise drift bracket statistics.

    ``A`` uses the drift the discrete solution actually realised,
    ``(Y_i - E[Y_{i+1}|F_i]) / dt``; ``A_exact`` uses ``f(t_i, Y_i, Z_i)``.
    ``A_exact <= 0`` holds exactly (up to rounding) for feasible strategies;
    ``A`` vanishes at first order in ``dt`` for the optimal one.
    """

    dt: float
    mean_abs: np.ndarray
    max_abs: np.ndarray
    mean: np.ndarray
    exact_max: np.ndarray
    frac_positive: float
    frac_negative: float
    investment_mean: np.ndarray
    consumption_mean: np.ndarray
    investment_max: float
    consumption_max: float
    tol_super: float = TOL_SUPER
    tol_mart: Optional[float] = None

    def __post_init__(self):
        if self.tol_mart is None:
            self.tol_mart = 10.0 * self.dt

    @property
    def overall_mean_abs(self) -> float:
        return float(np.mean(self.mean_abs))

    @property
    def overall_max_abs(self) -> float:
        return float(np.max(self.max_abs))

    @property
    def max_exact(self) -> float:
        return float(np.max(self.exact_max))

    @property
    def verdict(self) -> str:
        """``martingale``: ``max|A| <= tol_mart`` and ``|A_exact| <= tol_super`` on every cell;
        ``supermartingale``: ``A_exact <= tol_super`` everywhere; else ``violated``."""
        exact_zero = self.max_exact <= self.tol_super and self.frac_negative == 0.0
        if self.overall_max_abs <= self.tol_mart and exact_zero:
            return "martingale"
        if self.max_exact <= self.tol_super:
            return "supermartingale"
        return "violated"

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "dt": self.dt,
            "tol_mart": self.tol_mart,
            "tol_super": self.tol_super,
            "mean_abs_A": self.overall_mean_abs,
            "max_abs_A": self.overall_max_abs,
            "max_A_exact": self.max_exact,
            "fraction_A_exact_above_tol": self.frac_positive,
            "fraction_A_exact_below_minus_tol": self.frac_negative,
            "investment_part_max": self.investment_max,
            "consumption_part_max": self.consumption_max,
            "per_step": {
                "mean_abs_A": self.mean_abs.tolist(),
                "max_abs_A": self.max_abs.tolist(),
                "mean_A": self.mean.tolist(),
                "max_A_exact": self.exact_max.tolist(),
                "investment_mean": self.investment_mean.tolist(),
                "consumption_mean": self.consumption_mean.tolist(),
            },
        }


def drift_field(problem: UtilityProblem, solution: BSDESolution, strategy: StrategyPair,
                tol_super: float = TOL_SUPER, tol_mart: Optional[float] = None,
                trajectory: Optional[Trajectory] = None) -> DriftReport:
    """Evaluate the drift bracket on every (path, step) cell.

    The investment and consumption parts are reported relative to their
    pointwise optima at the same cell (both ``<= 0``).
    """
    _check_same(solution, strategy)
    ens = strategy.ensemble
    grid = ens.grid
    t = grid.nodes
    N = grid.n_steps
    theta_all = market_price_of_risk(problem.market, ens)
    traj = trajectory or simulate(problem, strategy, theta_all)
    driver = problem.driver()
    stats = {k: np.empty(N) for k in ("mean_abs", "max_abs", "mean", "exact_max", "inv", "cons")}
    above = below = 0
    inv_max = cons_max = -np.inf
    for i in range(N):
        w = ens.state(i)
        y, z = solution.y(i), solution.z(i)
        x, c, p = traj.X[:, i], traj.c[:, i], strategy.p[:, i]
        theta = theta_all[:, i]
        e = problem.income.e(t[i], w)
        f_exact = driver(i, t[i], y, z, w)
        f_real = solution.implied_drift(i)
        inv, cons, rest = _brackets(problem, t[i], y, z, p, c, x, theta, e, f_exact)
        A_exact = inv + cons + rest
        A = A_exact + _F_COEF[problem.kind](problem) * (f_real - f_exact)
        # relative parts: subtract the value at the optimum of the same cell
        inv_opt = problem.investment(t[i], z, theta).value
        inv_rel = inv + inv_opt if problem.kind != "exponential" else inv - inv_opt
        if problem.kind == "exponential":
            c_opt = problem.consumption(t[i], y, x).point[:, 0]
        else:
            c_opt = problem.consumption(t[i], y).point[:, 0]
        _, cons_opt, _ = _brackets(problem, t[i], y, z, p, c_opt, x, theta, e, f_exact)
        cons_rel = cons - cons_opt
        stats["mean_abs"][i] = np.mean(np.abs(A))
        stats["max_abs"][i] = np.max(np.abs(A))
        stats["mean"][i] = np.mean(A)
        stats["exact_max"][i] = np.max(A_exact)
        stats["inv"][i] = np.mean(inv_rel)
        stats["cons"][i] = np.mean(cons_rel)
        inv_max = max(inv_max, float(np.max(inv_rel)))
        cons_max = max(cons_max, float(np.max(cons_rel)))
        above += int(np.count_nonzero(A_exact > tol_super))
        below += int(np.count_nonzero(A_exact < -tol_super))
    cells = N * ens.n_paths
    return DriftReport(
        dt=grid.dt,
        mean_abs=stats["mean_abs"],
        max_abs=stats["max_abs"],
        mean=stats["mean"],
        exact_max=stats["exact_max"],
        frac_positive=above / cells,
        frac_negative=below / cells,
        investment_mean=stats["inv"],
        consumption_mean=stats["cons"],
        investment_max=inv_max,
        consumption_max=cons_max,
        tol_super=tol_super,
        tol_mart=tol_mart,
    )


# ---------------------------------------------------------------------------
# values


@dataclass
class StrategyValue:
    label: str
    value: float
    std_error: float
    R0: float


def _utility_fields(problem: UtilityProblem, traj: Trajectory, ens: PathEnsemble):
    """Running rate ``L`` ``(M, N)`` and terminal ``J`` ``(M,)`` of the objective."""
    grid = ens.grid
    t = grid.nodes
    N = grid.n_steps
    D = np.array([problem.discount(s) for s in t])
    X, c = traj.X, traj.c
    a, b = problem.alpha, problem.beta
    if problem.kind == "exponential":
        gam = problem.gamma
        F = problem.income.F(ens.state(N))
        L = -a * D[None, :N] * np.exp(-gam * c)
        J = -b * D[N] * np.exp(-gam * (X[:, N] - F))
        return L, J
    bad = (c < 0) | ((c == 0) & ((problem.kind == "log") | ((problem.gamma or 1) < 0)))
    if np.any(bad):
        m, i = np.argwhere(bad)[0]
        raise InadmissibleStrategyError(f"consumption {c[m, i]} on path {m}, step {i} gives utility -inf")
    if problem.kind == "power":
        gam = problem.gamma
        L = a * D[None, :N] * np.power(c * X[:, :N], gam) / gam
        J = b * D[N] * np.power(X[:, N], gam) / gam
        return L, J
    L = a * D[None, :N] * np.log(c * X[:, :N])
    J = b * D[N] * np.log(X[:, N])
    return L, J


def value_of(problem: UtilityProblem, strategy: StrategyPair, degree: int = 4,
             trajectory: Optional[Trajectory] = None, solution: Optional[BSDESolution] = None) -> StrategyValue:
    """``E_g[int alpha D u(c) dt + beta D_T u(X_T - F)]`` for ``strategy``.

    Solves ``Y = J + int (L + g(Z)) ds - int Z dW`` with ``J`` the discounted
    terminal utility and ``L`` the running utility rate, so that
    ``Y_0 = E_g[int_0^T L ds + J]``.  The regression basis is enriched by a
    wealth transform (``exp(-gamma h X)``, ``X^gamma`` or ``log X``).
    Returns the value, its Monte Carlo standard error and ``R_0`` (from
    ``solution``'s ``Y_0`` and the strategy's initial wealth; ``nan`` without one).
    """
    ens = strategy.ensemble
    traj = trajectory or simulate(problem, strategy)
    L, J = _utility_fields(problem, traj, ens)
    X = traj.X
    grid = ens.grid
    g = problem.generator
    if problem.kind == "exponential":
        gam, h, dt = problem.gamma, problem.h, grid.dt

        def mods(i):
            xi = X[:, i]
            return np.exp(-gam * float(h(i * dt)) * (xi - xi.mean()))[:, None]
    elif problem.kind == "power":
        def mods(i):
            return np.power(X[:, i], problem.gamma)[:, None]
    else:
        def mods(i):
            return np.log(X[:, i])[:, None]

    def driver(i, t, y, z, state):
        return L[:, i] + g(t, z)

    sol = solve_backward(driver, J, RegressionBackend(ens, degree, mods))
    return StrategyValue(strategy.label, sol.Y0, sol.std_error, R0(problem, solution, x0=X[0, 0]))


def R0(problem: UtilityProblem, solution: Optional[BSDESolution], x0: Optional[float] = None,
       Y0: Optional[float] = None) -> float:
    """Initial value of the ``R`` process: the closed-form optimal value ``v(x0, Y_0)``."""
    if Y0 is None:
        if solution is None:
            return np.nan
        Y0 = solution.Y0
    x = problem.x0 if x0 is None else x0
    if problem.kind == "exponential":
        return float(-np.exp(-problem.gamma * (problem.h(0.0) * x + Y0)))
    if problem.kind == "power":
        return float(x**problem.gamma * np.exp(-Y0) / problem.gamma)
    return float(problem.h(0.0) * (np.log(x) - Y0))


# ---------------------------------------------------------------------------
# comparison


def perturbation_battery(problem: UtilityProblem, optimal: StrategyPair, eps: float = 0.2,
                         shift: int = 1) -> List[StrategyPair]:
    """Standard competitors of an optimal strategy.

    ``p* (1 +- eps)``, ``c* (1 +- eps)``, ``p = 0``, the reference pair
    ``(p_bar, c_bar)`` of the constraint sets, and ``p*`` lagged by ``shift``
    steps.  Perturbations are projected back onto the constraint sets.
    """
    ens = optimal.ensemble
    S = problem.investment_set
    C = problem.consumption_set
    par = optimal.parametrization
    N = ens.n_steps

    def proj_p(p):
        return S.project(p.reshape(-1, p.shape[-1])).reshape(p.shape)

    def proj_c(c):
        if C.kind == "interval":
            return np.clip(c, C.lower, C.upper)
        if C.kind == "finite":
            vals = np.array(C.values)
            return vals[np.argmin(np.abs(np.asarray(c)[..., None] - vals), axis=-1)]
        return c

    def scaled_c(factor):
        if callable(optimal.c):
            return lambda i, x: proj_c(factor * optimal.c(i, x))
        return proj_c(factor * optimal.c)

    out = []
    for s in (1 + eps, 1 - eps):
        out.append(StrategyPair(proj_p(s * optimal.p), optimal.c, ens, par, "perturbed", f"p*x{s:g}"))
    for s in (1 + eps, 1 - eps):
        out.append(StrategyPair(optimal.p, scaled_c(s), ens, par, "perturbed", f"c*x{s:g}"))
    out.append(StrategyPair(proj_p(np.zeros_like(optimal.p)), optimal.c, ens, par, "perturbed", "p=0"))
    pbar = np.broadcast_to(S.bounded_element, optimal.p.shape).copy()
    if problem.kind == "exponential":
        cbar = np.zeros((ens.n_paths, N))
    else:
        cbar = np.full((ens.n_paths, N), 0.05)
        if C.kind == "finite":
            cbar[:] = min(v for v in C.values if v > 0)
    out.append(StrategyPair(pbar, proj_c(cbar), ens, par, "perturbed", "reference"))
    lagged = np.concatenate([optimal.p[:, :1].repeat(shift, axis=1), optimal.p[:, :-shift]], axis=1)
    out.append(StrategyPair(lagged, optimal.c, ens, par, "perturbed", f"p*lag{shift}"))
    return out


@dataclass
class Comparison:
    rows: List[StrategyValue]
    optimal_label: str
    n_sigma: float = 3.0

    @property
    def optimal(self) -> StrategyValue:
        return next(r for r in self.rows if r.label == self.optimal_label)

    def margin(self, row: StrategyValue) -> float:
        """``optimal - row`` in units of combined standard errors (positive: optimal better)."""
        o = self.optimal
        se = np.hypot(o.std_error, row.std_error)
        return float((o.value - row.value) / se) if se > 0 else np.inf * np.sign(o.value - row.value)

    @property
    def passed(self) -> bool:
        return all(self.margin(r) >= -self.n_sigma for r in self.rows if r.label != self.optimal_label)

    @property
    def R0_spread(self) -> float:
        r = np.array([row.R0 for row in self.rows])
        return float(np.max(r) - np.min(r))

    def ranking(self) -> List[StrategyValue]:
        return sorted(self.rows, key=lambda r: -r.value)

    def as_rows(self) -> List[dict]:
        ranked = self.ranking()
        return [
            {
                "rank": k + 1,
                "strategy": r.label,
                "value": r.value,
                "std_error": r.std_error,
                "R0": r.R0,
                "optimal": r.label == self.optimal_label,
                "margin_sigma": 0.0 if r.label == self.optimal_label else self.margin(r),
            }
            for k, r in enumerate(ranked)
        ]


def compare(problem: UtilityProblem, strategies: Sequence[StrategyPair], optimal_label: str = "optimal",
            n_sigma: float = 3.0, degree: int = 4, solution: Optional[BSDESolution] = None) -> Comparison:
    """Value every strategy on the shared ensemble (common random numbers) and rank them.

    ``Comparison.passed`` holds when no competitor beats the optimal strategy by
    more than ``n_sigma`` combined standard errors.
    """
    if len(strategies) < 2:
        raise UsageError("compare needs at least two strategies")
    ens = strategies[0].ensemble
    if any(s.ensemble is not ens and not s.ensemble.same_as(ens) for s in strategies):
        raise UsageError("strategies must share one ensemble")
    labels = [s.label for s in strategies]
    if optimal_label not in labels:
        raise UsageError(f"no strategy labelled {optimal_label!r}")
    rows = [value_of(problem, s, degree, solution=solution) for s in strategies]
    seen = {}
    for r in rows:
        seen[r.label] = seen.get(r.label, 0) + 1
        if seen[r.label] > 1:
            r.label = f"{r.label}#{seen[r.label]}"
    return Comparison(rows, optimal_label, n_sigma)
