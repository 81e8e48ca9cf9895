"""Utility problems and their BSDE drivers.

Convention throughout: ``Y_t = xi + int_t^T f(s, Y_s, Z_s) ds - int_t^T Z_s dW_s``.

exponential  ``u(x) = -exp(-gamma x)``, absolute wealth, value ``-exp(-gamma (h(0) x0 + Y_0))``
power        ``u(x) = x^gamma / gamma``, fractional wealth, value ``x0^gamma exp(-Y_0) / gamma``
log          ``u(x) = log x``, fractional wealth, value ``h(0) (log x0 - Y_0)``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp

from .bsde import Driver
from .errors import ConfigurationError, DomainError
from .generators import Generator, make_zero
from .market import IncomeSpec, MarketModel
from .pointwise import (
    ConstraintSpec,
    PointwiseSolution,
    inf_consumption,
    inf_investment_log,
    inf_investment_power,
    sup_investment_exp,
)

KINDS = ("exponential", "power", "log")


def _delta_fn(delta) -> Callable:
    if callable(delta):
        return delta
    d = float(delta)
    return lambda t: d + 0.0 * np.asarray(t, dtype=float)


def _delta_integral(delta, a: float, b: float) -> float:
    """``int_a^b delta``."""
    if callable(delta):
        return quad(delta, a, b, epsabs=1e-14, epsrel=1e-13)[0]
    return float(delta) * (b - a)


@dataclass(frozen=True, eq=False)
class HFunction:
    """Deterministic scale function ``h`` on ``[0, T]``.

    ``ode(t, h)`` is the right-hand side ``h'`` it must satisfy; ``residual``
    checks it by central differences.
    """

    kind: str
    T: float
    fn: Callable
    ode: Callable
    terminal: float
    source: str = "closed_form"

    def __call__(self, t):
        return self.fn(t)

    def derivative(self, t, eps: float = 1e-5):
        t = np.asarray(t, dtype=float)
        f = self.fn
        central = (f(t + eps) - f(t - eps)) / (2 * eps)
        # second-order one-sided stencils at the ends of [0, T]
        fwd = (-3 * f(t) + 4 * f(t + eps) - f(t + 2 * eps)) / (2 * eps)
        bwd = (3 * f(t) - 4 * f(t - eps) + f(t - 2 * eps)) / (2 * eps)
        return np.where(t - eps < 0, fwd, np.where(t + eps > self.T, bwd, central))

    def residual(self, ts=None) -> float:
        ts = np.linspace(0.0, self.T, 201) if ts is None else np.asarray(ts, dtype=float)
        return float(np.max(np.abs(self.derivative(ts) - self.ode(ts, self.fn(ts)))))

    def on_grid(self, grid) -> np.ndarray:
        return np.asarray(self.fn(grid.nodes), dtype=float)


def _ode_h(rhs, T, terminal) -> Callable:
    sol = solve_ivp(lambda t, y: rhs(t, y), (T, 0.0), [terminal], method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True)

    def fn(t):
        t = np.asarray(t, dtype=float)
        out = sol.sol(t)[0]
        return np.where(t == T, terminal, out)

    return fn


def h_exponential(r: float, T: float, tol: float = 1e-8) -> HFunction:
    """``h' = h (h - r)``, ``h(T) = 1``.

    ``r = 0``: ``1 / (1 + T - t)``; ``r > 0``: ``r / (1 - (1 - r) exp(-r (T - t)))``.
    The closed form is kept only if its ODE residual passes ``tol``; otherwise
    the ODE is integrated backwards.
    """
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")

    def ode(t, h):
        return h * (h - r)

    if r == 0:
        def fn(t):
            return 1.0 / (1.0 + T - np.asarray(t, dtype=float))
    else:
        def fn(t):
            t = np.asarray(t, dtype=float)
            out = r / (1.0 - (1.0 - r) * np.exp(-r * (T - t)))
            return np.where(t == T, 1.0, out)

    h = HFunction("exponential", T, fn, ode, 1.0)
    if h.residual() > tol:
        h = HFunction("exponential", T, _ode_h(ode, T, 1.0), ode, 1.0, source="ode")
    return h


def h_log(alpha: float, delta, T: float, beta: float = 1.0) -> HFunction:
    """``h(t) = alpha int_t^T e^{-int_t^s delta} ds + beta e^{-int_t^T delta}``.

    Solves ``h' = delta h - alpha`` with ``h(T) = beta``.
    """
    if not alpha > 0 or not beta > 0:
        raise DomainError("log utility needs alpha > 0 and beta > 0")
    dfn = _delta_fn(delta)

    def ode(t, h):
        return dfn(t) * h - alpha

    if not callable(delta):
        d = float(delta)

        def fn(t):
            s = T - np.asarray(t, dtype=float)
            if d == 0.0:
                return alpha * s + beta
            return alpha * -np.expm1(-d * s) / d + beta * np.exp(-d * s)

    else:
        def scalar(t):
            inner = quad(lambda s: np.exp(-_delta_integral(delta, t, s)), t, T, epsabs=1e-14, epsrel=1e-13)[0]
            return alpha * inner + beta * np.exp(-_delta_integral(delta, t, T))

        vec = np.vectorize(scalar, otypes=[float])

        def fn(t):
            return vec(np.asarray(t, dtype=float))

    return HFunction("log", T, fn, ode, beta)


@dataclass(eq=False)
class UtilityProblem:
    """A robust consumption-investment problem.

    ``income`` is absolute (money rate ``e``, terminal payment ``F``) for the
    exponential utility and fractional (``e~``, no terminal payment) for power
    and log.  ``delta`` is a constant or a bounded callable of ``t``.
    """

    kind: str
    market: MarketModel
    T: float = 1.0
    gamma: Optional[float] = None
    alpha: float = 1.0
    beta: float = 1.0
    delta: object = 0.0
    x0: float = 1.0
    income: IncomeSpec = field(default_factory=IncomeSpec)
    constraints: Optional[ConstraintSpec] = None
    generator: Generator = field(default_factory=make_zero)
    method: str = "auto"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown utility kind {self.kind!r}")
        if not self.alpha > 0 or not self.beta > 0:
            raise DomainError("alpha and beta must be positive")
        if self.constraints is None:
            n = self.market.n if self.market.n > 0 else 1
            self.constraints = ConstraintSpec.unconstrained(n)
        if self.kind == "exponential":
            if self.gamma is None or not self.gamma > 0:
                raise DomainError(f"exponential utility needs gamma > 0, got {self.gamma}")
            if self.income.mode != "absolute":
                raise ConfigurationError("exponential utility uses absolute income")
        else:
            if not self.x0 > 0:
                raise DomainError(f"{self.kind} utility needs x0 > 0, got {self.x0}")
            if self.income.mode != "fractional" and (self.income.rate != 0.0 or self.income.terminal is not None):
                raise ConfigurationError(f"{self.kind} utility uses fractional income and no terminal payment")
            if not self.constraints.consumption.has_positive():
                raise ConfigurationError(f"{self.kind} utility needs a positive consumption element")
        if self.kind == "power":
            if self.gamma is None or not self.gamma < 1 or self.gamma == 0:
                raise DomainError(f"power utility needs gamma in (-inf,0) U (0,1), got {self.gamma}")
        self._delta = _delta_fn(self.delta)
        self._h = None
        if self.kind == "exponential":
            self._h = h_exponential(self.market.r, self.T)
        elif self.kind == "log":
            self._h = h_log(self.alpha, self.delta, self.T, self.beta)

    # -- data ---------------------------------------------------------------

    @property
    def h(self) -> Optional[HFunction]:
        return self._h

    def delta_at(self, t):
        return self._delta(t)

    def discount(self, t: float) -> float:
        """``D_t = exp(-int_0^t delta)``."""
        return float(np.exp(-_delta_integral(self.delta, 0.0, t)))

    @property
    def investment_set(self):
        return self.constraints.investment

    @property
    def consumption_set(self):
        return self.constraints.consumption

    def terminal(self, w_T: np.ndarray) -> np.ndarray:
        """Terminal condition ``xi = Y_T`` at terminal states ``W_T``."""
        w_T = np.atleast_2d(w_T)
        if self.kind == "exponential":
            return -self.income.F(w_T) - np.log(self.beta) / self.gamma
        if self.kind == "power":
            return np.full(w_T.shape[0], -np.log(self.beta))
        return np.zeros(w_T.shape[0])

    def value_from_Y0(self, Y0: float) -> float:
        if self.kind == "exponential":
            return float(-np.exp(-self.gamma * (self._h(0.0) * self.x0 + Y0)))
        if self.kind == "power":
            return float(self.x0**self.gamma * np.exp(-Y0) / self.gamma)
        return float(self._h(0.0) * (np.log(self.x0) - Y0))

    # -- inner problems -----------------------------------------------------

    def investment(self, t: float, z: np.ndarray, theta: np.ndarray, method: Optional[str] = None) -> PointwiseSolution:
        """Optimal investment field at ``(t, Z)``.

        exponential: argmax of ``g(hp + z) + h p.theta - (gamma/2)|hp + z|^2``
        (the driver's sup evaluated at ``-z``); power/log: argmin of their
        inner problems.  ``value`` is the sup (resp. inf).
        """
        method = method or self.method
        g, S = self.generator, self.investment_set
        if self.kind == "exponential":
            return sup_investment_exp(-z, theta, float(self._h(t)), self.gamma, g, S, t, method)
        if self.kind == "power":
            return inf_investment_power(z, theta, self.gamma, g, S, t, method)
        return inf_investment_log(z, theta, g, S, t, method)

    def consumption(self, t: float, y: np.ndarray, x: Optional[np.ndarray] = None) -> PointwiseSolution:
        """Optimal consumption (money for exponential, fraction of wealth otherwise)."""
        C = self.consumption_set
        if self.kind == "exponential":
            ht = float(self._h(t))
            return inf_consumption("exponential", C, alpha=self.alpha, gamma=self.gamma, h=ht, v=ht * x + y)
        if self.kind == "power":
            return inf_consumption("power", C, alpha=self.alpha, gamma=self.gamma, y=y)
        return inf_consumption("log", C, alpha=self.alpha, h=np.full(np.shape(y), float(self._h(t))))

    # -- driver -------------------------------------------------------------

    def driver_value(self, t: float, y: np.ndarray, z: np.ndarray, state: np.ndarray,
                     method: Optional[str] = None) -> np.ndarray:
        """``f(t, y, z)`` at states ``W_t = state``."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float).reshape(y.shape[0], -1)
        theta = np.broadcast_to(self.market.theta(t, state), z.shape)
        e = self.income.e(t, state)
        dl = float(self._delta(t))
        inv = self.investment(t, z, theta, method).value
        if self.kind == "exponential":
            ht = float(self._h(t))
            gam = self.gamma
            return ht * (e - y) + inv + (ht / gam) * (np.log(ht / self.alpha) - 1.0) + dl / gam
        if self.kind == "power":
            gam = self.gamma
            # the factor gamma in front flips the optimisation direction for gamma < 0
            cons = inf_consumption("power", self.consumption_set, alpha=self.alpha, gamma=gam, y=y).value
            zz = np.sum(z * z, axis=-1)
            return gam * (inv + cons - zz / (2 * gam) - self.market.r - e + dl / gam)
        ht = float(self._h(t))
        cons = inf_consumption("log", self.consumption_set, alpha=self.alpha, h=np.full(y.shape, ht)).value
        return -self.alpha * y / ht + inv + cons - e - self.market.r

    def driver(self, method: Optional[str] = None) -> Driver:
        """The BSDE driver as a :class:`Driver` (``state`` is ``W_t``)."""

        def fn(i, t, y, z, state):
            return self.driver_value(t, y, z, state, method)

        return Driver(fn, growth=self.growth_constant(), name=f"{self.kind}-{self.generator.kind}")

    # -- a-priori constants -------------------------------------------------

    def _bounds(self):
        th = self.market.theta_bound
        if not np.isfinite(th) and self.market.is_constant:
            th = float(np.linalg.norm(self.market.theta(0.0, np.zeros((1, self.market.n)))))
        eb, fb = self.income.bounds()
        mu = self.generator.phi_slope
        pbar = float(np.linalg.norm(self.investment_set.bounded_element))
        ts = np.linspace(0, self.T, 101)
        hv = self._h(ts) if self._h is not None else np.ones_like(ts)
        dmax = float(np.max(np.abs(self._delta(ts))))
        return th, eb, fb, mu, pbar, float(np.min(hv)), float(np.max(hv)), dmax

    def growth_constant(self) -> float:
        """``K`` with ``|f(t,y,z)| <= K (1 + |y| + |z|^2)`` for the exponential and log drivers.

        Built from the bounds on ``theta``, income, the domination slope of
        ``g``, ``h`` and the bounded element of the investment set.  The power
        driver grows exponentially in ``y``: ``nan``.
        """
        th, eb, fb, mu, pbar, hmin, hmax, dmax = self._bounds()
        if self.kind == "power":
            return np.nan
        L = mu + th
        if self.kind == "exponential":
            gam = self.gamma
            logs = max(abs(np.log(hmin / self.alpha) - 1), abs(np.log(hmax / self.alpha) - 1))
            c0 = hmax * eb + L**2 / (2 * gam) + gam * hmax**2 * pbar**2 + hmax * pbar * L \
                + hmax / gam * logs + dmax / gam
            return float(max(hmax, gam + L / 2, c0 + L / 2))
        # log: inner p-problem is within [-(L + pbar)^2 - |z| mu, ...] of 0
        a_over = self.alpha / hmin
        cons = max(abs(self.alpha / h * (1 - np.log(self.alpha / h))) for h in (hmin, hmax))
        if self.consumption_set.kind != "unconstrained":
            cons += self.consumption_set.upper if np.isfinite(self.consumption_set.upper) else 0.0
            cons += abs(a_over * np.log(max(self.consumption_set.lower, 1e-300)))
        c0 = 0.5 * (L + pbar) ** 2 + mu * pbar + 0.5 * pbar**2 + pbar * th + cons + eb + self.market.r
        return float(max(a_over, mu / 2 + 0.5, c0 + mu / 2))

    def y_bound(self, margin: float = 4.0) -> float:
        """Truncation level for ``Y``: a generous multiple of the a-priori size of the solution.

        Linear-in-``y`` drivers give ``|Y| <= (|xi| + T K0) e^{K_y T}`` along
        bounded-``Z`` paths; ``margin`` absorbs the ``Z`` contribution.
        """
        th, eb, fb, mu, pbar, hmin, hmax, dmax = self._bounds()
        xi = float(np.max(np.abs(self.terminal(np.zeros((1, max(self.market.n, 1))))))) + fb
        K0 = abs(self.driver_value(0.0, np.zeros(1), np.zeros((1, max(self.market.n, 1))),
                                   np.zeros((1, max(self.market.n, 1))))[0])
        K0 += eb + (mu + th) ** 2 + 1.0
        if self.kind == "exponential":
            ky = hmax
        elif self.kind == "log":
            ky = self.alpha / hmin
        else:
            ky = 1.0
        return float(margin * (xi + self.T * K0) * np.exp(ky * self.T) + margin)

    # -- linear special cases ----------------------------------------------

    def linear_coefficients(self):
        """``(a, b, phi)`` with ``f = a y + b.z + phi`` when the driver is linear.

        Exponential, unconstrained investment and consumption, generator zero,
        linear or kappa; log, unconstrained, generator zero or linear.
        Each coefficient maps ``(t, w[P, n])`` to ``(P,)`` (``b``: ``(P, n)``).
        """
        g = self.generator
        if self.investment_set.kind != "unconstrained" or self.consumption_set.kind != "unconstrained":
            raise ConfigurationError("linear form needs unconstrained sets")
        mk = self.market

        def eta(t, n):
            return np.asarray(g.eta(t), dtype=float) if g.kind == "linear" else np.zeros(n)

        if self.kind == "exponential" and g.kind in ("zero", "linear", "kappa"):
            gam, alpha, h = self.gamma, self.alpha, self._h

            def a(t, w):
                return np.full(np.atleast_2d(w).shape[0], -float(h(t)))

            def b(t, w):
                return -mk.theta(t, w)

            def phi(t, w):
                th = mk.theta(t, w)
                if g.kind == "kappa":
                    q = (np.linalg.norm(th, axis=-1) + g.kappa) ** 2
                else:
                    q = np.sum((th + eta(t, th.shape[1])) ** 2, axis=-1)
                ht = float(h(t))
                return ht * self.income.e(t, w) + q / (2 * gam) \
                    + (ht / gam) * (np.log(ht / alpha) - 1.0) + float(self._delta(t)) / gam

            return a, b, phi
        if self.kind == "log" and g.kind in ("zero", "linear"):
            alpha, h = self.alpha, self._h

            def a(t, w):
                return np.full(np.atleast_2d(w).shape[0], -alpha / float(h(t)))

            def b(t, w):
                th = mk.theta(t, w)
                return np.broadcast_to(eta(t, th.shape[1]), th.shape)

            def phi(t, w):
                th = mk.theta(t, w)
                q = np.sum((th + eta(t, th.shape[1])) ** 2, axis=-1)
                ratio = alpha / float(h(t))
                return -0.5 * q + ratio * (1 - np.log(ratio)) - self.income.e(t, w) - mk.r

            return a, b, phi
        raise ConfigurationError(f"no linear form for {self.kind} with {g.kind} generator")
