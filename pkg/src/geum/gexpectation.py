"""Conditional g-expectations and an executable axiom battery."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .bsde import BSDESolution, RegressionBackend, TreeBackend, solve_backward
from .errors import ConfigurationError, UsageError
from .generators import Generator, make_kappa_ignorance, make_zero, validate_generator
from .market import PathEnsemble


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff on an ensemble.

    ``terminal(W_T)`` for Markov payoffs; ``path(ensemble)`` for path-dependent
    ones, optionally with ``modulator(ensemble) -> (i -> (M, k) or None)``
    extra regression variables (e.g. an indicator of an ``F_t`` event).
    """

    name: str
    terminal: Optional[Callable] = None
    path: Optional[Callable] = None
    modulator: Optional[Callable] = None

    def values(self, ensemble: PathEnsemble) -> np.ndarray:
        if self.path is not None:
            return np.asarray(self.path(ensemble), dtype=float)
        return np.asarray(self.terminal(ensemble.state(ensemble.n_steps)), dtype=float)

    @property
    def markov(self) -> bool:
        return self.path is None


def midpoint_event(ensemble: PathEnsemble) -> np.ndarray:
    """Indicator of ``A = {W_{T/2} > 0}`` (first coordinate)."""
    return (ensemble.state(ensemble.n_steps // 2)[:, 0] > 0).astype(float)


def _after_mid_modulator(ensemble: PathEnsemble):
    ind = midpoint_event(ensemble)[:, None]
    mid = ensemble.n_steps // 2
    return lambda i: ind if i >= mid else None


def default_payoffs() -> List[Payoff]:
    """Six payoffs: ``W_T``, ``max(W_T,0)``, ``tanh(W_T)``, ``1.5``, ``W_T+0.25``, ``1_A max(W_T,0)``."""
    return [
        Payoff("W_T", terminal=lambda w: w[:, 0]),
        Payoff("max(W_T,0)", terminal=lambda w: np.maximum(w[:, 0], 0.0)),
        Payoff("tanh(W_T)", terminal=lambda w: np.tanh(w[:, 0])),
        Payoff("1.5", terminal=lambda w: np.full(w.shape[0], 1.5)),
        Payoff("W_T+0.25", terminal=lambda w: w[:, 0] + 0.25),
        Payoff(
            "1_A*max(W_T,0)",
            path=lambda ens: midpoint_event(ens) * np.maximum(ens.state(ens.n_steps)[:, 0], 0.0),
            modulator=_after_mid_modulator,
        ),
    ]


# ordered pairs (larger, smaller) holding pathwise
DEFAULT_PAIRS = (
    ("W_T+0.25", "W_T"),
    ("max(W_T,0)", "W_T"),
    ("max(W_T,0)", "1_A*max(W_T,0)"),
    ("1.5", "tanh(W_T)"),
)


class GExpectation:
    """``E_g[xi | F_t]`` through the backward solver.

    Parameters
    ----------
    generator : Generator
    ensemble : PathEnsemble, optional
        Required for the regression backend.
    backend : {"regression", "tree"}
    grid : TimeGrid, optional
        Required for the tree backend when no ensemble is given.
    validate : bool
        Run :func:`validate_generator` and refuse generators that fail.
    """

    def __init__(self, generator: Generator, ensemble: Optional[PathEnsemble] = None,
                 backend: str = "regression", degree: int = 4, grid=None,
                 y_bound: float = np.inf, validate: bool = True, strict: bool = False):
        if backend not in ("regression", "tree"):
            raise ConfigurationError(f"unknown backend {backend!r}")
        if backend == "regression" and ensemble is None:
            raise ConfigurationError("regression backend needs an ensemble")
        if backend == "tree":
            if grid is None and ensemble is None:
                raise ConfigurationError("tree backend needs a grid or an ensemble")
            grid = grid or ensemble.grid
            if ensemble is not None and ensemble.dim != 1:
                raise ConfigurationError("tree backend supports one Brownian dimension only")
        if validate:
            n = ensemble.dim if ensemble is not None else 1
            report = validate_generator(generator, n=n, T=(ensemble.grid if ensemble else grid).T)
            if not report.ok:
                raise ConfigurationError(f"generator fails validation: {report.as_dict()}")
        self.generator = generator
        self.ensemble = ensemble
        self.backend_kind = backend
        self.degree = degree
        self.grid = ensemble.grid if ensemble is not None else grid
        self.y_bound = y_bound
        self.strict = strict

    def _driver(self, i, t, y, z, state):
        return self.generator(t, z)

    def _backend(self, modulators=None):
        if self.backend_kind == "tree":
            return TreeBackend(self.grid)
        return RegressionBackend(self.ensemble, self.degree, modulators)

    def _terminal(self, xi, modulators):
        if isinstance(xi, Payoff):
            if self.backend_kind == "tree":
                if not xi.markov:
                    raise UsageError("tree backend evaluates Markov payoffs only")
                return xi.terminal, None
            mods = xi.modulator(self.ensemble) if xi.modulator is not None else modulators
            return xi.values(self.ensemble), mods
        if self.backend_kind == "tree" and not callable(xi):
            raise UsageError("tree backend needs xi as a function of W_T")
        if not callable(xi):
            xi = np.asarray(xi, dtype=float)
            if xi.shape != (self.ensemble.n_paths,):
                raise UsageError(f"xi must have shape ({self.ensemble.n_paths},), got {xi.shape}")
            if not np.isfinite(np.mean(xi * xi)):
                raise UsageError("xi has no finite second moment on the ensemble")
        return xi, modulators

    def solve(self, xi, modulators=None, terminal_index: Optional[int] = None) -> BSDESolution:
        """Full backward solution for terminal ``xi`` placed at ``terminal_index`` (default ``N``)."""
        values, mods = self._terminal(xi, modulators)
        return solve_backward(self._driver, values, self._backend(mods), y_bound=self.y_bound,
                              terminal_index=terminal_index, strict=self.strict)

    def evaluate(self, xi, modulators=None) -> float:
        """``E_g[xi]`` (the time-0 value)."""
        return self.solve(xi, modulators).Y0

    def evaluate_with_error(self, xi, modulators=None) -> tuple:
        sol = self.solve(xi, modulators)
        return sol.Y0, sol.std_error

    def evaluate_conditional(self, xi, t_index: int, modulators=None) -> np.ndarray:
        """``E_g[xi | F_{t_index}]`` on the backend's points."""
        if not 0 <= t_index <= self.grid.n_steps:
            raise UsageError(f"t_index {t_index} outside [0, {self.grid.n_steps}]")
        return self.solve(xi, modulators).y(t_index)

    def evaluate_from(self, values, start_index: int, modulators=None) -> BSDESolution:
        """Solve on ``[0, t_start]`` with an ``F_{t_start}``-measurable terminal field."""
        return self.solve(values, modulators, terminal_index=start_index)


# ---------------------------------------------------------------------------
# axiom battery


@dataclass
class AxiomCheck:
    axiom: str
    subject: str
    lhs: float
    rhs: float
    violation: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.violation <= self.threshold

    def as_dict(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


@dataclass
class AxiomReport:
    generator: dict
    checks: List[AxiomCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def worst(self, axiom: str) -> Optional[AxiomCheck]:
        sel = [c for c in self.checks if c.axiom == axiom]
        return max(sel, key=lambda c: c.violation - c.threshold) if sel else None

    def as_dict(self) -> dict:
        return {
            "generator": self.generator,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
        }


def _combined(*se) -> float:
    return float(np.sqrt(sum(s * s for s in se)))


def axiom_suite(gexp: GExpectation, payoffs: Optional[Sequence[Payoff]] = None,
                pairs=DEFAULT_PAIRS, n_sigma: float = 3.0, check_h1: Optional[bool] = None) -> AxiomReport:
    """Check (B1) monotonicity, (B2) constants, (B3) time consistency and (B4)
    the zero-one law on a payoff battery; (H1) domination for kappa generators.

    Statistical checks pass within ``n_sigma`` combined standard errors;
    (B2) must hold exactly.
    """
    if gexp.backend_kind != "regression":
        raise UsageError("the axiom suite runs on the regression backend")
    payoffs = list(payoffs or default_payoffs())
    by_name = {p.name: p for p in payoffs}
    ens = gexp.ensemble
    N = ens.n_steps
    mid = N // 2
    report = AxiomReport(gexp.generator.describe())
    sols = {p.name: gexp.solve(p) for p in payoffs}

    for big, small in pairs:
        if big not in sols or small not in sols:
            continue
        a, b = sols[big], sols[small]
        xa, xb = by_name[big].values(ens), by_name[small].values(ens)
        if np.any(xa < xb):
            raise ConfigurationError(f"pair ({big}, {small}) is not ordered pathwise")
        report.checks.append(AxiomCheck("B1", f"{big} >= {small}", a.Y0, b.Y0, b.Y0 - a.Y0,
                                        n_sigma * _combined(a.std_error, b.std_error)))

    for p in payoffs:
        vals = p.values(ens)
        if np.all(vals == vals[0]):
            s = sols[p.name]
            err = max(float(np.max(np.abs(s.y(i) - vals[0]))) for i in range(N + 1))
            zerr = max(float(np.max(np.abs(s.z(i)))) for i in range(N))
            report.checks.append(AxiomCheck("B2", p.name, s.Y0, float(vals[0]), max(err, zerr), 0.0))

    for p in payoffs:
        s = sols[p.name]
        mods = p.modulator(ens) if p.modulator is not None else None
        inner = gexp.evaluate_from(s.y(mid), mid, mods)
        report.checks.append(AxiomCheck("B3", p.name, inner.Y0, s.Y0, abs(inner.Y0 - s.Y0),
                                        n_sigma * _combined(inner.std_error, s.std_error)))

    ind = midpoint_event(ens)
    ind_mod = _after_mid_modulator(ens)
    for p in payoffs:
        if not p.markov:
            continue
        s = sols[p.name]
        lhs = gexp.solve(ind * p.values(ens), ind_mod)
        rhs = gexp.evaluate_from(ind * s.y(mid), mid)
        report.checks.append(AxiomCheck("B4", p.name, lhs.Y0, rhs.Y0, abs(lhs.Y0 - rhs.Y0),
                                        n_sigma * _combined(lhs.std_error, rhs.std_error)))

    g = gexp.generator
    if check_h1 is None:
        check_h1 = g.kind == "kappa"
    if check_h1:
        dom = GExpectation(make_kappa_ignorance(g.phi_slope) if g.phi_slope > 0 else make_zero(),
                           ens, degree=gexp.degree, validate=False)
        for big, small in pairs:
            if big not in sols or small not in sols:
                continue
            a, b = sols[big], sols[small]
            diff = by_name[big].values(ens) - by_name[small].values(ens)
            mods = by_name[big].modulator or by_name[small].modulator
            d = dom.solve(diff, mods(ens) if mods is not None else None)
            lhs = a.Y0 - b.Y0
            report.checks.append(AxiomCheck("H1", f"{big} - {small}", lhs, d.Y0, lhs - d.Y0,
                                            n_sigma * _combined(a.std_error, b.std_error, d.std_error)))
    return report


def girsanov_grid(payoff: Callable, kappa: float, T: float, points: int = 21, nodes: int = 80,
                  mode: str = "sup") -> tuple:
    """Extremum over constant drifts ``theta`` in ``[-kappa, kappa]`` of ``E^{Q^theta}[payoff(W_T)]``.

    Under ``dQ^theta/dP = exp(theta W_T - theta^2 T / 2)``, ``W_T ~ N(theta T, T)``;
    each mean is computed by Gauss-Hermite quadrature.  Returns
    ``(extremum, argmax_theta, all_means)``.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    thetas = np.linspace(-kappa, kappa, points)
    means = np.array([np.sum(w * payoff(np.sqrt(T) * x + th * T)) for th in thetas])
    j = int(np.argmax(means) if mode == "sup" else np.argmin(means))
    return float(means[j]), float(thetas[j]), means
