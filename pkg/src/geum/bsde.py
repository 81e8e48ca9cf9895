"""Backward solver for ``Y_t = xi + int_t^T f(s, Y_s, Z_s) ds - int_t^T Z_s dW_s``.

The scheme is explicit in ``y``: on step ``i`` (backwards)

    Ycont_i = E[Y_{i+1} | F_i]
    Z_i     = E[(Y_{i+1} - Ycont_i) dW_i | F_i] / dt
    Y_i     = Ycont_i + f(t_i, Ycont_i, Z_i) dt

followed by truncation of ``Y`` to ``[-y_bound, y_bound]`` and of ``|Z|`` to
``z_cap / sqrt(dt)``.  Conditional expectations come from a backend:
least-squares regression on polynomials of ``W_t`` over a path ensemble, or
an exact recombining binomial tree (one Brownian dimension).
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import BackendError, QuadraticBlowupError, SimulationBlowupError, UsageError
from .market import PathEnsemble, TimeGrid

COND_CAP = 1e12


def _monomials(x: np.ndarray, degree: int) -> List[np.ndarray]:
    """All monomials of total degree ``<= degree`` in the columns of ``x``."""
    cols = [np.ones(x.shape[0])]
    k = x.shape[1]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), d):
            v = x[:, combo[0]].copy()
            for j in combo[1:]:
                v *= x[:, j]
            cols.append(v)
    return cols


def _standardize(x: np.ndarray) -> np.ndarray:
    """Center and scale columns; drop (numerically) constant ones."""
    if x.size == 0:
        return x.reshape(x.shape[0], 0)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    scale = np.maximum(np.abs(mean), 1.0)
    keep = sd > 1e-12 * scale
    return (x[:, keep] - mean[keep]) / sd[keep]


def _modulated_subspace(corr: np.ndarray, n_base: int, tol: float = 1e-9) -> np.ndarray:
    """Column transform keeping the base columns and the well-identified part of the rest.

    The modulated block is reduced to the eigenvectors of its Schur complement
    (its component orthogonal to the base span) with eigenvalues above ``tol``.
    """
    k = corr.shape[0]
    Cbb = corr[:n_base, :n_base]
    Cbm = corr[:n_base, n_base:]
    S = corr[n_base:, n_base:] - Cbm.T @ np.linalg.solve(Cbb, Cbm)
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    sel = vecs[:, vals > tol * max(1.0, vals.max(initial=0.0))]
    T = np.zeros((k, n_base + sel.shape[1]))
    T[:n_base, :n_base] = np.eye(n_base)
    T[n_base:, n_base:] = sel
    return T


class RegressionBackend:
    """Least-squares conditional expectations on a path ensemble.

    Parameters
    ----------
    ensemble : PathEnsemble
    degree : int
        Total polynomial degree in the state ``W_{t_i}``.
    modulators : callable, optional
        ``modulators(i) -> (M, k)`` or ``None``: extra ``F_{t_i}``-measurable variables.  The
        basis becomes ``polys(W) + m_j * polys(W)`` for each column ``m_j``;
        with an indicator column this splits the fit into two exact blocks.
    """

    kind = "regression"

    def __init__(self, ensemble: PathEnsemble, degree: int = 4, modulators: Optional[Callable] = None):
        if degree < 0:
            raise BackendError(f"degree must be >= 0, got {degree}")
        self.ensemble = ensemble
        self.degree = int(degree)
        self.modulators = modulators

    @property
    def grid(self) -> TimeGrid:
        return self.ensemble.grid

    def state(self, i: int) -> np.ndarray:
        return self.ensemble.state(i)

    def terminal_state(self) -> np.ndarray:
        return self.ensemble.state(self.ensemble.n_steps)

    def increments(self, i: int) -> np.ndarray:
        return self.ensemble.increments[:, i, :]

    def basis(self, i: int) -> tuple:
        """Design matrix at step ``i`` and the number of leading polynomial columns."""
        w = _standardize(self.state(i))
        cols = _monomials(w, self.degree)
        n_base = len(cols)
        raw = self.modulators(i) if self.modulators is not None else None
        if raw is not None:
            mods = _standardize(np.asarray(raw, dtype=float).reshape(w.shape[0], -1))
            base = list(cols)
            for j in range(mods.shape[1]):
                cols.extend(mods[:, j] * c for c in base)
        return np.column_stack(cols), n_base

    def project(self, i: int, targets: np.ndarray) -> tuple:
        """Fitted values of ``E[targets | F_i]`` and the fit residual RMS per column.

        Directions of the modulated columns that are numerically inside the
        polynomial span are dropped; dependence among the polynomial columns
        is an error.
        """
        targets = np.asarray(targets, dtype=float)
        flat = targets.reshape(targets.shape[0], -1)
        out = np.empty_like(flat)
        const = np.all(flat == flat[:1], axis=0)
        out[:, const] = flat[:1, const]
        if not np.all(const):
            B, n_base = self.basis(i)
            M = B.shape[0]
            gram = B.T @ B / M
            d = np.sqrt(np.diag(gram))
            if np.any(d == 0):
                raise BackendError(f"step {i}: zero basis column")
            corr = gram / np.outer(d, d)
            T = None
            if B.shape[1] > n_base:
                T = _modulated_subspace(corr, n_base)
                corr = T.T @ corr @ T
            cond = np.linalg.cond(corr)
            if not np.isfinite(cond) or cond > COND_CAP:
                raise BackendError(f"step {i}: regression matrix rank-deficient (cond {cond:.3g})")
            fac = cho_factor(corr)
            Bn = B / d
            rhs = (Bn.T @ flat[:, ~const]) / M
            if T is not None:
                Bn = Bn @ T
                rhs = T.T @ rhs
            out[:, ~const] = Bn @ cho_solve(fac, rhs)
        resid = np.sqrt(np.mean((flat - out) ** 2, axis=0))
        return out.reshape(targets.shape), resid

    def step(self, i: int, y_next: np.ndarray):
        dt = self.grid.dt
        dW = self.increments(i)
        cont, r1 = self.project(i, y_next)
        dev = y_next - cont
        if np.all(dev == 0):
            z = np.zeros_like(dW)
        else:
            z, _ = self.project(i, dev[:, None] * dW)
            z /= dt
        return cont, z, float(r1[0])


class TreeBackend:
    """Recombining binomial lattice on a single Brownian motion.

    Node ``j`` of step ``i`` sits at ``W = (2j - i) sqrt(dt)``; conditional
    expectations are exact averages of the two children.
    """

    kind = "tree"

    def __init__(self, grid: TimeGrid):
        self._grid = grid

    @property
    def grid(self) -> TimeGrid:
        return self._grid

    def state(self, i: int) -> np.ndarray:
        j = np.arange(i + 1)
        return ((2 * j - i) * np.sqrt(self.grid.dt))[:, None]

    def terminal_state(self) -> np.ndarray:
        return self.state(self.grid.n_steps)

    def step(self, i: int, y_next: np.ndarray):
        up, down = y_next[1:], y_next[:-1]
        cont = 0.5 * (up + down)
        z = ((up - down) / (2.0 * np.sqrt(self.grid.dt)))[:, None]
        return cont, z, 0.0


@dataclass
class Driver:
    """``f(i, t, y, z, state)`` vectorised over the backend's points.

    ``growth`` is a constant ``K`` with ``|f| <= K (1 + |y| + |z|^2)`` on the
    truncation box (``nan`` when unknown).
    """

    fn: Callable
    growth: float = np.nan
    name: str = "driver"

    def __call__(self, i, t, y, z, state):
        return self.fn(i, t, y, z, state)


@dataclass
class BSDESolution:
    """Discrete solution; ``y(i)``/``z(i)`` are values at step ``i`` on backend points."""

    grid: TimeGrid
    backend_kind: str
    ys: List[np.ndarray]
    zs: List[np.ndarray]
    conts: List[np.ndarray]
    terminal_index: int
    residuals: np.ndarray
    y_clamps: np.ndarray
    z_clamps: np.ndarray
    y_bound: float
    z_max: float
    std_error: float
    pathwise: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def Y0(self) -> float:
        return float(self.ys[0][0])

    @property
    def xi(self) -> np.ndarray:
        return self.ys[self.terminal_index]

    def y(self, i: int) -> np.ndarray:
        return self.ys[i]

    def z(self, i: int) -> np.ndarray:
        return self.zs[i]

    def cont(self, i: int) -> np.ndarray:
        return self.conts[i]

    def implied_drift(self, i: int) -> np.ndarray:
        """The drift the scheme actually realised on step ``i``: ``(Y_i - E[Y_{i+1}|F_i]) / dt``."""
        return (self.ys[i] - self.conts[i]) / self.grid.dt

    @property
    def Y(self) -> np.ndarray:
        if self.backend_kind != "regression":
            raise UsageError("stacked fields exist only for the regression backend")
        return np.stack(self.ys, axis=1)

    @property
    def Z(self) -> np.ndarray:
        if self.backend_kind != "regression":
            raise UsageError("stacked fields exist only for the regression backend")
        return np.stack(self.zs, axis=1)

    def report(self) -> dict:
        return {
            "Y0": self.Y0,
            "std_error": self.std_error,
            "backend": self.backend_kind,
            "n_steps": self.terminal_index,
            "dt": self.grid.dt,
            "y_bound": self.y_bound,
            "z_max": self.z_max,
            "residuals": self.residuals.tolist(),
            "y_clamps": self.y_clamps.tolist(),
            "z_clamps": self.z_clamps.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2)


def solve_backward(
    driver: Callable,
    xi,
    backend,
    y_bound: float = np.inf,
    z_cap: float = 10.0,
    terminal_index: Optional[int] = None,
    strict: bool = False,
    clamp_tolerance: float = 0.01,
) -> BSDESolution:
    """Solve the BSDE backwards from ``terminal_index`` (default ``N``) to 0.

    ``xi`` is an array over the backend's terminal points or a callable of the
    terminal state ``W``.  Returns the full solution with diagnostics.

    Raises
    ------
    BackendError
        Rank-deficient regression.
    QuadraticBlowupError
        In strict mode, when ``Y`` clamps bind on more than ``clamp_tolerance``
        of all cells.
    """
    grid = backend.grid
    N = grid.n_steps if terminal_index is None else int(terminal_index)
    if not 0 <= N <= grid.n_steps:
        raise UsageError(f"terminal index {N} outside [0, {grid.n_steps}]")
    dt = grid.dt
    t = grid.nodes
    if callable(xi):
        xi = xi(backend.state(N))
    y = np.array(xi, dtype=float, copy=True)
    if not np.all(np.isfinite(y)):
        raise SimulationBlowupError("terminal condition not finite")
    z_max = z_cap / np.sqrt(dt)

    ys = [None] * (N + 1)
    zs = [None] * N
    conts = [None] * N
    ys[N] = y
    residuals = np.zeros(N)
    y_clamps = np.zeros(N, dtype=int)
    z_clamps = np.zeros(N, dtype=int)
    pathwise = y.copy() if backend.kind == "regression" else None

    for i in range(N - 1, -1, -1):
        cont, z, resid = backend.step(i, y)
        norm = np.linalg.norm(z, axis=-1)
        over = norm > z_max
        if np.any(over):
            z = z.copy()
            z[over] *= (z_max / norm[over])[:, None]
        z_clamps[i] = int(np.count_nonzero(over))
        f = np.asarray(driver(i, t[i], cont, z, backend.state(i)), dtype=float)
        f = np.broadcast_to(f, cont.shape)
        y = cont + f * dt
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise SimulationBlowupError(f"non-finite Y at step {i}, point {bad}", path=bad, step=i)
        hit = np.abs(y) > y_bound
        y_clamps[i] = int(np.count_nonzero(hit))
        if y_clamps[i]:
            y = np.clip(y, -y_bound, y_bound)
        if pathwise is not None:
            pathwise += f * dt
        ys[i], zs[i], conts[i] = y, z, cont
        residuals[i] = resid

    cells = max(1, sum(len(ys[i]) for i in range(N)))
    if y_clamps.sum() > clamp_tolerance * cells:
        msg = f"Y truncation bound on {y_clamps.sum()} of {cells} cells (y_bound={y_bound})"
        if strict:
            raise QuadraticBlowupError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    std_error = 0.0
    if pathwise is not None and pathwise.size > 1:
        std_error = float(np.std(pathwise, ddof=1) / np.sqrt(pathwise.size))
    return BSDESolution(
        grid=grid,
        backend_kind=backend.kind,
        ys=ys,
        zs=zs,
        conts=conts,
        terminal_index=N,
        residuals=residuals,
        y_clamps=y_clamps,
        z_clamps=z_clamps,
        y_bound=float(y_bound),
        z_max=float(z_max),
        std_error=std_error,
        pathwise=pathwise,
    )


def linear_bsde_oracle(a, b, phi, xi, ensemble: PathEnsemble) -> tuple:
    """``Y_0`` of the linear BSDE with driver ``a y + b . z + phi`` by forward Monte Carlo.

    Uses ``Y_0 = E[Gamma_T xi + int_0^T Gamma_s phi_s ds]`` with
    ``Gamma_s = exp(int_0^s a du + int_0^s b dW - 1/2 int_0^s |b|^2 du)``.
    ``a``, ``phi`` map ``(t, w[P, n]) -> (P,)`` and ``b`` maps to ``(P, n)``;
    ``xi`` is an array over paths or a callable of ``W_T``.
    Returns ``(Y0, std_error)``.
    """
    g = ensemble.grid
    t = g.nodes
    M = ensemble.n_paths
    log_gamma = np.zeros(M)
    running = np.zeros(M)
    for i in range(g.n_steps):
        w = ensemble.state(i)
        ai = np.broadcast_to(np.asarray(a(t[i], w), dtype=float), (M,))
        bi = np.broadcast_to(np.asarray(b(t[i], w), dtype=float), (M, ensemble.dim))
        pi = np.broadcast_to(np.asarray(phi(t[i], w), dtype=float), (M,))
        running += np.exp(log_gamma) * pi * g.dt
        log_gamma += ai * g.dt + np.einsum("md,md->m", bi, ensemble.increments[:, i]) \
            - 0.5 * np.einsum("md,md->m", bi, bi) * g.dt
    terminal = xi(ensemble.state(g.n_steps)) if callable(xi) else np.asarray(xi, dtype=float)
    sample = np.exp(log_gamma) * terminal + running
    if not np.all(np.isfinite(sample)):
        raise SimulationBlowupError("linear oracle overflow")
    return float(sample.mean()), float(sample.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
