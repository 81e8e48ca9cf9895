"""Time grid, Brownian ensembles, market coefficients and wealth paths.

All coefficient processes are Markovian: deterministic functions of
``(t, W_t)``.  A "field" is a plain ndarray whose leading axes are
``(path, step)``; step ``i`` of a field only ever depends on increments
``0..i-1``.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    NumericalDegeneracyError,
    SimulationBlowupError,
)

ArrayLike = Union[float, np.ndarray]
StateFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = T``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigurationError(f"horizon must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Brownian increments ``dW[path, step, dim]`` on a uniform grid.

    Immutable after creation; the increments array is marked read-only.
    """

    grid: TimeGrid
    dim: int
    increments: np.ndarray
    seed: int
    _W: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim != 3 or inc.shape[1] != self.grid.n_steps or inc.shape[2] != self.dim:
            raise ConfigurationError(
                f"increments shape {inc.shape} does not match (M, {self.grid.n_steps}, {self.dim})"
            )
        inc = inc.copy() if inc.flags.writeable else inc
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)
        W = np.zeros((inc.shape[0], inc.shape[1] + 1, inc.shape[2]))
        np.cumsum(inc, axis=1, out=W[:, 1:, :])
        W.flags.writeable = False
        object.__setattr__(self, "_W", W)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def W(self) -> np.ndarray:
        """Brownian paths, shape ``(M, N+1, n)`` with ``W[:, 0] = 0``."""
        return self._W

    def state(self, i: int) -> np.ndarray:
        """``W_{t_i}`` on every path, shape ``(M, n)``."""
        return self._W[:, i, :]

    def same_as(self, other: "PathEnsemble") -> bool:
        return self is other or (
            self.grid == other.grid
            and self.dim == other.dim
            and self.seed == other.seed
            and self.increments.shape == other.increments.shape
            and np.array_equal(self.increments, other.increments)
        )


def _path_block(seed: int, start: int, stop: int, n_steps: int, dim: int, dt: float) -> np.ndarray:
    # One Philox stream per path keyed by (seed, path index): block layout
    # never changes the draws, so any split over workers is bit-identical.
    out = np.empty((stop - start, n_steps, dim))
    scale = np.sqrt(dt)
    for m in range(start, stop):
        rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, m]))
        out[m - start] = rng.standard_normal((n_steps, dim)) * scale
    return out


def simulate_ensemble(
    grid: TimeGrid, n: int, M: int, seed: int, workers: int = 1, block: int = 8192
) -> PathEnsemble:
    """Simulate ``M`` Brownian paths of dimension ``n`` on ``grid``.

    Parameters
    ----------
    grid : TimeGrid
    n : int
        Brownian dimension.
    M : int
        Number of paths.
    seed : int
        Root seed; path ``m`` draws from its own stream keyed by ``(seed, m)``.
    workers : int
        Thread count for generation.  Output does not depend on it.
    """
    if int(n) != n or n < 1:
        raise ConfigurationError(f"Brownian dimension must be >= 1, got {n}")
    if int(M) != M or M < 1:
        raise ConfigurationError(f"path count must be >= 1, got {M}")
    if int(seed) != seed or seed < 0:
        raise ConfigurationError(f"seed must be a non-negative integer, got {seed}")
    n, M, seed = int(n), int(M), int(seed)
    bounds = [(s, min(s + block, M)) for s in range(0, M, block)]
    job = lambda b: _path_block(seed, b[0], b[1], grid.n_steps, n, grid.dt)  # noqa: E731
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    return PathEnsemble(grid=grid, dim=n, increments=np.concatenate(parts, axis=0), seed=seed)


_HEADER = struct.Struct("<dqqqq")


def save_ensemble(ensemble: PathEnsemble, path: Union[str, Path]) -> None:
    """Write the flat binary cache: ``<T, N, n, M, seed>`` then row-major float64 increments."""
    head = _HEADER.pack(
        float(ensemble.grid.T), ensemble.n_steps, ensemble.dim, ensemble.n_paths, ensemble.seed
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(ensemble.increments, dtype="<f8").tobytes())


def load_ensemble(path: Union[str, Path]) -> PathEnsemble:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated ensemble header")
    T, N, n, M, seed = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != M * N * n:
        raise ConfigurationError(f"{path}: expected {M * N * n} increments, found {body.size}")
    return PathEnsemble(
        grid=TimeGrid(T, N), dim=n, increments=body.reshape(M, N, n).astype(np.float64), seed=seed
    )


@dataclass(frozen=True)
class Profile:
    """Bounded Markov scalar ``level + amplitude * tanh(loading . w)``.

    Used for income rates ``e(t, W_t)`` and terminal payments ``F(W_T)``.
    """

    level: float = 0.0
    amplitude: float = 0.0
    loading: Optional[tuple] = None

    def __call__(self, t: float, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        if self.amplitude == 0.0:
            return np.full(w.shape[0], float(self.level))
        load = np.ones(w.shape[1]) if self.loading is None else np.asarray(self.loading, float)
        return self.level + self.amplitude * np.tanh(w @ load)

    @property
    def bound(self) -> float:
        return abs(self.level) + abs(self.amplitude)


def _as_state_fn(value, shape_tail: tuple) -> Callable:
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)

    def const(t, w):
        return np.broadcast_to(arr, (np.atleast_2d(w).shape[0],) + shape_tail)

    const.constant = arr
    return const


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Money market at rate ``r`` plus ``m`` stocks driven by ``n`` Brownian motions.

    ``mu`` and ``sigma`` are either constants (shape ``(m,)`` and ``(m, n)``)
    or callables ``(t, w[P, n]) -> (P, m)`` / ``(P, m, n)``.
    """

    r: float
    mu: object
    sigma: object
    theta_bound: float = np.inf
    cond_cap: float = 1e10

    def __post_init__(self):
        if self.r < 0:
            raise ConfigurationError(f"interest rate must be >= 0, got {self.r}")
        if not callable(self.sigma):
            s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
            mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
            if mu.shape != (s.shape[0],):
                raise ConfigurationError(f"mu shape {mu.shape} vs sigma shape {s.shape}")
            if s.shape[0] > s.shape[1]:
                raise ConfigurationError("need m <= n stocks")
            object.__setattr__(self, "sigma", s)
            object.__setattr__(self, "mu", mu)

    @property
    def is_constant(self) -> bool:
        return not callable(self.sigma) and not callable(self.mu)

    @property
    def m(self) -> int:
        return np.asarray(self.sigma).shape[0] if not callable(self.sigma) else -1

    @property
    def n(self) -> int:
        return np.asarray(self.sigma).shape[1] if not callable(self.sigma) else -1

    def theta(self, t: float, w: np.ndarray) -> np.ndarray:
        """Market price of risk ``sigma^T (sigma sigma^T)^{-1} (mu - r 1)`` at states ``w``."""
        w = np.atleast_2d(w)
        P = w.shape[0]
        if self.is_constant:
            th = _theta_batch(self.sigma[None], self.mu[None] - self.r, self.cond_cap)
            return np.broadcast_to(th[0], (P, self.sigma.shape[1]))
        sig = _as_state_fn(self.sigma, ())(t, w)
        mu = _as_state_fn(self.mu, ())(t, w)
        sig = np.broadcast_to(sig, (P,) + np.shape(sig)[-2:])
        mu = np.broadcast_to(mu, (P, sig.shape[1]))
        return _theta_batch(sig, mu - self.r, self.cond_cap)


def _theta_batch(sig: np.ndarray, excess: np.ndarray, cond_cap: float) -> np.ndarray:
    gram = sig @ np.swapaxes(sig, -1, -2)
    cond = np.linalg.cond(gram)
    bad = ~np.isfinite(cond) | (cond > cond_cap)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NumericalDegeneracyError(
            f"sigma sigma^T singular (condition {cond[k]:.3g}) at state index {k}", path=k
        )
    sol = np.linalg.solve(gram, excess[..., None])
    return (np.swapaxes(sig, -1, -2) @ sol)[..., 0]


@dataclass(frozen=True, eq=False)
class IncomeSpec:
    """Income rate and terminal payment.

    ``mode="absolute"``: ``rate`` is the money rate ``e_t`` and ``terminal`` the
    lump sum ``F`` entering ``u(X_T - F)``.  ``mode="fractional"``: ``rate`` is
    the fraction-of-wealth rate and ``terminal`` must be absent.
    """

    mode: str = "absolute"
    rate: object = 0.0
    terminal: object = None
    rate_bound: Optional[float] = None
    terminal_bound: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("absolute", "fractional"):
            raise ConfigurationError(f"unknown income mode {self.mode!r}")
        if self.mode == "fractional" and self.terminal is not None:
            raise ConfigurationError("fractional income carries no terminal payment")

    def e(self, t: float, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        out = _as_state_fn(self.rate, ())(t, w)
        return np.broadcast_to(out, (w.shape[0],)).astype(float)

    def F(self, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        if self.terminal is None:
            return np.zeros(w.shape[0])
        out = _as_state_fn(self.terminal, ())(np.nan, w) if callable(self.terminal) else \
            np.full(w.shape[0], float(self.terminal))
        return np.broadcast_to(out, (w.shape[0],)).astype(float)

    def bounds(self) -> tuple:
        """Declared (or inferred) sup-norms of the rate and the terminal payment."""
        eb = self.rate_bound
        if eb is None:
            eb = getattr(self.rate, "bound", None)
            if eb is None and not callable(self.rate):
                eb = abs(float(self.rate))
        fb = self.terminal_bound
        if fb is None:
            if self.terminal is None:
                fb = 0.0
            else:
                fb = getattr(self.terminal, "bound", None)
                if fb is None and not callable(self.terminal):
                    fb = abs(float(self.terminal))
        return (np.inf if eb is None else eb), (np.inf if fb is None else fb)


def market_price_of_risk(model: MarketModel, ensemble: PathEnsemble) -> np.ndarray:
    """``theta`` at the left end of every step, shape ``(M, N, n)``.

    Raises
    ------
    NumericalDegeneracyError
        ``sigma sigma^T`` ill-conditioned on some path/step.
    DomainError
        ``|theta|`` exceeds the declared bound.
    """
    t = ensemble.grid.nodes
    out = np.empty((ensemble.n_paths, ensemble.n_steps, ensemble.dim))
    for i in range(ensemble.n_steps):
        try:
            out[:, i, :] = model.theta(t[i], ensemble.state(i))
        except NumericalDegeneracyError as exc:
            raise NumericalDegeneracyError(
                f"{exc} (path {exc.path}, step {i})", path=exc.path, step=i
            ) from None
        if model.is_constant:
            out[:, i + 1 :, :] = out[:, i : i + 1, :]
            break
    norm = np.linalg.norm(out, axis=-1)
    if np.max(norm) > model.theta_bound * (1 + 1e-12):
        m, i = np.unravel_index(np.argmax(norm), norm.shape)
        raise DomainError(
            f"|theta| = {norm[m, i]:.6g} exceeds declared bound {model.theta_bound} "
            f"(path {m}, step {i})"
        )
    return out


def _check_finite(x: np.ndarray, i: int) -> None:
    if not np.all(np.isfinite(x)):
        m = int(np.flatnonzero(~np.isfinite(x))[0])
        raise SimulationBlowupError(f"wealth not finite on path {m} at step {i}", path=m, step=i)


def _policy(c, i, x):
    return np.asarray(c(i, x), dtype=float) if callable(c) else c[:, i]


def wealth_absolute(
    x0: float,
    p: np.ndarray,
    c,
    model: MarketModel,
    income: IncomeSpec,
    ensemble: PathEnsemble,
    theta: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Wealth in the absolute parametrization, shape ``(M, N+1)``.

    Discounted left-point rule for
    ``X_t = e^{rt}(x + int e^{-rs} p_s (dW_s + theta_s ds) + int e^{-rs}(e_s - c_s) ds)``.
    ``c`` is an ``(M, N)`` field or a feedback policy ``c(i, X_i) -> (M,)``.
    """
    g = ensemble.grid
    th = market_price_of_risk(model, ensemble) if theta is None else theta
    p = np.asarray(p, dtype=float).reshape(ensemble.n_paths, g.n_steps, ensemble.dim)
    growth = np.exp(model.r * g.dt)
    X = np.empty((ensemble.n_paths, g.n_steps + 1))
    X[:, 0] = x0
    t = g.nodes
    for i in range(g.n_steps):
        e = income.e(t[i], ensemble.state(i))
        ci = _policy(c, i, X[:, i])
        gain = np.einsum("md,md->m", p[:, i], ensemble.increments[:, i] + th[:, i] * g.dt)
        X[:, i + 1] = growth * (X[:, i] + gain + (e - ci) * g.dt)
        _check_finite(X[:, i + 1], i + 1)
    return X


def wealth_fractional(
    x0: float,
    p: np.ndarray,
    c,
    model: MarketModel,
    income: IncomeSpec,
    ensemble: PathEnsemble,
    theta: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Wealth in the fraction-of-wealth parametrization, strictly positive.

    ``log X`` steps by ``p dW + (r + e - c + p.theta - |p|^2/2) dt``.
    """
    if not x0 > 0:
        raise DomainError(f"fractional wealth needs x0 > 0, got {x0}")
    g = ensemble.grid
    th = market_price_of_risk(model, ensemble) if theta is None else theta
    p = np.asarray(p, dtype=float).reshape(ensemble.n_paths, g.n_steps, ensemble.dim)
    logX = np.empty((ensemble.n_paths, g.n_steps + 1))
    logX[:, 0] = np.log(x0)
    t = g.nodes
    for i in range(g.n_steps):
        e = income.e(t[i], ensemble.state(i))
        ci = _policy(c, i, np.exp(logX[:, i]))
        pi = p[:, i]
        drift = model.r + e - ci + np.einsum("md,md->m", pi, th[:, i]) - 0.5 * np.einsum("md,md->m", pi, pi)
        logX[:, i + 1] = logX[:, i] + np.einsum("md,md->m", pi, ensemble.increments[:, i]) + drift * g.dt
        _check_finite(logX[:, i + 1], i + 1)
    X = np.exp(logX)
    _check_finite(X, g.n_steps)
    return X
