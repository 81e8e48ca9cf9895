"""Pointwise optimisation over investment and consumption sets.

Every inner problem of the utility drivers reduces to minimising

    phi(p) = (a/2)|p|^2 + b . p - g(t, lam (p - k))

over a constraint set, with ``a > 0``, ``lam > 0`` and ``b, k`` varying per
point.  Closed forms cover the built-in generators on the common sets; the
rest goes through an adaptive grid search on a compact box implied by the
a-priori radius bound.  All routines are vectorised over points ``(P, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .generators import Generator

TIE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# constraint sets


@dataclass(frozen=True)
class InvestmentSet:
    """State-independent investment constraint set.

    kind: ``unconstrained``, ``box`` (``lower``/``upper`` per coordinate),
    ``ball`` (``radius`` about ``center``), ``halfspace`` (``normal . p <= offset``)
    or ``union`` (a finite list of ``(lower, upper)`` boxes).
    """

    kind: str = "unconstrained"
    dim: int = 1
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    radius: float = np.inf
    center: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    offset: float = 0.0
    boxes: tuple = ()

    def __post_init__(self):
        n = self.dim
        if self.kind == "box":
            lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
            hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
            if np.any(lo > hi):
                raise ConfigurationError("empty box: lower > upper")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "ball":
            if not self.radius >= 0 or not np.isfinite(self.radius):
                raise ConfigurationError(f"ball radius must be finite and >= 0, got {self.radius}")
            c = np.zeros(n) if self.center is None else np.asarray(self.center, dtype=float)
            object.__setattr__(self, "center", np.broadcast_to(c, (n,)).copy())
        elif self.kind == "halfspace":
            nv = np.broadcast_to(np.asarray(self.normal, dtype=float), (n,)).copy()
            if not np.linalg.norm(nv) > 0:
                raise ConfigurationError("halfspace normal must be nonzero")
            object.__setattr__(self, "normal", nv)
        elif self.kind == "union":
            if not self.boxes:
                raise ConfigurationError("union of boxes needs at least one box")
            boxes = tuple(InvestmentSet("box", n, lo, hi) for lo, hi in self.boxes)
            object.__setattr__(self, "boxes", boxes)
        elif self.kind != "unconstrained":
            raise ConfigurationError(f"unknown investment set kind {self.kind!r}")

    @property
    def convex(self) -> bool:
        return self.kind != "union" or len(self.boxes) == 1

    def project(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection (nearest point; first box wins on ties for unions)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "unconstrained":
            return x.copy()
        if self.kind == "box":
            return np.clip(x, self.lower, self.upper)
        if self.kind == "ball":
            d = x - self.center
            r = np.linalg.norm(d, axis=-1, keepdims=True)
            scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
            return self.center + d * scale
        if self.kind == "halfspace":
            nv = self.normal
            excess = np.maximum(x @ nv - self.offset, 0.0)
            return x - (excess / (nv @ nv))[..., None] * nv
        cands = np.stack([b.project(x) for b in self.boxes], axis=-2)
        dist = np.linalg.norm(cands - x[..., None, :], axis=-1)
        idx = np.argmin(dist, axis=-1)
        return np.take_along_axis(cands, idx[..., None, None], axis=-2)[..., 0, :]

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(self.project(x) - x, axis=-1) <= tol * (1 + np.linalg.norm(x, axis=-1))

    def bounding_box(self):
        n = self.dim
        if self.kind == "box":
            return self.lower, self.upper
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        if self.kind == "union":
            return (
                np.min([b.lower for b in self.boxes], axis=0),
                np.max([b.upper for b in self.boxes], axis=0),
            )
        lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
        if self.kind == "halfspace":
            nz = np.flatnonzero(self.normal)
            if len(nz) == 1:
                # axis-aligned: the boundary becomes a grid node
                i = nz[0]
                edge = self.offset / self.normal[i]
                if self.normal[i] > 0:
                    hi[i] = edge
                else:
                    lo[i] = edge
        return lo, hi

    @property
    def bounded_element(self) -> np.ndarray:
        """A fixed element of the set (projection of the origin)."""
        return self.project(np.zeros(self.dim))

    def intervals(self):
        """1-D only: the set as a list of closed intervals."""
        if self.dim != 1:
            raise ConfigurationError("intervals() needs a 1-D set")
        if self.kind == "union":
            return [(float(b.lower[0]), float(b.upper[0])) for b in self.boxes]
        if self.kind == "halfspace":
            nv, c = float(self.normal[0]), self.offset
            return [(-np.inf, c / nv)] if nv > 0 else [(c / nv, np.inf)]
        lo, hi = self.bounding_box()
        return [(float(lo[0]), float(hi[0]))]


@dataclass(frozen=True)
class ConsumptionSet:
    """``unconstrained`` (``c > 0`` where the utility needs it), ``interval`` or ``finite``."""

    kind: str = "unconstrained"
    lower: float = 0.0
    upper: float = np.inf
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "interval":
            if not self.lower <= self.upper:
                raise ConfigurationError("empty consumption interval")
        elif self.kind == "finite":
            if not self.values:
                raise ConfigurationError("finite consumption set is empty")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        elif self.kind != "unconstrained":
            raise ConfigurationError(f"unknown consumption set kind {self.kind!r}")

    def has_positive(self) -> bool:
        if self.kind == "finite":
            return max(self.values) > 0
        return self.upper > 0


@dataclass(frozen=True)
class ConstraintSpec:
    investment: InvestmentSet = field(default_factory=InvestmentSet)
    consumption: ConsumptionSet = field(default_factory=ConsumptionSet)

    @property
    def convex(self) -> bool:
        return self.investment.convex and self.consumption.kind != "finite"

    @classmethod
    def unconstrained(cls, n: int = 1) -> "ConstraintSpec":
        return cls(InvestmentSet("unconstrained", n), ConsumptionSet())


def investment_from_config(block: Optional[dict], n: int) -> InvestmentSet:
    if not block:
        return InvestmentSet("unconstrained", n)
    kind = block.get("kind", "unconstrained")
    if kind == "box":
        return InvestmentSet("box", n, lower=block.get("lower", -np.inf), upper=block.get("upper", np.inf))
    if kind == "ball":
        return InvestmentSet("ball", n, radius=float(block["radius"]), center=block.get("center"))
    if kind == "halfspace":
        return InvestmentSet("halfspace", n, normal=block["normal"], offset=float(block.get("offset", 0.0)))
    if kind == "union":
        return InvestmentSet("union", n, boxes=tuple((b[0], b[1]) for b in block["boxes"]))
    return InvestmentSet(kind, n)


def consumption_from_config(block: Optional[dict]) -> ConsumptionSet:
    if not block:
        return ConsumptionSet()
    kind = block.get("kind", "unconstrained")
    if kind == "interval":
        return ConsumptionSet("interval", float(block.get("lower", 0.0)), float(block.get("upper", np.inf)))
    if kind == "finite":
        return ConsumptionSet("finite", values=tuple(block["values"]))
    return ConsumptionSet(kind)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class PointwiseSolution:
    """Optimiser(s) and optimal value per point.

    ``point`` holds the reported optimiser (lexicographically smallest on ties),
    ``alternates[j, :n_minimizers[j]]`` the full list of optimisers found.
    ``n_minimizers == -1`` marks a continuum (sphere) of optimisers, of which
    ``alternates`` holds representatives.
    """

    point: np.ndarray
    value: np.ndarray
    method: str
    resolution: float = 0.0
    alternates: Optional[np.ndarray] = None
    n_minimizers: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_minimizers is None:
            self.n_minimizers = np.ones(self.value.shape[0], dtype=int)
        if self.alternates is None:
            self.alternates = self.point[:, None, :]

    def minimizers(self, j: int) -> np.ndarray:
        k = self.n_minimizers[j]
        return self.alternates[j, : (self.alternates.shape[1] if k < 0 else k)]

    @property
    def tied(self) -> np.ndarray:
        return self.n_minimizers != 1


@dataclass(frozen=True)
class CanonicalProblem:
    """``phi(p) = (a/2)|p|^2 + b.p - g(t, lam (p - k)) + const``."""

    a: float
    b: np.ndarray
    lam: float
    k: np.ndarray
    g: Generator
    t: float = 0.0
    const: np.ndarray = 0.0

    def objective(self, p: np.ndarray, rows=slice(None)) -> np.ndarray:
        """Evaluate at ``p`` of shape ``(P, n)`` or ``(P, K, n)`` (rows of ``b``/``k`` selected by ``rows``)."""
        b, k = self.b[rows], self.k[rows]
        c = np.broadcast_to(self.const, self.b.shape[:1])[rows]
        if p.ndim == 3:
            b, k, c = b[:, None, :], k[:, None, :], c[:, None]
        return 0.5 * self.a * np.sum(p * p, axis=-1) + np.sum(b * p, axis=-1) \
            - self.g(self.t, self.lam * (p - k)) + c


def lemma_radius(a: float, b: np.ndarray, lam: float, k: np.ndarray, mu: float, pbar: np.ndarray) -> np.ndarray:
    """Radius ``R`` with ``|p*| <= R`` for every minimiser over a set containing ``pbar``.

    Uses ``|g(x)| <= mu |x|``: the objective is at least
    ``(a/2)|p|^2 - B|p| - mu lam |k|`` with ``B = |b| + mu lam``, and at most
    its value at ``pbar``.
    """
    B = np.linalg.norm(b, axis=-1) + mu * lam
    nk = np.linalg.norm(k, axis=-1)
    npb = float(np.linalg.norm(pbar))
    D = 0.5 * a * npb**2 + B * npb + 2 * mu * lam * nk
    R = (B + np.sqrt(B * B + 2 * a * D)) / a
    return R * (1 + 1e-9) + 1e-12


# ---------------------------------------------------------------------------
# closed forms


def _tie_tol(*scales) -> np.ndarray:
    return TIE_RTOL * (1.0 + sum(np.abs(s) for s in scales))


def _quadratic_min(prob: CanonicalProblem, pset: InvestmentSet, b_eff: np.ndarray) -> PointwiseSolution:
    """Minimise (a/2)|p|^2 + b_eff.p over the set: projection of ``-b_eff/a``."""
    p = pset.project(-b_eff / prob.a)
    return PointwiseSolution(p, prob.objective(p), "projection" if pset.kind != "unconstrained" else "closed_form")


def _kappa_unconstrained(prob: CanonicalProblem) -> PointwiseSolution:
    a, lam, kap = prob.a, prob.lam, prob.g.kappa
    k = prob.k
    c = a * k + prob.b
    nc = np.linalg.norm(c, axis=-1)
    tie = nc <= _tie_tol(a * np.linalg.norm(k, axis=-1), np.linalg.norm(prob.b, axis=-1))
    s = (nc + kap * lam) / a
    safe = np.where(tie, 1.0, nc)
    direction = np.where(tie[:, None], 0.0, -c / safe[:, None])
    n = k.shape[1]
    if n == 1:
        direction[tie] = -1.0
    else:
        direction[tie] = 0.0
        direction[tie, 0] = -1.0
    p = k + s[:, None] * direction
    value = prob.objective(p)
    alt = np.stack([p, np.where(tie[:, None], 2 * k - p, np.nan)], axis=1)
    nmin = np.where(tie, 2 if n == 1 else -1, 1)
    return PointwiseSolution(p, value, "closed_form", alternates=alt, n_minimizers=nmin)


def _branch_candidates_1d(prob: CanonicalProblem, intervals) -> np.ndarray:
    """Candidate minimisers of ``(a/2)p^2 + b p - kappa lam |p - k|`` on a union of intervals."""
    a, lam, kap = prob.a, prob.lam, prob.g.kappa
    b = prob.b[:, 0]
    k = prob.k[:, 0]
    right = -(b - kap * lam) / a  # stationary point of the p >= k branch
    left = -(b + kap * lam) / a  # stationary point of the p <= k branch
    cands = []
    for lo, hi in intervals:
        cands.append(np.where(k <= hi, np.clip(right, np.maximum(k, lo), hi), np.nan))
        cands.append(np.where(k >= lo, np.clip(left, lo, np.minimum(k, hi)), np.nan))
        for e in (lo, hi):
            if np.isfinite(e):
                cands.append(np.full_like(k, e))
        cands.append(np.where((k >= lo) & (k <= hi), k, np.nan))
    return np.stack(cands, axis=1)


def _select(prob: CanonicalProblem, cands: np.ndarray, method: str, resolution: float = 0.0,
            value_tol=None, dedupe: float = 1e-9) -> PointwiseSolution:
    """Pick global minimisers among candidates ``(P, K, n)`` (nan rows ignored)."""
    P, K, n = cands.shape
    valid = np.all(np.isfinite(cands), axis=-1)
    vals = np.where(valid, prob.objective(np.where(valid[..., None], cands, 0.0)), np.inf)
    vmin = vals.min(axis=1)
    if value_tol is None:
        value_tol = _tie_tol(vmin)
    close = vals <= (vmin + value_tol)[:, None]
    alt = np.full((P, K, n), np.nan)
    nmin = np.zeros(P, dtype=int)
    point = np.empty((P, n))
    for j in range(P):
        pts = cands[j, close[j]]
        order = np.lexsort(pts.T[::-1])
        keep = []
        for q in pts[order]:
            if all(np.linalg.norm(q - r) > dedupe for r in keep):
                keep.append(q)
        nmin[j] = len(keep)
        alt[j, : len(keep)] = keep
        point[j] = keep[0]
    alt = alt[:, : max(1, nmin.max())]
    value = prob.objective(point)
    return PointwiseSolution(point, value, method, resolution, alt, nmin)


# ---------------------------------------------------------------------------
# grid search


def grid_search(prob: CanonicalProblem, pset: InvestmentSet, points_per_dim: Optional[int] = None,
                cell_target: float = 1e-6, n_local: int = 6) -> PointwiseSolution:
    """Adaptive grid search, point by point.

    A coarse grid over ``set box  ∩  [-R, R]^n`` (``R`` from ``lemma_radius``)
    locates up to ``n_local`` local minima; each is refined on a window of
    one coarse cell either side, recursively, until the cell width is below
    ``cell_target``.  Points outside the set score ``+inf``; set boundaries
    are always grid nodes.
    """
    P, n = prob.b.shape
    if points_per_dim is None:
        points_per_dim = 64 if n <= 2 else 16
    R = lemma_radius(prob.a, prob.b, prob.lam, prob.k, prob.g.phi_slope, pset.bounded_element)
    sols_pt, sols_alt, sols_n = np.empty((P, n)), [], np.empty(P, dtype=int)
    finest = 0.0
    for j in range(P):
        regions = pset.boxes if pset.kind == "union" else (pset,)
        pts, vals = [], []
        for region in regions:
            slo, shi = region.bounding_box()
            lo = np.maximum(slo, -R[j])
            hi = np.minimum(shi, R[j])
            if np.any(lo > hi):
                # region lies beyond the radius bound: its nearest corner is a valid candidate
                lo = hi = region.project(np.zeros(n))
            p_r, v_r, cell = _grid_refine(prob, pset, j, lo, hi, points_per_dim, cell_target, n_local)
            pts.append(p_r)
            vals.append(v_r)
            finest = max(finest, cell)
        pts, vals = np.concatenate(pts), np.concatenate(vals)
        vmin = vals.min()
        close = vals <= vmin + 1e-8 * (1 + abs(vmin))
        cand = pts[close]
        order = np.lexsort(cand.T[::-1])
        keep = []
        for q in cand[order]:
            if all(np.linalg.norm(q - r) > 10 * cell + 1e-9 for r in keep):
                keep.append(q)
        sols_pt[j] = keep[0]
        sols_alt.append(np.array(keep))
        sols_n[j] = len(keep)
    K = max(len(a) for a in sols_alt)
    alt = np.full((P, K, n), np.nan)
    for j, a in enumerate(sols_alt):
        alt[j, : len(a)] = a
    value = prob.objective(sols_pt)
    return PointwiseSolution(sols_pt, value, "grid", finest, alt, sols_n)


def _grid_eval(prob, pset, j, axes):
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, mesh.shape[-1])
    vals = prob.objective(flat[None], rows=slice(j, j + 1))[0]
    if pset.kind not in ("unconstrained", "box"):
        vals = np.where(pset.contains(flat, tol=1e-12), vals, np.inf)
    return mesh, vals.reshape(mesh.shape[:-1])


def _local_minima(vals: np.ndarray) -> np.ndarray:
    """Indices of grid nodes not exceeded by any axis neighbour."""
    ok = np.isfinite(vals)
    for ax in range(vals.ndim):
        for shift in (1, -1):
            nb = np.roll(vals, shift, axis=ax)
            edge = [slice(None)] * vals.ndim
            edge[ax] = 0 if shift == 1 else -1
            nb[tuple(edge)] = np.inf
            ok &= vals <= nb
    return np.argwhere(ok)


def _grid_refine(prob, pset, j, lo, hi, m, cell_target, n_local):
    axes = [np.linspace(l, h, m) if h > l else np.array([l]) for l, h in zip(lo, hi)]
    mesh, vals = _grid_eval(prob, pset, j, axes)
    cell = max((h - l) / (m - 1) for l, h in zip(lo, hi))
    idx = _local_minima(vals)
    if len(idx) == 0:
        idx = np.argwhere(vals == vals.min())
    order = np.argsort([vals[tuple(i)] for i in idx])[:n_local]
    pts, out_vals = [], []
    for i in idx[order]:
        x = mesh[tuple(i)]
        if cell <= cell_target:
            pts.append(x)
            out_vals.append(vals[tuple(i)])
            continue
        wlo = np.maximum(x - cell, lo)
        whi = np.minimum(x + cell, hi)
        p2, v2, c2 = _grid_refine(prob, pset, j, wlo, whi, m, cell_target, n_local)
        pts.extend(p2)
        out_vals.extend(v2)
    final_cell = cell
    while final_cell > cell_target:
        final_cell = 2 * final_cell / (m - 1)
    return np.array(pts), np.array(out_vals), final_cell


# ---------------------------------------------------------------------------
# dispatch


def minimize_canonical(prob: CanonicalProblem, pset: InvestmentSet, method: str = "auto") -> PointwiseSolution:
    """Minimise the canonical objective over ``pset``.

    ``method="grid"`` forces the grid search (the oracle); ``"auto"`` uses the
    closed-form registry when one applies.
    """
    if not prob.a > 0 or not prob.lam > 0:
        raise DomainError(f"objective not coercive (a={prob.a}, lam={prob.lam})")
    b = np.atleast_2d(np.asarray(prob.b, dtype=float))
    k = np.atleast_2d(np.asarray(prob.k, dtype=float))
    b, k = np.broadcast_arrays(b, k)
    if b.shape[1] != pset.dim:
        raise ConfigurationError(f"dimension mismatch: points have n={b.shape[1]}, set has {pset.dim}")
    prob = CanonicalProblem(prob.a, b.copy(), prob.lam, k.copy(), prob.g, prob.t, prob.const)
    if method == "grid":
        return grid_search(prob, pset)
    kind = prob.g.kind
    if kind == "zero":
        return _quadratic_min(prob, pset, b)
    if kind == "linear":
        return _quadratic_min(prob, pset, b - prob.lam * prob.g.eta(prob.t))
    if kind == "kappa":
        if pset.kind == "unconstrained":
            return _kappa_unconstrained(prob)
        if pset.dim == 1:
            return _select(prob, _branch_candidates_1d(prob, pset.intervals())[..., None], "closed_form")
    return grid_search(prob, pset)


def _points(x, n=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if n in (None, 1) else x[None, :]
    return x


def exp_problem(z, theta, h: float, gamma: float, g: Generator, t: float = 0.0) -> CanonicalProblem:
    """Canonical form of ``-[g(hp - z) + h p.theta - (gamma/2)|hp - z|^2]``."""
    z, theta = np.broadcast_arrays(_points(z), _points(theta))
    return CanonicalProblem(
        a=gamma * h * h, b=-h * (gamma * z + theta), lam=h, k=z / h, g=g, t=t,
        const=0.5 * gamma * np.sum(z * z, axis=-1),
    )


def sup_investment_exp(z, theta, h: float, gamma: float, g: Generator, pset: InvestmentSet,
                       t: float = 0.0, method: str = "auto") -> PointwiseSolution:
    """Maximise ``g(hp - z) + h p.theta - (gamma/2)|hp - z|^2`` over ``pset``; value is the sup."""
    if not gamma > 0 or not h > 0:
        raise DomainError("exponential inner problem needs gamma > 0 and h > 0")
    sol = minimize_canonical(exp_problem(z, theta, h, gamma, g, t), pset, method)
    sol.value = -sol.value
    return sol


def power_problem(z, theta, gamma: float, g: Generator, t: float = 0.0) -> CanonicalProblem:
    """Canonical form of ``((1-gamma)/2)|p|^2 - g(p - z/gamma) + p.(z - theta)``."""
    z, theta = np.broadcast_arrays(_points(z), _points(theta))
    return CanonicalProblem(a=1.0 - gamma, b=z - theta, lam=1.0, k=z / gamma, g=g, t=t)


def inf_investment_power(z, theta, gamma: float, g: Generator, pset: InvestmentSet,
                         t: float = 0.0, method: str = "auto") -> PointwiseSolution:
    """Minimise ``((1-gamma)/2)|p|^2 - g(p - z/gamma) + p.(z - theta)`` over ``pset``.

    Coercive for every admissible ``gamma < 1, gamma != 0`` since ``1 - gamma > 0``.
    """
    if not gamma < 1 or gamma == 0:
        raise DomainError(f"power utility needs gamma in (-inf,0) U (0,1), got {gamma}")
    return minimize_canonical(power_problem(z, theta, gamma, g, t), pset, method)


def log_problem(z, theta, g: Generator, t: float = 0.0) -> CanonicalProblem:
    """Canonical form of ``(1/2)|p|^2 - p.theta - g(p - z)``."""
    z, theta = np.broadcast_arrays(_points(z), _points(theta))
    return CanonicalProblem(a=1.0, b=-theta, lam=1.0, k=z, g=g, t=t)


def inf_investment_log(z, theta, g: Generator, pset: InvestmentSet, t: float = 0.0,
                       method: str = "auto") -> PointwiseSolution:
    """Minimise ``(1/2)|p|^2 - p.theta - g(p - z)`` over ``pset``."""
    return minimize_canonical(log_problem(z, theta, g, t), pset, method)


# ---------------------------------------------------------------------------
# consumption


def _clip_or_pick(cstar, objective, cset: ConsumptionSet, positive: bool):
    if cset.kind == "finite":
        vals = np.array(cset.values)
        if positive:
            vals = vals[vals > 0]
        table = np.stack([objective(np.full_like(cstar, v)) for v in vals], axis=-1)
        c = vals[np.argmin(table, axis=-1)]
    else:
        lo = cset.lower
        c = np.clip(cstar, lo, cset.upper)
        if positive and lo <= 0:
            c = np.maximum(c, np.finfo(float).tiny)
    return c, objective(c)


def inf_consumption(kind: str, cset: Optional[ConsumptionSet] = None, *, alpha: float,
                    y=None, h=None, gamma: Optional[float] = None, v=None) -> PointwiseSolution:
    """Pointwise consumption problem of each utility (all objectives convex in ``c``).

    power:       min_c  c - (alpha/gamma) c^gamma e^y, stationary ``(alpha e^y)^(1/(1-gamma))``
    log:         min_c  c - (alpha/h) log c,            stationary ``alpha/h``
    exponential: min_c  (alpha/gamma) e^{-gamma (c - v)} + h c  with ``v = hX + Y``,
                 stationary ``v - log(h/alpha)/gamma`` (consumption is unrestricted there)

    Constrained sets clip the stationary point (intervals) or scan (finite sets).
    """
    cset = cset or ConsumptionSet()
    if kind in ("power", "log") and not cset.has_positive():
        raise ConfigurationError(f"{kind} utility needs a consumption set with a positive element")
    if kind == "power":
        if gamma is None or not gamma < 1 or gamma == 0:
            raise DomainError("power consumption needs gamma in (-inf,0) U (0,1)")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ey = np.exp(y)

        def obj(c):
            with np.errstate(divide="ignore"):
                return c - (alpha / gamma) * np.power(c, gamma) * ey

        cstar = np.power(alpha * ey, 1.0 / (1.0 - gamma))
        c, val = _clip_or_pick(cstar, obj, cset, positive=gamma < 0)
    elif kind == "log":
        h = np.atleast_1d(np.asarray(h, dtype=float))

        def obj(c):
            return c - (alpha / h) * np.log(c)

        c, val = _clip_or_pick(alpha / h, obj, cset, positive=True)
    elif kind == "exponential":
        v = np.atleast_1d(np.asarray(v, dtype=float))
        h = float(h)

        def obj(c):
            return (alpha / gamma) * np.exp(-gamma * (c - v)) + h * c

        cstar = v - np.log(h / alpha) / gamma
        if cset.kind == "unconstrained":
            c, val = cstar, obj(cstar)
        else:
            c, val = _clip_or_pick(cstar, obj, cset, positive=False)
    else:
        raise ConfigurationError(f"unknown utility kind {kind!r}")
    return PointwiseSolution(np.asarray(c, dtype=float)[:, None], np.asarray(val, dtype=float),
                             "closed_form" if cset.kind == "unconstrained" else "projection")


def kappa_branch_1d(kind: str, z, theta, kappa: float, gamma: Optional[float] = None, h: float = 1.0):
    """Minimiser branches of the 1-D unconstrained kappa-ignorance inner problem, as case formulas.

    Returns ``(p, tie)``; at a tie ``p`` is the smaller of the two minimisers.
    Used as an independent cross-check of the canonical closed form.

    log:   ``theta + kappa`` if ``z < theta``, ``theta - kappa`` if ``z > theta``
    power: ``(z - theta - kappa)/(gamma - 1)`` if ``(z - gamma theta)/gamma < 0``, else
           ``(z - theta + kappa)/(gamma - 1)``
    exp (``z`` in the sup orientation): ``z/h + sgn(theta)(|theta| + kappa)/(gamma h)``
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if kind == "log":
        tie = z == theta
        p = np.where(z < theta, theta + kappa, theta - kappa)
    elif kind == "power":
        c = (z - gamma * theta) / gamma
        tie = c == 0
        lo_branch = (z - theta - kappa) / (gamma - 1)
        hi_branch = (z - theta + kappa) / (gamma - 1)
        p = np.where(tie, np.minimum(lo_branch, hi_branch), np.where(c < 0, lo_branch, hi_branch))
    elif kind == "exponential":
        tie = theta == 0
        p = np.where(tie, z / h - kappa / (gamma * h),
                     z / h + np.sign(theta) * (np.abs(theta) + kappa) / (gamma * h))
    else:
        raise ConfigurationError(f"unknown utility kind {kind!r}")
    return p, tie
