"""Generators ``g(t, z)`` of nonlinear expectations.

Only z-dependent generators ship here.  Each carries the data needed to
check the structural assumptions: ``g(t, 0) = 0``, the domination
``|g(z) - g(z')| <= phi(|z - z'|)`` with ``phi(x) = phi_slope * x``, and
positive homogeneity when declared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True, eq=False)
class Generator:
    """A driver ``g(t, z)`` with structural metadata.

    ``fn(t, z)`` maps ``z`` of shape ``(..., n)`` to shape ``(...)``.
    ``kind`` is one of ``"zero"``, ``"linear"``, ``"kappa"`` for built-ins (the
    pointwise optimizer has closed forms for those) and ``"custom"`` otherwise.
    """

    fn: Callable
    kind: str = "custom"
    nu: float = 0.0
    phi_slope: float = 0.0
    positively_homogeneous: bool = False
    zero_at_zero_z: bool = True
    params: dict = field(default_factory=dict)

    def __call__(self, t: float, z) -> np.ndarray:
        return self.fn(t, np.asarray(z, dtype=float))

    def eta(self, t: float) -> np.ndarray:
        eta = self.params["eta"]
        return np.asarray(eta(t) if callable(eta) else eta, dtype=float)

    @property
    def kappa(self) -> float:
        return float(self.params["kappa"])

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "linear" and not callable(self.params["eta"]):
            out["eta"] = np.atleast_1d(self.params["eta"]).tolist()
        if self.kind == "kappa":
            out["kappa"] = self.kappa
        return out


def make_zero() -> Generator:
    """The zero generator: the classical expectation."""
    return Generator(
        fn=lambda t, z: np.zeros(np.shape(z)[:-1]),
        kind="zero",
        phi_slope=0.0,
        positively_homogeneous=True,
    )


def make_linear(eta) -> Generator:
    """``g(t, z) = eta_t . z``; ``eta`` is a vector or a bounded callable of ``t``.

    The g-expectation is the linear expectation under the Girsanov measure
    with density ``exp(int eta dW - 1/2 int |eta|^2 dt)``.
    """
    if callable(eta):
        bound = float(getattr(eta, "bound", np.nan))
        if not np.isfinite(bound):
            raise ConfigurationError("callable eta must expose a finite .bound")

        def fn(t, z):
            return z @ np.asarray(eta(t), dtype=float)

    else:
        vec = np.atleast_1d(np.asarray(eta, dtype=float))
        bound = float(np.linalg.norm(vec))

        def fn(t, z):
            return z @ vec

        eta = vec
    return Generator(
        fn=fn, kind="linear", phi_slope=bound, positively_homogeneous=True, params={"eta": eta}
    )


def make_kappa_ignorance(kappa: float) -> Generator:
    """``g(t, z) = kappa |z|`` (Euclidean norm), ``kappa > 0``."""
    if not kappa > 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    kappa = float(kappa)
    return Generator(
        fn=lambda t, z: kappa * np.linalg.norm(z, axis=-1),
        kind="kappa",
        phi_slope=kappa,
        positively_homogeneous=True,
        params={"kappa": kappa},
    )


def from_config(block: dict) -> Generator:
    """Build a built-in generator from ``{kind: "linear"|"kappa"|"zero", ...}``.

    An optional ``phi_slope`` overrides the declared domination constant
    (useful to exercise a failing validation).
    """
    kind = block.get("kind")
    if kind == "zero":
        g = make_zero()
    elif kind == "linear":
        if "eta" not in block:
            raise ConfigurationError("linear generator needs 'eta'")
        g = make_linear(block["eta"])
    elif kind == "kappa":
        if "kappa" not in block:
            raise ConfigurationError("kappa generator needs 'kappa'")
        g = make_kappa_ignorance(block["kappa"])
    else:
        raise ConfigurationError(f"unknown generator kind {kind!r}")
    if "phi_slope" in block:
        g = Generator(
            fn=g.fn,
            kind=g.kind,
            nu=g.nu,
            phi_slope=float(block["phi_slope"]),
            positively_homogeneous=g.positively_homogeneous,
            params=g.params,
        )
    return g


@dataclass
class ValidationReport:
    zero_at_zero: float
    lipschitz_excess: float
    homogeneity_error: Optional[float]
    tol: float = 1e-12

    @property
    def passes_A2(self) -> bool:
        return self.zero_at_zero <= self.tol

    @property
    def passes_A1(self) -> bool:
        return self.lipschitz_excess <= self.tol

    @property
    def passes_H2(self) -> bool:
        return self.homogeneity_error is None or self.homogeneity_error <= self.tol

    @property
    def ok(self) -> bool:
        return self.passes_A1 and self.passes_A2 and self.passes_H2

    def as_dict(self) -> dict:
        return {
            "A2_max_abs_g0": self.zero_at_zero,
            "A1_max_relative_excess": self.lipschitz_excess,
            "H2_max_relative_error": self.homogeneity_error,
            "A1": self.passes_A1,
            "A2": self.passes_A2,
            "H2": self.passes_H2,
            "ok": self.ok,
        }


def validate_generator(
    g: Generator,
    n: int = 1,
    sample_count: int = 4096,
    box: float = 5.0,
    T: float = 1.0,
    seed: int = 0,
    tol: float = 1e-12,
) -> ValidationReport:
    """Sampled check of (A2), the (A1) domination bound and, if declared, (H2).

    Pairs ``(z, z')`` come from a scrambled Sobol sequence on ``[-box, box]^{2n}``;
    times from ``[0, T]``.  Violations are relative to ``1 + |rhs|``.
    """
    sob = qmc.Sobol(d=2 * n + 2, scramble=True, seed=seed)
    u = sob.random(sample_count)
    ts = u[:, 0] * T
    z1 = (2 * u[:, 1 : 1 + n] - 1) * box
    z2 = (2 * u[:, 1 + n : 1 + 2 * n] - 1) * box
    lam = 4.0 * u[:, -1]

    g1 = np.array([g(t, z) for t, z in zip(ts, z1)])
    g2 = np.array([g(t, z) for t, z in zip(ts, z2)])
    g0 = np.array([g(t, np.zeros(n)) for t in ts])

    bound = g.phi_slope * np.linalg.norm(z1 - z2, axis=1)
    excess = (np.abs(g1 - g2) - bound) / (1.0 + bound)
    homog = None
    if g.positively_homogeneous:
        gl = np.array([g(t, l * z) for t, l, z in zip(ts, lam, z1)])
        homog = float(np.max(np.abs(gl - lam * g1) / (1.0 + np.abs(lam * g1))))
    return ValidationReport(
        zero_at_zero=float(np.max(np.abs(g0))),
        lipschitz_excess=float(max(np.max(excess), 0.0)),
        homogeneity_error=homog,
        tol=tol,
    )
