"""Scenario files: loading, schema validation and object construction."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError
from .generators import from_config as generator_from_config
from .market import IncomeSpec, MarketModel, Profile, TimeGrid
from .pointwise import ConstraintSpec, consumption_from_config, investment_from_config
from .utility import UtilityProblem

_NUM = {"type": "number"}
_PROFILE = {
    "oneOf": [
        _NUM,
        {
            "type": "object",
            "properties": {"level": _NUM, "amplitude": _NUM, "loading": {"type": "array", "items": _NUM}},
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "required": ["problem", "market", "solver"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"type": "object", "properties": {"name": {"type": "string"}}},
        "problem": {
            "type": "object",
            "required": ["utility"],
            "additionalProperties": False,
            "properties": {
                "utility": {"enum": ["exponential", "power", "log"]},
                "gamma": _NUM,
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "delta": _NUM,
                "x0": _NUM,
            },
        },
        "market": {
            "type": "object",
            "required": ["r", "mu", "sigma"],
            "additionalProperties": False,
            "properties": {
                "r": {"type": "number", "minimum": 0},
                "mu": {"type": "array", "items": _NUM, "minItems": 1},
                "sigma": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 1}, "minItems": 1},
                "theta_bound": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "income": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["absolute", "fractional"]},
                "rate": _PROFILE,
                "terminal": _PROFILE,
            },
        },
        "generator": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "linear", "kappa"]},
                "eta": {"type": "array", "items": _NUM},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "phi_slope": {"type": "number", "minimum": 0},
            },
        },
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "investment": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["unconstrained", "box", "ball", "halfspace", "union"]},
                        "lower": {"oneOf": [_NUM, {"type": "array", "items": _NUM}]},
                        "upper": {"oneOf": [_NUM, {"type": "array", "items": _NUM}]},
                        "radius": _NUM,
                        "center": {"type": "array", "items": _NUM},
                        "normal": {"type": "array", "items": _NUM},
                        "offset": _NUM,
                        "boxes": {"type": "array"},
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                "consumption": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["unconstrained", "interval", "finite"]},
                        "lower": _NUM,
                        "upper": _NUM,
                        "values": {"type": "array", "items": _NUM, "minItems": 1},
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
            },
        },
        "solver": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "N": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "degree": {"type": "integer", "minimum": 0, "maximum": 8},
                "backend": {"enum": ["regression", "tree"]},
                "y_bound": {"type": "number", "exclusiveMinimum": 0},
                "z_cap": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "strict": {"type": "boolean"},
                "perturbation": {
                    "type": "object",
                    "properties": {"eps": _NUM, "shift": {"type": "integer", "minimum": 1}},
                    "additionalProperties": False,
                },
                "payoffs": {"type": "array", "items": {"type": "string"}},
            },
        },
    },
}

SOLVER_DEFAULTS = {"T": 1.0, "N": 50, "M": 100_000, "degree": 4, "backend": "regression", "z_cap": 10.0}


def bundled_scenarios() -> list:
    root = resources.files("geum") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _read(path: str) -> tuple:
    p = Path(path)
    if not p.exists():
        name = path[:-5] if path.endswith(".toml") else path
        if name in bundled_scenarios():
            data = (resources.files("geum") / "scenarios" / f"{name}.toml").read_bytes()
            return data, "toml", name
        raise ConfigurationError(f"config file not found: {path}")
    data = p.read_bytes()
    kind = "json" if p.suffix.lower() == ".json" else "toml"
    return data, kind, p.stem


def load_config(path: str, seed: Optional[int] = None, backend: Optional[str] = None) -> "Scenario":
    """Parse, validate and apply command-line overrides."""
    data, fmt, stem = _read(path)
    try:
        raw = json.loads(data) if fmt == "json" else tomllib.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    return Scenario.from_dict(raw, seed=seed, backend=backend, source_bytes=data, default_name=stem)


def _profile(value) -> object:
    if value is None:
        return None
    if isinstance(value, dict):
        loading = tuple(value["loading"]) if "loading" in value else None
        return Profile(float(value.get("level", 0.0)), float(value.get("amplitude", 0.0)), loading)
    return float(value)


@dataclass
class Scenario:
    name: str
    raw: dict
    digest: str

    @classmethod
    def from_dict(cls, raw: dict, seed=None, backend=None, source_bytes: bytes = b"", default_name="scenario"):
        raw = copy.deepcopy(raw)
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            loc = "/".join(str(x) for x in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"schema violation at {loc}: {exc.message}") from None
        solver = {**SOLVER_DEFAULTS, **raw["solver"]}
        if seed is not None:
            solver["seed"] = int(seed)
        if backend is not None:
            solver["backend"] = backend
        raw["solver"] = solver
        name = raw.get("scenario", {}).get("name", default_name)
        digest = hashlib.sha256(source_bytes).hexdigest()
        scen = cls(name, raw, digest)
        scen.problem()  # surface domain errors before any output is written
        return scen

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    @property
    def solver(self) -> dict:
        return self.raw["solver"]

    @property
    def run(self) -> dict:
        return self.raw.get("run", {})

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(float(self.solver["T"]), int(self.solver["N"]))

    def market(self) -> MarketModel:
        m = self.raw["market"]
        return MarketModel(
            r=float(m["r"]), mu=np.asarray(m["mu"], float), sigma=np.asarray(m["sigma"], float),
            theta_bound=float(m.get("theta_bound", np.inf)),
        )

    def problem(self) -> UtilityProblem:
        pb = self.raw["problem"]
        kind = pb["utility"]
        market = self.market()
        n = market.n
        inc = self.raw.get("income", {})
        mode = inc.get("mode", "absolute" if kind == "exponential" else "fractional")
        income = IncomeSpec(mode, _profile(inc.get("rate", 0.0)), _profile(inc.get("terminal")))
        cons = self.raw.get("constraints", {})
        constraints = ConstraintSpec(investment_from_config(cons.get("investment"), n),
                                     consumption_from_config(cons.get("consumption")))
        gen = generator_from_config(self.raw.get("generator", {"kind": "zero"}))
        return UtilityProblem(
            kind=kind, market=market, T=float(self.solver["T"]), gamma=pb.get("gamma"),
            alpha=float(pb.get("alpha", 1.0)), beta=float(pb.get("beta", 1.0)),
            delta=float(pb.get("delta", 0.0)), x0=float(pb.get("x0", 1.0)),
            income=income, constraints=constraints, generator=gen,
        )
