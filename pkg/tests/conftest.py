import copy
import functools

import pytest
from importlib import resources

from geum.bsde import RegressionBackend, solve_backward
from geum.config import Scenario, load_config
from geum.market import simulate_ensemble


@functools.lru_cache(maxsize=None)
def _bundled(name):
    return load_config(name).raw


def solved(name, M=5000, N=20, seed=None, **overrides):
    """Problem, ensemble and regression solution of a bundled scenario at reduced size."""
    raw = copy.deepcopy(_bundled(name))
    raw["solver"].update(M=M, N=N, **({"seed": seed} if seed is not None else {}))
    for section, block in overrides.items():
        raw.setdefault(section, {}).update(block)
    sc = Scenario.from_dict(raw, default_name=name)
    pb = sc.problem()
    ens = simulate_ensemble(sc.grid, pb.market.n, M, sc.solver["seed"])
    sol = solve_backward(pb.driver(), pb.terminal, RegressionBackend(ens, sc.solver["degree"]),
                         y_bound=pb.y_bound())
    return pb, ens, sol


@pytest.fixture(scope="session")
def build():
    return functools.lru_cache(maxsize=None)(lambda name, M=5000, N=20: solved(name, M, N))


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``record(n, passed, detail)`` stores one acceptance line for the terminal summary."""

    def record(n, passed, detail):
        _ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
